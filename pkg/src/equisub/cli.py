"""Command-line front end.

Subcommands: match (matching equilibrium), invert (demand inversion),
estimate (mle / gmm), check (structure probes).  Each reads a JSON config,
writes CSV results plus a JSON report with a schema_version field, and
maps failures onto exit codes: 1 config error, 2 solver or optimizer
failure, 3 failed diagnostics.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import demand as dm
from . import diagnostics as dg
from . import estimation as est
from . import matching as mt
from . import normalization as nm
from .errors import (
    BracketNotFound,
    EquisubError,
    MaxIterExceeded,
    MCNonMonotone,
    NoBracket,
    OptimizerStalled,
    SingularConstraintJacobian,
    SingularWeight,
)
from .solver import SolverOptions

SCHEMA_VERSION = 1

SOLVER_ERRORS = (
    NoBracket,
    MaxIterExceeded,
    BracketNotFound,
    OptimizerStalled,
    MCNonMonotone,
    SingularConstraintJacobian,
    SingularWeight,
)


class ConfigError(Exception):
    pass


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _norm_from_config(cfg, dim):
    kind = cfg.get("kind", "coordinate")
    if kind == "coordinate":
        return nm.coordinate(int(cfg.get("index", 0)))
    if kind == "mean":
        return nm.mean()
    if kind == "max":
        return nm.max_coordinate()
    if kind == "min":
        return nm.min_coordinate()
    raise ConfigError(f"unknown normalization kind {kind!r}")


def _opts_from_config(cfg):
    tol = cfg.get("tolerances", {})
    return SolverOptions(
        tol_outer=float(tol.get("outer", 1e-9)),
        tol_inner=float(tol.get("inner", 1e-12)),
        tol_bracket=float(tol.get("bracket", 1e-9)),
    )


def _write_report(out_dir, name, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    out = Path(out_dir) / name
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_market_csv(path):
    rows = []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if not rows:
        raise ConfigError(f"empty market file {path}")
    xs = sorted({int(r["x"]) for r in rows})
    ys = sorted({int(r["y"]) for r in rows})
    X, Y = len(xs), len(ys)
    has_phi = "phi" in rows[0]
    phi = np.full((X, Y), np.nan) if has_phi else None
    alpha = None if has_phi else np.full((X, Y), np.nan)
    gamma = None if has_phi else np.full((X, Y), np.nan)
    for r in rows:
        i, j = xs.index(int(r["x"])), ys.index(int(r["y"]))
        if has_phi:
            phi[i, j] = float(r["phi"])
        else:
            alpha[i, j] = float(r["alpha"])
            gamma[i, j] = float(r["gamma"])
    for tbl in (phi, alpha, gamma):
        if tbl is not None and np.any(np.isnan(tbl)):
            raise ConfigError("market file misses some (x, y) pairs")
    return xs, ys, phi, alpha, gamma


def _read_masses_csv(path, xs, ys):
    n = np.full(len(xs), np.nan)
    m = np.full(len(ys), np.nan)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            side = row["side"].strip().lower()
            t = int(row["type"])
            if side == "x":
                n[xs.index(t)] = float(row["mass"])
            elif side == "y":
                m[ys.index(t)] = float(row["mass"])
            else:
                raise ConfigError(f"unknown side {row['side']!r}")
    if np.any(np.isnan(n)) or np.any(np.isnan(m)):
        raise ConfigError("masses file misses some types")
    return n, m


def _family_from_config(cfg, phi, alpha, gamma):
    kind = cfg["kind"].upper()
    if kind == "TU":
        if alpha is not None:
            return mt.tu_family(alpha=alpha, gamma=gamma)
        return mt.tu_family(phi=phi)
    if kind == "NTU":
        if phi is None:
            phi = alpha + gamma
        return mt.ntu_family(phi)
    if kind == "ETU":
        if alpha is None:
            raise ConfigError("ETU needs alpha and gamma columns")
        return mt.etu_family(alpha, gamma)
    raise ConfigError(f"unsupported family kind {cfg['kind']!r}")


def cmd_match(cfg, out_dir, args):
    xs, ys, phi, alpha, gamma = _read_market_csv(cfg["market_csv"])
    n, m = _read_masses_csv(cfg["masses_csv"], xs, ys)
    fam = _family_from_config(cfg.get("family", {"kind": "TU"}), phi, alpha, gamma)
    prim = mt.MarketPrimitives(family=fam, n=n, m=m)
    norm = _norm_from_config(cfg.get("normalization", {}), len(xs) + len(ys))
    K = float(cfg.get("K", 0.0))
    opts = _opts_from_config(cfg)
    eq = mt.solve_mfe(prim, norm, K, opts)

    transfers = None
    if fam.kind != "NTU" and fam.alpha is not None:
        transfers = mt.recover_transfers(fam, eq)

    with open(Path(out_dir) / "equilibrium.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y", "mu"] + (["w"] if transfers is not None else [])
        writer.writerow(header)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                row = [x, y, f"{eq.mu[i, j]:.12g}"]
                if transfers is not None:
                    row.append(f"{transfers[i, j]:.12g}")
                writer.writerow(row)

    _write_report(
        out_dir,
        "report.json",
        {
            "command": "match",
            "a": eq.a.tolist(),
            "b": eq.b.tolist(),
            "K": K,
            "family": fam.kind,
            "residual": eq.report.residual,
            "iterations": eq.report.iterations,
            "outer_solves": eq.report.outer_solves,
        },
    )
    return 0


def _model_from_config(cfg, dim, seed):
    fam = cfg.get("family", "logit")
    R = int(cfg.get("R", 100_000))
    seed = int(cfg.get("seed", seed if seed is not None else 0))
    if fam == "logit":
        return dm.logit_model(dim)
    if fam == "logit-mc":
        return dm.logit_mc_model(dim, R, seed)
    if fam == "rc-logit":
        return dm.rc_logit_model(np.asarray(cfg["x"], dtype=float), np.asarray(cfg["sigmas"], dtype=float), R, seed)
    if fam == "pure-characteristics":
        return dm.pure_characteristics_model(np.asarray(cfg["x"], dtype=float), R, seed)
    if fam == "bridge":
        return dm.bridge_model(np.asarray(cfg["tolls"], dtype=float), R, seed)
    raise ConfigError(f"unknown demand family {fam!r}")


def _read_shares_csv(path):
    goods, values = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            goods.append(row["good"])
            values.append(float(row["share"]))
    return goods, np.asarray(values)


def cmd_invert(cfg, out_dir, args):
    goods, s = _read_shares_csv(cfg["shares_csv"])
    model = _model_from_config(cfg.get("model", {}), s.size, args.seed)
    norm = _norm_from_config(cfg.get("normalization", {}), s.size)
    K = float(cfg.get("K", 0.0))
    opts = _opts_from_config(cfg) if "tolerances" in cfg else None
    result = dm.invert_demand(model, s, norm, K, opts)

    with open(Path(out_dir) / "deltas.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["good", "delta"])
        for g, dlt in zip(goods, result.delta):
            writer.writerow([g, f"{dlt:.12g}"])

    _write_report(
        out_dir,
        "report.json",
        {
            "command": "invert",
            "K": K,
            "model": model.label,
            "residual": result.report.residual,
            "iterations": result.report.iterations,
            "normalization_value": result.report.normalization_value,
        },
    )
    return 0


def _read_matches_csv(path):
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["x"]), int(row["y"]), float(row["count"])))
    xs = sorted({r[0] for r in rows})
    ys = sorted({r[1] for r in rows})
    mu = np.zeros((len(xs), len(ys)))
    for x, y, c in rows:
        mu[xs.index(x), ys.index(y)] = c
    return mu


def cmd_estimate(cfg, out_dir, args):
    mode = cfg.get("mode", "mle")
    norm = _norm_from_config(cfg.get("normalization", {}), 0)
    K = float(cfg.get("K", 0.0))
    theta0 = np.asarray(cfg.get("theta0", [0.0]), dtype=float)

    if mode == "mle":
        mu_hat = _read_matches_csv(cfg["matches_csv"])
        sp = cfg["spec"]
        kind = sp.get("kind", "TU").upper()
        if kind == "TU":
            spec = est.tu_surplus_spec(
                np.asarray(sp.get("phi0", np.zeros_like(mu_hat).tolist()), dtype=float),
                np.asarray(sp["basis"], dtype=float),
            )
        elif kind == "ETU":
            spec = est.ThetaSpec(
                kind="ETU",
                alpha0=np.asarray(sp.get("alpha0", np.zeros_like(mu_hat).tolist()), dtype=float),
                gamma0=np.asarray(sp.get("gamma0", np.zeros_like(mu_hat).tolist()), dtype=float),
                alpha_basis=np.asarray(sp["alpha_basis"], dtype=float),
                gamma_basis=np.asarray(sp["gamma_basis"], dtype=float),
            )
        else:
            raise ConfigError(f"unsupported spec kind {kind!r}")
        result = est.mle_nested(spec, mu_hat, norm, K, theta0, _opts_from_config(cfg))
        _write_report(
            out_dir,
            "report.json",
            {
                "command": "estimate",
                "mode": "mle",
                "theta": result.theta.tolist(),
                "loglik": result.loglik,
                "gradient_norm": result.gradient_norm,
                "iterations": result.iterations,
            },
        )
        return 0

    if mode == "gmm":
        data = []
        with open(cfg["data_csv"]) as fh:
            for row in csv.DictReader(fh):
                data.append((row["good"], float(row["share"]), float(row["x1"]), float(row["x2"]), float(row["y"])))
        s = np.array([r[1] for r in data])
        x1 = np.array([r[2] for r in data])
        x2 = np.array([r[3] for r in data])
        y = np.array([r[4] for r in data])
        model = _model_from_config(cfg.get("model", {}), s.size, args.seed)
        gfam = dm.linear_g()
        result = est.gmm_nested(model, s, x1, x2, y, gfam, norm, K, theta0)
        _write_report(
            out_dir,
            "report.json",
            {
                "command": "estimate",
                "mode": "gmm",
                "theta": result.theta.tolist(),
                "objective": result.value,
                "moments": result.moments.tolist(),
            },
        )
        return 0

    raise ConfigError(f"unknown estimation mode {mode!r}")


def cmd_check(cfg, out_dir, args):
    target = cfg.get("target", "matching")
    if target == "matching":
        xs, ys, phi, alpha, gamma = _read_market_csv(cfg["market_csv"])
        n, m = _read_masses_csv(cfg["masses_csv"], xs, ys)
        fam = _family_from_config(cfg.get("family", {"kind": "TU"}), phi, alpha, gamma)
        prim = mt.MarketPrimitives(family=fam, n=n, m=m)
        system, q = mt.build_mfe_system(prim)
    elif target == "demand":
        goods, s = _read_shares_csv(cfg["shares_csv"])
        model = _model_from_config(cfg.get("model", {}), s.size, args.seed)
        system = dm.build_demand_system(model)
        q = s
    else:
        raise ConfigError(f"unknown check target {target!r}")

    seed = int(args.seed if args.seed is not None else 0)
    checks = cfg.get(
        "checks",
        ["weak_substitutes", "pivotal_substitutes", "responsiveness"],
    )
    reports = []
    for name in checks:
        if name == "weak_substitutes":
            rep = dg.check_weak_substitutes(system, seed=seed)
        elif name == "pivotal_substitutes":
            rep = dg.check_pivotal_substitutes(system, q, seed=seed)
        elif name == "responsiveness":
            rep = dg.check_responsiveness(system, q, seed=seed)
        elif name == "connected_strict_substitutes":
            rep = dg.check_connected_strict_substitutes(system, seed=seed)
        elif name == "utility_regularity":
            if target != "demand":
                raise ConfigError("utility_regularity applies to demand targets only")
            grid = cfg.get("delta_grid")
            rep = dm.check_utility_regularity(
                model, delta_grid=None if grid is None else np.asarray(grid, dtype=float)
            )
        else:
            raise ConfigError(f"unknown check {name!r}")
        reports.append(rep)

    _write_report(
        out_dir,
        "report.json",
        {
            "command": "check",
            "target": target,
            "results": [
                {
                    "property": r.property_name,
                    "passed": r.passed,
                    "samples": r.samples_tested,
                    "violations": len(r.violations),
                }
                for r in reports
            ],
        },
    )
    if any(not r.passed for r in reports):
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="equisub", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("match", cmd_match),
        ("invert", cmd_invert),
        ("estimate", cmd_estimate),
        ("check", cmd_check),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=fn)

    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        code = args.func(cfg, args.out, args)
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except EquisubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        print(f"{args.command}: done (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
