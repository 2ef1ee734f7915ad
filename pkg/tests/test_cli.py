"""End-to-end command-line runs against temporary data files."""
import csv
import json

import numpy as np
import pytest

from equisub import normalization as nz
from equisub.cli import main
from equisub.estimation import predicted_frequencies, tu_surplus_spec

LN2 = np.log(2.0)


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


def write_market(tmp_path, phi):
    rows = [(x, y, phi[x][y]) for x in range(len(phi)) for y in range(len(phi[0]))]
    return write_csv(tmp_path / "market.csv", ["x", "y", "phi"], rows)


def write_masses(tmp_path, n, m):
    rows = [("x", i, v) for i, v in enumerate(n)] + [("y", j, v) for j, v in enumerate(m)]
    return write_csv(tmp_path / "masses.csv", ["side", "type", "mass"], rows)


def read_report(out_dir):
    with open(out_dir / "report.json") as fh:
        return json.load(fh)


# ----------------------------------------------------------------------
# match


def test_match_symmetric_market(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {
        "market_csv": write_market(tmp_path, [[0.0, 0.0], [0.0, 0.0]]),
        "masses_csv": write_masses(tmp_path, [1.0, 1.0], [1.0, 1.0]),
        "family": {"kind": "TU"},
        "normalization": {"kind": "max"},
        "K": 0.0,
    })
    out = tmp_path / "out"
    assert main(["match", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "equilibrium.csv") as fh:
        mu = [float(r["mu"]) for r in csv.DictReader(fh)]
    assert len(mu) == 4
    assert np.allclose(mu, 0.5, atol=1e-7)
    rep = read_report(out)
    assert rep["schema_version"] == 1
    assert rep["residual"] <= 1e-8


def test_match_unbalanced_masses_is_config_failure(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {
        "market_csv": write_market(tmp_path, [[0.0, 0.0], [0.0, 0.0]]),
        "masses_csv": write_masses(tmp_path, [1.0, 2.0], [1.0, 1.0]),
    })
    assert main(["match", "--config", cfg, "--out", str(tmp_path / "out")]) == 1


# ----------------------------------------------------------------------
# invert


def invert_config(tmp_path, shares, **extra):
    rows = [(f"g{i}", s) for i, s in enumerate(shares)]
    payload = {
        "shares_csv": write_csv(tmp_path / "shares.csv", ["good", "share"], rows),
        "model": {"family": "logit"},
        "normalization": {"kind": "coordinate", "index": 0},
        "K": 0.0,
    }
    payload.update(extra)
    return write_json(tmp_path / "cfg.json", payload)


def test_invert_logit_shares(tmp_path):
    cfg = invert_config(tmp_path, [0.5, 0.25, 0.25])
    out = tmp_path / "out"
    assert main(["invert", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "deltas.csv") as fh:
        deltas = [float(r["delta"]) for r in csv.DictReader(fh)]
    assert np.allclose(deltas, [0.0, -LN2, -LN2], atol=1e-8)


def test_invert_rejects_incomplete_shares(tmp_path):
    cfg = invert_config(tmp_path, [0.5, 0.2, 0.2])  # sums to 0.9
    assert main(["invert", "--config", cfg, "--out", str(tmp_path / "out")]) == 1


def test_invert_deterministic_output(tmp_path):
    cfg = invert_config(tmp_path, [0.5, 0.25, 0.25])
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["invert", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["invert", "--config", cfg, "--out", str(out2)]) == 0
    assert (out1 / "deltas.csv").read_text() == (out2 / "deltas.csv").read_text()
    r1, r2 = read_report(out1), read_report(out2)
    r1.pop("timestamp")
    r2.pop("timestamp")
    assert r1 == r2


# ----------------------------------------------------------------------
# estimate


def planted_matches(tmp_path, theta0=0.7, total=1000.0):
    spec = tu_surplus_spec(np.zeros((2, 2)), np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    Pi, _ = predicted_frequencies(
        spec, np.array([theta0]), np.ones(2), np.ones(2), nz.mean(), 0.0
    )
    mu = total * Pi
    rows = [(x, y, mu[x, y]) for x in range(2) for y in range(2)]
    return write_csv(tmp_path / "matches.csv", ["x", "y", "count"], rows)


def test_estimate_mle_recovers_parameter(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {
        "mode": "mle",
        "matches_csv": planted_matches(tmp_path),
        "spec": {"kind": "TU", "basis": [[[1.0, 0.0], [0.0, 1.0]]]},
        "normalization": {"kind": "mean"},
        "K": 0.0,
        "theta0": [0.0],
    })
    out = tmp_path / "out"
    assert main(["estimate", "--config", cfg, "--out", str(out)]) == 0
    rep = read_report(out)
    assert abs(rep["theta"][0] - 0.7) <= 1e-6


def test_estimate_flat_likelihood_is_solver_failure(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {
        "mode": "mle",
        "matches_csv": planted_matches(tmp_path, theta0=0.0),
        "spec": {"kind": "TU", "basis": [[[1.0, 1.0], [1.0, 1.0]]]},
        "normalization": {"kind": "mean"},
        "theta0": [0.2],
    })
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path / "out")]) == 2


def test_estimate_gmm_noiseless(tmp_path):
    theta0 = 1.5
    rng = np.random.default_rng(23)
    Z = 30
    x2 = rng.uniform(0.5, 2.0, size=Z)
    y = x2 + rng.normal(0.0, 0.2, size=Z)
    x1 = rng.normal(0.0, 0.5, size=Z)
    delta = x1 - theta0 * x2
    s = np.exp(delta) / np.exp(delta).sum()
    rows = [
        (f"g{i}", s[i], x1[i], x2[i], y[i])
        for i in range(Z)
    ]
    cfg = write_json(tmp_path / "cfg.json", {
        "mode": "gmm",
        "data_csv": write_csv(
            tmp_path / "data.csv", ["good", "share", "x1", "x2", "y"], rows
        ),
        "model": {"family": "logit"},
        "normalization": {"kind": "mean"},
        "K": float(np.mean(delta)),
        "theta0": [0.0],
    })
    out = tmp_path / "out"
    assert main(["estimate", "--config", cfg, "--out", str(out)]) == 0
    rep = read_report(out)
    assert abs(rep["theta"][0] - theta0) <= 1e-6
    assert np.max(np.abs(rep["moments"])) <= 1e-6


# ----------------------------------------------------------------------
# check


def test_check_logit_demand_passes(tmp_path):
    cfg = invert_config(tmp_path, [0.5, 0.25, 0.25], target="demand")
    out = tmp_path / "out"
    assert main(["check", "--config", cfg, "--out", str(out)]) == 0
    rep = read_report(out)
    assert all(r["passed"] for r in rep["results"])


def test_check_bridge_regularity_fails_outside_range(tmp_path):
    rows = [("g0", 0.6), ("g1", 0.4)]
    cfg = write_json(tmp_path / "cfg.json", {
        "target": "demand",
        "shares_csv": write_csv(tmp_path / "shares.csv", ["good", "share"], rows),
        "model": {"family": "bridge", "tolls": [0.0, 1.0], "R": 500, "seed": 3},
        "checks": ["utility_regularity"],
        "delta_grid": [[0.5, 1.5]],
    })
    out = tmp_path / "out"
    assert main(["check", "--config", cfg, "--out", str(out)]) == 3
    rep = read_report(out)
    assert any(not r["passed"] for r in rep["results"])


def test_check_matching_system_passes(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {
        "target": "matching",
        "market_csv": write_market(tmp_path, [[2 * LN2, 0.0], [0.0, 2 * LN2]]),
        "masses_csv": write_masses(tmp_path, [1.0, 1.0], [1.0, 1.0]),
        "checks": [
            "weak_substitutes",
            "pivotal_substitutes",
            "responsiveness",
            "connected_strict_substitutes",
        ],
    })
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "out")]) == 0


def test_unknown_check_is_config_error(tmp_path):
    cfg = invert_config(tmp_path, [0.5, 0.5], target="demand", checks=["bogus"])
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "out")]) == 1


def test_missing_config_file(tmp_path):
    assert main(["match", "--config", str(tmp_path / "nope.json")]) == 1
