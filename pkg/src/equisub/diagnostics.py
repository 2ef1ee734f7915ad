"""Sampling-based structure checks and a brute-force grid reference solver.

The check_* functions probe a system on random points and report
violations; they never raise on a failed property.  brute_force_solve is a
slow grid-scan oracle used to cross-check the fast solvers on tiny
problems.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import GridTooLarge
from .system import SupplySystem

DEFAULT_BOX = 5.0
PROBE_MAGNITUDES = (10.0, 20.0, 40.0)


@dataclass
class PropertyReport:
    property_name: str
    samples_tested: int
    violations: List[dict] = field(default_factory=list)
    notes: str = ""

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class GridSpec:
    lows: np.ndarray
    highs: np.ndarray
    step: float
    cap: int = 2_000_000

    def axis(self, i: int) -> np.ndarray:
        return np.arange(self.lows[i], self.highs[i] + 0.5 * self.step, self.step)


def _sample_box(system: SupplySystem, rng: np.random.Generator, n: int, box=None) -> np.ndarray:
    """Uniform draws over the user box intersected with the open bound box."""
    if box is None:
        box = (-DEFAULT_BOX, DEFAULT_BOX)
    elif np.isscalar(box):
        box = (-float(box), float(box))
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (system.dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (system.dim,))
    lo = np.maximum(lo, np.where(np.isfinite(system.bounds.lower), system.bounds.lower + 1e-6, -np.inf))
    hi = np.minimum(hi, np.where(np.isfinite(system.bounds.upper), system.bounds.upper - 1e-6, np.inf))
    return rng.uniform(lo, hi, size=(n, system.dim))


def _clip_inside(system: SupplySystem, p: np.ndarray) -> np.ndarray:
    lo = np.where(np.isfinite(system.bounds.lower), system.bounds.lower + 1e-9, -np.inf)
    hi = np.where(np.isfinite(system.bounds.upper), system.bounds.upper - 1e-9, np.inf)
    return np.clip(p, lo, hi)


def check_weak_substitutes(
    system: SupplySystem,
    samples: int = 200,
    seed: int = 0,
    tol: float = 1e-8,
    bump: float = 0.5,
    box=None,
) -> PropertyReport:
    """Own coordinate nondecreasing, cross coordinates nonincreasing."""
    rng = np.random.default_rng(seed)
    rep = PropertyReport("weak_substitutes", samples)
    pts = _sample_box(system, rng, samples, box)
    for p in pts:
        z = int(rng.integers(system.dim))
        p2 = p.copy()
        p2[z] = min(p[z] + bump, system.bounds.upper[z] - 1e-9)
        if p2[z] <= p[z]:
            continue
        q1 = np.asarray(system.eval_fn(p), dtype=float)
        q2 = np.asarray(system.eval_fn(p2), dtype=float)
        if q2[z] < q1[z] - tol:
            rep.violations.append(
                {"kind": "own_decreasing", "coordinate": z, "p": p.tolist(), "drop": float(q1[z] - q2[z])}
            )
        others = np.delete(np.arange(system.dim), z)
        rises = q2[others] - q1[others]
        bad = others[rises > tol]
        for y in bad:
            rep.violations.append(
                {"kind": "cross_increasing", "coordinate": int(y), "moved": z, "p": p.tolist(), "rise": float(q2[y] - q1[y])}
            )
    return rep


def check_pivotal_substitutes(
    system: SupplySystem,
    q: np.ndarray,
    samples: int = 50,
    seed: int = 0,
    tol: float = 1e-8,
    magnitudes: Sequence[float] = PROBE_MAGNITUDES,
    box=None,
) -> PropertyReport:
    """Pushing off-subset prices to either extreme moves the subset aggregate
    strictly past its target."""
    rng = np.random.default_rng(seed)
    q = np.asarray(q, dtype=float)
    rep = PropertyReport("pivotal_substitutes", samples)
    pts = _sample_box(system, rng, samples, box)
    for p in pts:
        size = int(rng.integers(1, system.dim))  # proper nonempty subset
        X = rng.choice(system.dim, size=size, replace=False)
        comp = np.setdiff1d(np.arange(system.dim), X)
        target = q[X].sum()

        below = False
        above = False
        for T in magnitudes:
            hi_p = p.copy()
            hi_p[comp] = T
            hi_p = _clip_inside(system, hi_p)
            if np.asarray(system.eval_fn(hi_p), dtype=float)[X].sum() < target - tol:
                below = True
            lo_p = p.copy()
            lo_p[comp] = -T
            lo_p = _clip_inside(system, lo_p)
            if np.asarray(system.eval_fn(lo_p), dtype=float)[X].sum() > target + tol:
                above = True
            if below and above:
                break
        if not (below and above):
            rep.violations.append(
                {
                    "subset": [int(i) for i in X],
                    "p": p.tolist(),
                    "pushed_below": below,
                    "pushed_above": above,
                }
            )
    return rep


def check_responsiveness(
    system: SupplySystem,
    q: np.ndarray,
    samples: int = 50,
    seed: int = 0,
    tol: float = 1e-8,
    magnitudes: Sequence[float] = PROBE_MAGNITUDES,
    box=None,
) -> PropertyReport:
    """Each coordinate map crosses its target as its own price sweeps the
    probe ladder; records the crossing bracket when found."""
    rng = np.random.default_rng(seed)
    q = np.asarray(q, dtype=float)
    rep = PropertyReport("responsiveness", samples)
    pts = _sample_box(system, rng, samples, box)
    for p in pts:
        z = int(rng.integers(system.dim))
        exceeded = None
        undershot = None
        for T in magnitudes:
            up = p.copy()
            up[z] = T
            up = _clip_inside(system, up)
            if np.asarray(system.eval_fn(up), dtype=float)[z] > q[z] + tol and exceeded is None:
                exceeded = float(up[z])
            dn = p.copy()
            dn[z] = -T
            dn = _clip_inside(system, dn)
            if np.asarray(system.eval_fn(dn), dtype=float)[z] < q[z] - tol and undershot is None:
                undershot = float(dn[z])
            if exceeded is not None and undershot is not None:
                break
        if exceeded is None or undershot is None:
            rep.violations.append(
                {
                    "coordinate": z,
                    "p": p.tolist(),
                    "crosses_above": exceeded is not None,
                    "crosses_below": undershot is not None,
                }
            )
        else:
            rep.notes = "crossing brackets recorded"
    return rep


def check_connected_strict_substitutes(
    system: SupplySystem,
    samples: int = 200,
    seed: int = 0,
    tol_strict: float = 1e-10,
    bump: float = 0.5,
    box=None,
) -> PropertyReport:
    """Raising all prices off a proper subset must strictly lower the subset
    aggregate; decoupled (block) systems fail this when the subset is a block.

    The joint raise is the operative form: individual cross effects are
    allowed to be zero (and are, e.g., within one side of a two-sided
    market), as long as the substitution graph leaves no subset isolated.
    """
    rng = np.random.default_rng(seed)
    rep = PropertyReport("connected_strict_substitutes", samples)
    pts = _sample_box(system, rng, samples, box)
    for p in pts:
        size = int(rng.integers(1, system.dim))
        X = rng.choice(system.dim, size=size, replace=False)
        comp = np.setdiff1d(np.arange(system.dim), X)
        # raise every off-subset coordinate together
        p2 = p.copy()
        p2[comp] = np.minimum(p[comp] + bump, system.bounds.upper[comp] - 1e-9)
        if not np.any(p2[comp] > p[comp]):
            continue
        agg1 = np.asarray(system.eval_fn(p), dtype=float)[X].sum()
        agg2 = np.asarray(system.eval_fn(p2), dtype=float)[X].sum()
        if not (agg2 < agg1 - tol_strict):
            rep.violations.append(
                {
                    "subset": [int(i) for i in X],
                    "raised": [int(i) for i in comp],
                    "p": p.tolist(),
                    "drop": float(agg1 - agg2),
                }
            )
    return rep


def brute_force_solve(
    system: SupplySystem,
    q: np.ndarray,
    pin: int,
    pin_value: float,
    grid: GridSpec,
) -> Tuple[np.ndarray, float]:
    """Grid-scan reference solver: minimize the sup-norm residual of
    Q(p) = q over a rectangular grid on the non-pinned coordinates.

    Returns (best point, best residual).  Intended for cross-checking on
    problems with at most a few free coordinates; raises GridTooLarge when
    the grid exceeds its cap.
    """
    q = np.asarray(q, dtype=float)
    free = [z for z in range(system.dim) if z != pin]
    axes = [grid.axis(i) for i in range(len(free))]
    n_points = int(np.prod([a.size for a in axes]))
    if n_points > grid.cap:
        raise GridTooLarge(f"{n_points} grid points exceeds cap {grid.cap}")

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)  # (N, n_free)
    P = np.empty((n_points, system.dim))
    P[:, pin] = pin_value
    for j, z in enumerate(free):
        P[:, z] = pts[:, j]

    if system.eval_batch is not None:
        Q = np.asarray(system.eval_batch(P), dtype=float)
        res = np.max(np.abs(Q - q[None, :]), axis=1)
        best = int(np.argmin(res))
        return P[best], float(res[best])

    best_res = np.inf
    best_p = None
    for row in P:
        res = float(np.max(np.abs(np.asarray(system.eval_fn(row), dtype=float) - q)))
        if res < best_res:
            best_res = res
            best_p = row.copy()
    return best_p, best_res
