"""Price normalizations: scalar maps with the unit translation property.

A normalization psi satisfies psi(p + t*1) = psi(p) + t, is nondecreasing
in every coordinate, and pins down the one remaining degree of freedom of
a balanced system through psi(p) = K.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import NoBracket, NotDiagonallyStrict


@dataclass(frozen=True)
class Normalization:
    """Scalar normalization map with optional gradient.

    kind is a tuple tag, e.g. ("coordinate", 2), ("mean",), ("custom",).
    value_range is the open interval of attainable levels K.
    """

    eval_fn: Callable[[np.ndarray], float]
    kind: tuple = ("custom",)
    value_range: Tuple[float, float] = (-np.inf, np.inf)
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, p: np.ndarray) -> float:
        return float(self.eval_fn(np.asarray(p, dtype=float)))

    def grad(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(p), dtype=float)
        # central differences fallback
        h = 1e-6
        g = np.empty_like(p)
        for i in range(p.size):
            e = np.zeros_like(p)
            e[i] = h
            g[i] = (self.eval_fn(p + e) - self.eval_fn(p - e)) / (2 * h)
        return g


def coordinate(index: int, value_range=(-np.inf, np.inf)) -> Normalization:
    """psi(p) = p[index]."""

    def _grad(p):
        g = np.zeros_like(p)
        g[index] = 1.0
        return g

    return Normalization(
        eval_fn=lambda p: float(p[index]),
        kind=("coordinate", index),
        value_range=value_range,
        grad_fn=_grad,
    )


def mean(value_range=(-np.inf, np.inf)) -> Normalization:
    """psi(p) = average of the coordinates.

    The plain sum scales the translation by the dimension and so fails the
    unit translation property; the average is the corrected version.  A sum
    convention can still be obtained through renormalize().
    """

    return Normalization(
        eval_fn=lambda p: float(np.mean(p)),
        kind=("mean",),
        value_range=value_range,
        grad_fn=lambda p: np.full_like(p, 1.0 / p.size),
    )


def max_coordinate(value_range=(-np.inf, np.inf)) -> Normalization:
    """psi(p) = max coordinate (gradient: one-hot at the argmax)."""

    def _grad(p):
        g = np.zeros_like(p)
        g[int(np.argmax(p))] = 1.0
        return g

    return Normalization(
        eval_fn=lambda p: float(np.max(p)),
        kind=("max",),
        value_range=value_range,
        grad_fn=_grad,
    )


def min_coordinate(value_range=(-np.inf, np.inf)) -> Normalization:
    """psi(p) = min coordinate."""

    def _grad(p):
        g = np.zeros_like(p)
        g[int(np.argmin(p))] = 1.0
        return g

    return Normalization(
        eval_fn=lambda p: float(np.min(p)),
        kind=("min",),
        value_range=value_range,
        grad_fn=_grad,
    )


def renormalize(
    raw: Callable[[np.ndarray], float],
    tol: float = 1e-12,
    max_expansions: int = 64,
    flat_probe: float = 1e-3,
) -> Normalization:
    """Turn a raw scalar map into a proper normalization.

    The returned psi(p) is the root t of raw(p - t*1) = 0, located by
    bracketed bisection along the diagonal.  If raw is nondecreasing
    coordinatewise then t -> raw(p - t*1) is nonincreasing; psi inherits
    monotonicity and gains the exact unit translation property, and
    psi(p) = 0 exactly on the zero set of raw.

    Raises NotDiagonallyStrict when raw is flat along the diagonal either
    globally (no bracket) or on an interval around its root.
    """

    def _eval(p):
        p = np.asarray(p, dtype=float)

        def h(t):
            return float(raw(p - t * np.ones_like(p)))

        lo, hi = 0.0, 0.0
        f0 = h(0.0)
        step = 1.0
        if f0 > 0:
            # root lies above: h decreasing in t
            lo = 0.0
            hi = step
            n = 0
            while h(hi) > 0:
                n += 1
                if n > max_expansions:
                    if abs(h(hi) - f0) <= tol:
                        raise NotDiagonallyStrict(
                            "raw map is flat along the diagonal"
                        )
                    raise NoBracket("could not bracket the renormalization root")
                lo = hi
                step *= 2.0
                hi += step
        elif f0 < 0:
            hi = 0.0
            lo = -step
            n = 0
            while h(lo) < 0:
                n += 1
                if n > max_expansions:
                    if abs(h(lo) - f0) <= tol:
                        raise NotDiagonallyStrict(
                            "raw map is flat along the diagonal"
                        )
                    raise NoBracket("could not bracket the renormalization root")
                hi = lo
                step *= 2.0
                lo -= step
        else:
            lo = hi = 0.0

        if hi > lo:
            # leftmost root: keep the invariant h(lo) > 0 >= h(hi)
            while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
                mid = 0.5 * (lo + hi)
                if h(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            root = hi
        else:
            root = 0.0

        # flat-at-root detection: a strictly decreasing diagonal section has
        # h > 0 just left of the root and h < 0 just right of it
        if h(root + flat_probe) >= 0.0 or h(root - flat_probe) <= 0.0:
            raise NotDiagonallyStrict("raw map is flat on an interval at its root")
        return root

    return Normalization(eval_fn=_eval, kind=("custom",))
