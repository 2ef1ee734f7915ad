"""Estimation layers: nested maximum likelihood, a saddle-point (KKT)
formulation solved by damped Newton, and nested moment-based estimation
for demand models.

The matching likelihood treats observed matches as multinomial draws from
the equilibrium frequencies Pi_xy(theta) = mu_xy(theta) / sum(mu(theta)),
where mu solves the accounting and normalization constraints at theta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .demand import DemandModel, GFamily, InversionResult, invert_demand, residual_xi
from .errors import (
    DimensionMismatch,
    OptimizerStalled,
    SingularConstraintJacobian,
    SingularWeight,
    ZeroPredictedCell,
)
from .matching import (
    DIST_AVERAGE,
    DistanceFamily,
    MarketPrimitives,
    MatchingEquilibrium,
    MatchingFamily,
    ntu_family,
    solve_mfe,
)
from .normalization import Normalization
from .solver import SolverOptions


# ----------------------------------------------------------------------
# parameter specifications


@dataclass(frozen=True)
class ThetaSpec:
    """Linear-in-parameters map theta -> matching family.

    For transfer families the preference tables are
    alpha(theta) = alpha0 + sum_k theta_k * alpha_basis[k] (gamma alike).
    For NTU the surplus table is phi(theta) = phi0 + sum_k theta_k * phi_basis[k].
    """

    kind: str
    alpha0: Optional[np.ndarray] = None
    gamma0: Optional[np.ndarray] = None
    phi0: Optional[np.ndarray] = None
    alpha_basis: Optional[np.ndarray] = None  # (d, X, Y)
    gamma_basis: Optional[np.ndarray] = None
    phi_basis: Optional[np.ndarray] = None
    distance: Optional[DistanceFamily] = None

    def __post_init__(self):
        if self.kind == "NTU":
            phi0 = np.asarray(self.phi0, dtype=float)
            basis = (
                np.asarray(self.phi_basis, dtype=float)
                if self.phi_basis is not None
                else np.zeros((0,) + phi0.shape)
            )
            object.__setattr__(self, "phi0", phi0)
            object.__setattr__(self, "phi_basis", basis)
            return
        shape = None
        for t in (self.alpha0, self.gamma0):
            if t is not None:
                shape = np.asarray(t).shape
        if shape is None:
            for bmat in (self.alpha_basis, self.gamma_basis):
                if bmat is not None:
                    shape = np.asarray(bmat).shape[1:]
        if shape is None:
            raise DimensionMismatch("cannot infer the table shape")
        alpha0 = (
            np.asarray(self.alpha0, dtype=float)
            if self.alpha0 is not None
            else np.zeros(shape)
        )
        gamma0 = (
            np.asarray(self.gamma0, dtype=float)
            if self.gamma0 is not None
            else np.zeros(shape)
        )
        d = 0
        for b in (self.alpha_basis, self.gamma_basis):
            if b is not None:
                d = np.asarray(b).shape[0]
        ab = (
            np.asarray(self.alpha_basis, dtype=float)
            if self.alpha_basis is not None
            else np.zeros((d,) + alpha0.shape)
        )
        gb = (
            np.asarray(self.gamma_basis, dtype=float)
            if self.gamma_basis is not None
            else np.zeros((d,) + gamma0.shape)
        )
        if ab.shape != gb.shape:
            raise DimensionMismatch("alpha and gamma bases must share a shape")
        object.__setattr__(self, "alpha0", alpha0)
        object.__setattr__(self, "gamma0", gamma0)
        object.__setattr__(self, "alpha_basis", ab)
        object.__setattr__(self, "gamma_basis", gb)

    @property
    def dim(self) -> int:
        if self.kind == "NTU":
            return self.phi_basis.shape[0]
        return self.alpha_basis.shape[0]

    @property
    def table_shape(self) -> Tuple[int, int]:
        if self.kind == "NTU":
            return self.phi0.shape
        return self.alpha0.shape

    def family(self, theta: np.ndarray) -> MatchingFamily:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "NTU":
            phi = self.phi0 + np.tensordot(theta, self.phi_basis, axes=1)
            return ntu_family(phi)
        alpha = self.alpha0 + np.tensordot(theta, self.alpha_basis, axes=1)
        gamma = self.gamma0 + np.tensordot(theta, self.gamma_basis, axes=1)
        return MatchingFamily(kind=self.kind, alpha=alpha, gamma=gamma, distance=self.distance)


def tu_surplus_spec(phi0: np.ndarray, basis: np.ndarray) -> ThetaSpec:
    """TU family with phi(theta) = phi0 + sum theta_k basis_k.

    The split alpha = phi, gamma = 0 is immaterial for TU equilibrium
    objects, which depend on the tables only through their sum.
    """
    return ThetaSpec(kind="TU", alpha0=np.asarray(phi0, dtype=float), alpha_basis=np.asarray(basis, dtype=float))


# ----------------------------------------------------------------------
# log-match derivative engine
#
# Every transfer family evaluates log M = -d(u, v) with u = -a - alpha,
# v = -b - gamma and alpha, gamma affine in theta, so first and second
# derivatives in (theta, a_x, b_y) reduce to the derivatives of d.  NTU is
# log M = phi(theta) + a + b with vanishing curvature.


def _log_match_derivatives(spec: ThetaSpec, theta: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Return (m, Dm, D2m): log-match values and derivatives.

    m is (X, Y); Dm is (X, Y, nv) and D2m is (X, Y, nv, nv) with variables
    ordered theta (d), a (X), b (Y).
    """
    theta = np.asarray(theta, dtype=float)
    d = spec.dim
    X, Y = spec.table_shape
    nv = d + X + Y
    Dm = np.zeros((X, Y, nv))
    D2m = np.zeros((X, Y, nv, nv))

    if spec.kind == "NTU":
        phi = spec.phi0 + np.tensordot(theta, spec.phi_basis, axes=1)
        m = phi + a[:, None] + b[None, :]
        for k in range(d):
            Dm[:, :, k] = spec.phi_basis[k]
        for x in range(X):
            Dm[x, :, d + x] = 1.0
        for y in range(Y):
            Dm[:, y, d + X + y] = 1.0
        return m, Dm, D2m

    fam = spec.family(theta)
    dist = fam.distance if fam.distance is not None else DIST_AVERAGE
    u = -a[:, None] - fam.alpha
    v = -b[None, :] - fam.gamma
    m = -dist.d(u, v)
    du = np.broadcast_to(dist.grad_u(u, v), (X, Y))
    dv = np.broadcast_to(dist.grad_v(u, v), (X, Y))
    duu, duv, dvv = (np.broadcast_to(h, (X, Y)) for h in dist.hess(u, v))

    A = spec.alpha_basis  # (d, X, Y)
    G = spec.gamma_basis

    # first derivatives: m_a = d_u, m_b = d_v, m_theta_k = d_u A_k + d_v G_k
    for k in range(d):
        Dm[:, :, k] = du * A[k] + dv * G[k]
    for x in range(X):
        Dm[x, :, d + x] = du[x, :]
    for y in range(Y):
        Dm[:, y, d + X + y] = dv[:, y]

    # second derivatives via the chain rule on the affine inner maps
    for x in range(X):
        for y in range(Y):
            ia, ib = d + x, d + X + y
            H = D2m[x, y]
            H[ia, ia] = -duu[x, y]
            H[ib, ib] = -dvv[x, y]
            H[ia, ib] = H[ib, ia] = -duv[x, y]
            for k in range(d):
                hak = -(duu[x, y] * A[k, x, y] + duv[x, y] * G[k, x, y])
                hbk = -(duv[x, y] * A[k, x, y] + dvv[x, y] * G[k, x, y])
                H[ia, k] = H[k, ia] = hak
                H[ib, k] = H[k, ib] = hbk
                for l in range(k, d):
                    hkl = -(
                        duu[x, y] * A[k, x, y] * A[l, x, y]
                        + duv[x, y] * (A[k, x, y] * G[l, x, y] + G[k, x, y] * A[l, x, y])
                        + dvv[x, y] * G[k, x, y] * G[l, x, y]
                    )
                    H[k, l] = H[l, k] = hkl
    return m, Dm, D2m


def _constraint_blocks(
    spec: ThetaSpec,
    theta: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    n_hat: np.ndarray,
    m_hat: np.ndarray,
    norm: Normalization,
    K: float,
):
    """Constraint values, Jacobian and curvature.

    Rows: X accounting rows, Y accounting rows, one normalization row
    psi(-a, b) - K.  Columns span (theta, a, b).
    """
    d = spec.dim
    X, Y = spec.table_shape
    nv = d + X + Y
    m, Dm, D2m = _log_match_derivatives(spec, theta, a, b)
    M = np.exp(m)
    DM = M[:, :, None] * Dm
    D2M = M[:, :, None, None] * (Dm[:, :, :, None] * Dm[:, :, None, :] + D2m)

    R = X + Y + 1
    G = np.empty(R)
    DG = np.zeros((R, nv))
    D2G = np.zeros((R, nv, nv))
    G[:X] = M.sum(axis=1) - n_hat
    G[X : X + Y] = M.sum(axis=0) - m_hat
    DG[:X] = DM.sum(axis=1)
    DG[X : X + Y] = DM.sum(axis=0)
    D2G[:X] = D2M.sum(axis=1)
    D2G[X : X + Y] = D2M.sum(axis=0)

    p = np.concatenate([-a, b])
    G[-1] = norm(p) - K
    gp = norm.grad(p)
    DG[-1, d : d + X] = -gp[:X]
    DG[-1, d + X :] = gp[X:]
    # shipped normalizations are piecewise linear: zero curvature

    return M, Dm, D2m, DM, G, DG, D2G


# ----------------------------------------------------------------------
# likelihood and gradient


def predicted_frequencies(
    spec: ThetaSpec,
    theta: np.ndarray,
    n_hat: np.ndarray,
    m_hat: np.ndarray,
    norm: Normalization,
    K: float,
    opts: SolverOptions = SolverOptions(),
) -> Tuple[np.ndarray, MatchingEquilibrium]:
    """Equilibrium match frequencies at theta given observed margins."""
    prim = MarketPrimitives(family=spec.family(theta), n=n_hat, m=m_hat)
    eq = solve_mfe(prim, norm, K, opts)
    Pi = eq.mu / eq.mu.sum()
    return Pi, eq


def log_likelihood(mu_hat: np.ndarray, Pi: np.ndarray) -> float:
    """Multinomial log-likelihood sum mu_hat * log Pi."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    Pi = np.asarray(Pi, dtype=float)
    pos = mu_hat > 0
    if np.any(Pi[pos] <= 0):
        raise ZeroPredictedCell("predicted frequency is zero on an observed cell")
    return float(np.sum(mu_hat[pos] * np.log(Pi[pos])))


def _fee_sensitivities(DG: np.ndarray, d: int, cond_cap: float = 1e12) -> np.ndarray:
    """d(a,b)/dtheta from the implicit function theorem on the constraints.

    The stacked constraint Jacobian in (a, b) has one redundant accounting
    row, so the linear solve uses least squares on the full stack (the
    normalization row restores full column rank).
    """
    J_ab = DG[:, d:]
    J_th = DG[:, :d]
    if not np.all(np.isfinite(J_ab)):
        raise SingularConstraintJacobian("nonfinite constraint Jacobian")
    s = np.linalg.svd(J_ab, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > cond_cap:
        raise SingularConstraintJacobian(
            f"constraint Jacobian condition {s[0] / max(s[-1], 1e-300):.3e} exceeds cap"
        )
    S, *_ = np.linalg.lstsq(J_ab, -J_th, rcond=None)
    return S  # (X+Y, d)


def likelihood_gradient(
    spec: ThetaSpec,
    theta: np.ndarray,
    mu_hat: np.ndarray,
    norm: Normalization,
    K: float,
    opts: SolverOptions = SolverOptions(),
    eq: Optional[MatchingEquilibrium] = None,
) -> np.ndarray:
    """Analytic gradient of the nested log-likelihood in theta.

    Combines the direct parameter effect on the matching function with the
    equilibrium fee response obtained by differentiating the accounting
    and normalization constraints.
    """
    theta = np.asarray(theta, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    n_hat = mu_hat.sum(axis=1)
    m_hat = mu_hat.sum(axis=0)
    if eq is None:
        prim = MarketPrimitives(family=spec.family(theta), n=n_hat, m=m_hat)
        eq = solve_mfe(prim, norm, K, opts)
    d = spec.dim
    X, Y = spec.table_shape

    M, Dm, D2m, DM, G, DG, D2G = _constraint_blocks(
        spec, theta, eq.a, eq.b, n_hat, m_hat, norm, K
    )
    S = _fee_sensitivities(DG, d)  # (X+Y, d)

    # d mu / d theta: direct effect plus the fee response
    Dmu = np.empty((X, Y, d))
    for k in range(d):
        fee_dir = DM[:, :, d:] @ S[:, k]  # (X, Y)
        Dmu[:, :, k] = DM[:, :, k] + fee_dir

    N = M.sum()
    DN = Dmu.sum(axis=(0, 1))  # (d,)
    # dPi = Dmu / N - mu * DN / N^2
    Pi = M / N
    pos = mu_hat > 0
    if np.any(Pi[pos] <= 0):
        raise ZeroPredictedCell("predicted frequency is zero on an observed cell")
    grad = np.zeros(d)
    for k in range(d):
        dPi = Dmu[:, :, k] / N - M * DN[k] / N**2
        grad[k] = np.sum(mu_hat[pos] * dPi[pos] / Pi[pos])
    return grad


@dataclass
class MleResult:
    theta: np.ndarray
    loglik: float
    gradient_norm: float
    iterations: int
    eq: MatchingEquilibrium
    path: List[np.ndarray] = field(default_factory=list)


def mle_nested(
    spec: ThetaSpec,
    mu_hat: np.ndarray,
    norm: Normalization,
    K: float,
    theta0: np.ndarray,
    opts: SolverOptions = SolverOptions(),
    gtol: float = 1e-6,
    max_iter: int = 500,
) -> MleResult:
    """Maximize the nested log-likelihood by quasi-Newton ascent.

    Raises OptimizerStalled when the likelihood is flat in theta (no
    identification) or the optimizer stops far from stationarity.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    n_hat = mu_hat.sum(axis=1)
    m_hat = mu_hat.sum(axis=0)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    path: List[np.ndarray] = []

    def negloglik_and_grad(theta):
        prim = MarketPrimitives(family=spec.family(theta), n=n_hat, m=m_hat)
        eq = solve_mfe(prim, norm, K, opts)
        Pi = eq.mu / eq.mu.sum()
        val = log_likelihood(mu_hat, Pi)
        g = likelihood_gradient(spec, theta, mu_hat, norm, K, opts, eq=eq)
        path.append(np.asarray(theta, dtype=float).copy())
        return -val, -g

    res = optimize.minimize(
        negloglik_and_grad,
        theta0,
        jac=True,
        method="BFGS",
        options={"gtol": gtol, "maxiter": max_iter},
    )
    theta_hat = np.atleast_1d(res.x)
    gnorm = float(np.max(np.abs(res.jac)))

    # flatness probe: step in every direction and look for any movement
    f_hat = res.fun
    h = 1e-3
    flat = True
    for k in range(theta_hat.size):
        for sgn in (-1.0, 1.0):
            t = theta_hat.copy()
            t[k] += sgn * h
            f_probe, _ = negloglik_and_grad(t)
            if abs(f_probe - f_hat) > 1e-10 * (1.0 + abs(f_hat)):
                flat = False
                break
        if not flat:
            break
    if flat and theta_hat.size > 0:
        raise OptimizerStalled(
            "log-likelihood is flat in theta around the stopping point",
            theta=theta_hat,
            value=-f_hat,
        )
    if gnorm > 10 * gtol:
        raise OptimizerStalled(
            f"optimizer stopped with gradient norm {gnorm:.3e}",
            theta=theta_hat,
            value=-f_hat,
        )

    prim = MarketPrimitives(family=spec.family(theta_hat), n=n_hat, m=m_hat)
    eq = solve_mfe(prim, norm, K, opts)
    return MleResult(
        theta=theta_hat,
        loglik=-float(res.fun),
        gradient_norm=gnorm,
        iterations=int(res.nit),
        eq=eq,
        path=path,
    )


# ----------------------------------------------------------------------
# saddle-point (KKT) formulation


def mpec_residual(
    spec: ThetaSpec,
    mu_hat: np.ndarray,
    norm: Normalization,
    K: float,
    theta: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    lam: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stationarity system of the constrained likelihood and its Jacobian.

    Unknowns are stacked as (theta, a, b, lambda) with one multiplier per
    accounting row plus one for the normalization.  The residual stacks
    the Lagrangian gradient in (theta, a, b) and the constraint values;
    the Jacobian is the symmetric KKT matrix with a zero corner block.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    n_hat = mu_hat.sum(axis=1)
    m_hat = mu_hat.sum(axis=0)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lam = np.asarray(lam, dtype=float)
    d = spec.dim
    X, Y = spec.table_shape
    nv = d + X + Y
    R = X + Y + 1
    if lam.shape != (R,):
        raise DimensionMismatch(f"expected {R} multipliers")

    M, Dm, D2m, DM, G, DG, D2G = _constraint_blocks(
        spec, theta, a, b, n_hat, m_hat, norm, K
    )
    N = M.sum()
    N_hat = mu_hat.sum()

    # work with N-relative quantities to keep intermediates at unit scale
    DlogN = DM.sum(axis=(0, 1)) / N
    W = M / N
    D2N_over_N = np.tensordot(W, Dm[:, :, :, None] * Dm[:, :, None, :] + D2m,
                              axes=([0, 1], [0, 1]))

    # log-likelihood in the free variables: sum mu_hat * (log M - log N)
    Dl = np.tensordot(mu_hat, Dm, axes=([0, 1], [0, 1])) - N_hat * DlogN
    D2l = (
        np.tensordot(mu_hat, D2m, axes=([0, 1], [0, 1]))
        - N_hat * (D2N_over_N - np.outer(DlogN, DlogN))
    )

    DL = Dl + lam @ DG
    D2L = D2l + np.tensordot(lam, D2G, axes=1)

    Psi = np.concatenate([DL, G])
    J = np.zeros((nv + R, nv + R))
    J[:nv, :nv] = D2L
    J[:nv, nv:] = DG.T
    J[nv:, :nv] = DG
    return Psi, J


def solve_multiplier(
    spec: ThetaSpec,
    mu_hat: np.ndarray,
    norm: Normalization,
    K: float,
    theta: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
) -> np.ndarray:
    """Least-squares multipliers making the fee-block stationarity vanish."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    n_hat = mu_hat.sum(axis=1)
    m_hat = mu_hat.sum(axis=0)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = spec.dim
    M, Dm, D2m, DM, G, DG, D2G = _constraint_blocks(
        spec, theta, a, b, n_hat, m_hat, norm, K
    )
    N = M.sum()
    N_hat = mu_hat.sum()
    DN = DM.sum(axis=(0, 1))
    Dl = np.tensordot(mu_hat, Dm, axes=([0, 1], [0, 1])) - N_hat * DN / N
    lam, *_ = np.linalg.lstsq(DG[:, d:].T, -Dl[d:], rcond=None)
    return lam


@dataclass
class MpecResult:
    theta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lam: np.ndarray
    residual_norm: float
    iterations: int


def mpec_solve(
    spec: ThetaSpec,
    mu_hat: np.ndarray,
    norm: Normalization,
    K: float,
    theta0: np.ndarray,
    a0: np.ndarray,
    b0: np.ndarray,
    lam0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> MpecResult:
    """Damped Newton iteration on the stationarity system.

    Steps solve the KKT Jacobian in the least-squares sense (one
    accounting row is redundant) and are halved until the residual norm
    does not increase.
    """
    theta = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    a = np.asarray(a0, dtype=float).copy()
    b = np.asarray(b0, dtype=float).copy()
    d, (X, Y) = spec.dim, spec.table_shape
    if lam0 is None:
        lam = solve_multiplier(spec, mu_hat, norm, K, theta, a, b)
    else:
        lam = np.asarray(lam0, dtype=float).copy()

    Psi, J = mpec_residual(spec, mu_hat, norm, K, theta, a, b, lam)
    rnorm = float(np.linalg.norm(Psi))
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            return MpecResult(theta, a, b, lam, rnorm, it - 1)
        step, *_ = np.linalg.lstsq(J, -Psi, rcond=None)
        damp = 1.0
        for _ in range(40):
            t2 = theta + damp * step[:d]
            a2 = a + damp * step[d : d + X]
            b2 = b + damp * step[d + X : d + X + Y]
            l2 = lam + damp * step[d + X + Y :]
            Psi2, J2 = mpec_residual(spec, mu_hat, norm, K, t2, a2, b2, l2)
            r2 = float(np.linalg.norm(Psi2))
            if r2 <= rnorm * (1 + 1e-12):
                theta, a, b, lam = t2, a2, b2, l2
                Psi, J, rnorm = Psi2, J2, r2
                break
            damp *= 0.5
        else:
            raise OptimizerStalled(
                f"damped Newton made no progress at residual {rnorm:.3e}",
                theta=theta,
            )
    if rnorm <= tol:
        return MpecResult(theta, a, b, lam, rnorm, max_iter)
    raise OptimizerStalled(
        f"stationarity residual {rnorm:.3e} after {max_iter} Newton steps",
        theta=theta,
    )


# ----------------------------------------------------------------------
# nested moment estimation for demand


@dataclass
class GmmResult:
    theta: np.ndarray
    value: float
    moments: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    inversion: InversionResult
    weight: np.ndarray


def gmm_moments(
    delta: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    y: np.ndarray,
    gfam: GFamily,
    theta: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Residuals and the two stacked moments (own regressor, instrument)."""
    xi = residual_xi(delta, x1, x2, gfam, theta)
    m = np.array([np.dot(xi, x1), np.dot(xi, y)])
    return xi, m


def gmm_nested(
    model: DemandModel,
    s: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    y: np.ndarray,
    gfam: GFamily,
    norm: Normalization,
    K: float,
    theta0: np.ndarray,
    W: Optional[np.ndarray] = None,
    opts: Optional[SolverOptions] = None,
    two_step: bool = False,
) -> GmmResult:
    """Minimize the quadratic form of the structural moments.

    The demand inversion does not involve theta for the shipped link
    families, so it runs once per data set and the inner loop only
    re-evaluates the residuals.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if W is None:
        W = np.eye(2)
    W = np.asarray(W, dtype=float)
    if not np.all(np.isfinite(W)) or np.linalg.cond(W) > 1e12:
        raise SingularWeight("weighting matrix is singular or nonfinite")

    inv = invert_demand(model, s, norm, K, opts)
    delta = inv.delta

    def objective(theta):
        _, m = gmm_moments(delta, x1, x2, y, gfam, np.atleast_1d(theta))
        return float(m @ W @ m)

    res = optimize.minimize(objective, theta0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    theta_hat = np.atleast_1d(res.x)

    if two_step:
        xi, m = gmm_moments(delta, x1, x2, y, gfam, theta_hat)
        Z = np.stack([x1, y], axis=1)
        Omega = (Z * xi[:, None]).T @ (Z * xi[:, None])
        if np.linalg.cond(Omega) > 1e12:
            raise SingularWeight("estimated moment variance is singular")
        W = np.linalg.inv(Omega)
        res = optimize.minimize(objective, theta_hat, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
        theta_hat = np.atleast_1d(res.x)

    xi, m = gmm_moments(delta, x1, x2, y, gfam, theta_hat)
    return GmmResult(
        theta=theta_hat,
        value=float(res.fun),
        moments=m,
        delta=delta,
        xi=xi,
        inversion=inv,
        weight=W,
    )
