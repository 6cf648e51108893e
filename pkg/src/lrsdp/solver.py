"""Local solver for the factorized problem.

Outer loop: safeguarded augmented Lagrangian with Powell-Hestenes-Rockafellar
treatment of inequality rows.  Inner loop: trust-region Newton with truncated
CG on exact Hessian-vector products, plus a dense negative-curvature probe at
(near-)stationary points so the method settles only at second-order points.

Tail PSD blocks are parameterized internally at full rank (any PSD matrix of
size n factors at rank n), so one variable layout serves every block; the
factorized/tail distinction matters again only for rank bounds and for
certification reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dense import DenseProblem, densify
from .factorization import FactorizedPoint
from .model import ConicSdpProblem, SymmetricMatrix

__all__ = [
    "SolverConfig",
    "LagrangianState",
    "InfeasibleError",
    "NumericalFailure",
    "al_value_grad",
    "al_hessian_vector",
    "inner_minimize",
    "al_solve",
]


class InfeasibleError(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_outer: int = 50
    max_inner: int = 500
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    tr_radius_init: float = 1.0
    seed: int = 0
    init_scale: float = 1.0
    penalty_cap: float = 1e12
    dual_cap: float = 1e10
    restarts: int = 3


@dataclass(frozen=True, eq=False)
class LagrangianState:
    point: FactorizedPoint
    lam: np.ndarray
    rho: float
    objective: float
    infeasibility: float
    stationarity: float
    converged: bool = True


# ---------------------------------------------------------------------------
# internal all-factor variable layout
# ---------------------------------------------------------------------------


class _Work:
    """Dense data plus the flattened (Y_1..Y_L, x) variable layout."""

    def __init__(self, dp: DenseProblem, ranks):
        if len(ranks) != dp.k:
            raise ValueError(f"need {dp.k} factor ranks, got {len(ranks)}")
        self.dp = dp
        self.qs = [int(q) for q in ranks] + [n for n in dp.sizes[dp.k:]]
        self.shapes = [(n, q) for n, q in zip(dp.sizes, self.qs)]
        self.offsets = []
        off = 0
        for n, q in self.shapes:
            self.offsets.append(off)
            off += n * q
        self.free_off = off
        self.dim = off + dp.d

    def pack(self, ys, x) -> np.ndarray:
        z = np.empty(self.dim)
        for off, (n, q), y in zip(self.offsets, self.shapes, ys):
            z[off:off + n * q] = y.ravel()
        z[self.free_off:] = x
        return z

    def unpack(self, z):
        ys = [
            z[off:off + n * q].reshape(n, q)
            for off, (n, q) in zip(self.offsets, self.shapes)
        ]
        return ys, z[self.free_off:]

    def to_point(self, z) -> FactorizedPoint:
        ys, x = self.unpack(z)
        k = self.dp.k
        tails = tuple(SymmetricMatrix.from_dense(y @ y.T) for y in ys[k:])
        return FactorizedPoint(tuple(np.array(y) for y in ys[:k]), tails, np.array(x))

    def from_point(self, point: FactorizedPoint) -> np.ndarray:
        from .factorization import factor
        from .model import PrimalPoint

        ys = [np.array(y, dtype=float) for y in point.factors]
        if point.tail_blocks:
            # tail blocks enter the internal layout factorized at full rank
            tail = factor(
                PrimalPoint(tuple(point.tail_blocks), np.zeros(0)),
                [sm.dim for sm in point.tail_blocks],
            )
            ys.extend(tail.factors)
        return self.pack(ys, np.array(point.free, dtype=float))


class _Eval:
    """AL value, gradient and exact Hessian-vector products at a point."""

    def __init__(self, work: _Work, z: np.ndarray, lam: np.ndarray, rho: float):
        dp = work.dp
        self.work = work
        self.z = z
        ys, x = work.unpack(z)
        self.ys = ys
        self.x = x
        X = [y @ y.T for y in ys]
        self.c = dp.apply(X, x) - dp.b
        self.sdp_objective = dp.objective(X, x)

        shifted = lam - rho * self.c
        lam_t = np.where(dp.eq_mask, shifted, np.maximum(0.0, shifted))
        self.lam_tilde = lam_t
        self.active = dp.eq_mask | (shifted > 0.0)

        eq, c = dp.eq_mask, self.c
        value = self.sdp_objective
        value += float(np.sum((-lam * c + 0.5 * rho * c * c)[eq]))
        if np.any(~eq):
            if rho <= 0.0:
                raise NumericalFailure("PHR terms need rho > 0 with inequality rows")
            value += float(np.sum((lam_t[~eq] ** 2 - lam[~eq] ** 2))) / (2.0 * rho)
        self.value = value

        adj, adj_free = dp.adjoint(lam_t)
        self.S = [cj - aj for cj, aj in zip(dp.C, adj)]
        grad_blocks = [2.0 * s @ y for s, y in zip(self.S, ys)]
        grad_free = dp.c_free - adj_free if dp.d else np.zeros(0)
        self.grad = work.pack(grad_blocks, grad_free)

        self.AY = [np.einsum("iab,bq->iaq", a, y) for a, y in zip(dp.A, ys)]
        self.hvp_weight = np.where(self.active, rho, 0.0)
        if not np.all(np.isfinite(self.grad)) or not np.isfinite(value):
            raise NumericalFailure("non-finite augmented Lagrangian evaluation")

    def hvp(self, u: np.ndarray) -> np.ndarray:
        dp = self.work.dp
        us, ux = self.work.unpack(u)
        dc = np.zeros(dp.m)
        for ay, uj in zip(self.AY, us):
            dc += 2.0 * np.einsum("iaq,aq->i", ay, uj)
        if dp.d:
            dc += dp.Af @ ux
        wdc = self.hvp_weight * dc
        hy = [
            2.0 * s @ uj + 2.0 * np.einsum("i,iaq->aq", wdc, ay)
            for s, uj, ay in zip(self.S, us, self.AY)
        ]
        hx = dp.Af.T @ wdc if dp.d else np.zeros(0)
        return self.work.pack(hy, hx)

    def dense_hessian(self) -> np.ndarray:
        h = np.empty((self.work.dim, self.work.dim))
        e = np.zeros(self.work.dim)
        for i in range(self.work.dim):
            e[i] = 1.0
            h[:, i] = self.hvp(e)
            e[i] = 0.0
        return 0.5 * (h + h.T)

    def infeasibility(self) -> float:
        viol = np.where(self.work.dp.eq_mask, self.c, np.minimum(self.c, 0.0))
        return float(np.linalg.norm(viol))


def _steihaug(g: np.ndarray, hvp, delta: float, max_cg: int):
    """Truncated-CG trust-region subproblem; stops at the boundary or on
    negative curvature (which also covers the PHR kink set)."""
    z = np.zeros_like(g)
    r = g.copy()
    d = -r
    rr = float(r @ r)
    gnorm = np.sqrt(rr)
    stop = min(0.5, np.sqrt(gnorm)) * gnorm

    def boundary(zv, dv):
        a = float(dv @ dv)
        bq = 2.0 * float(zv @ dv)
        cq = float(zv @ zv) - delta * delta
        disc = max(bq * bq - 4.0 * a * cq, 0.0)
        tau = (-bq + np.sqrt(disc)) / (2.0 * a)
        return zv + tau * dv

    for _ in range(max_cg):
        hd = hvp(d)
        dhd = float(d @ hd)
        if dhd <= 1e-14 * float(d @ d):
            return boundary(z, d)
        alpha = rr / dhd
        z_next = z + alpha * d
        if float(z_next @ z_next) >= delta * delta:
            return boundary(z, d)
        z = z_next
        r = r + alpha * hd
        rr_next = float(r @ r)
        if np.sqrt(rr_next) <= stop:
            return z
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return z


def _inner(work: _Work, z, lam, rho, tol, max_iter, tr0):
    """Trust-region Newton on the AL; returns (z, eval, accepted, stalled)."""
    ev = _Eval(work, z, lam, rho)
    delta = tr0
    accepted = 0
    curv_floor = 1e-8

    it = 0
    while it < max_iter:
        it += 1
        g = ev.grad
        gnorm = float(np.linalg.norm(g))
        step = None
        if gnorm <= tol:
            # gradient is flat: probe the spectrum for escapable curvature
            h = ev.dense_hessian()
            w, v = np.linalg.eigh(h)
            hscale = max(abs(float(w[0])), abs(float(w[-1])), 1.0)
            if w[0] >= -curv_floor * hscale:
                break
            direction = v[:, 0]
            if float(g @ direction) > 0.0:
                direction = -direction
            step = delta * direction
            model_dec = -(float(g @ step) + 0.5 * float(step @ ev.hvp(step)))
        else:
            step = _steihaug(g, ev.hvp, delta, max_cg=2 * work.dim)
            model_dec = -(float(g @ step) + 0.5 * float(step @ ev.hvp(step)))

        if model_dec <= 0.0 or not np.all(np.isfinite(step)):
            delta *= 0.25
            if delta < 1e-13 * (1.0 + float(np.linalg.norm(z))):
                return z, ev, accepted, True
            continue

        z_trial = z + step
        ev_trial = _Eval(work, z_trial, lam, rho)
        ratio = (ev.value - ev_trial.value) / model_dec

        if ratio >= 0.1:
            z, ev = z_trial, ev_trial
            accepted += 1
        if ratio >= 0.75:
            delta = min(delta * 2.0, 1e10)
        elif ratio < 0.1:
            delta *= 0.25
            if delta < 1e-13 * (1.0 + float(np.linalg.norm(z))):
                return z, ev, accepted, True
    return z, ev, accepted, it >= max_iter


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _mixed_eval(problem: ConicSdpProblem, point: FactorizedPoint, lam, rho):
    """AL pieces in the public (Y, X-tail, x) coordinates."""
    dp = densify(problem)
    k = dp.k
    ys = [np.asarray(y, dtype=float) for y in point.factors]
    tails = [t.to_dense() for t in point.tail_blocks]
    X = [y @ y.T for y in ys] + tails
    x = np.asarray(point.free, dtype=float)
    c = dp.apply(X, x) - dp.b
    shifted = np.asarray(lam, dtype=float) - rho * c
    lam_t = np.where(dp.eq_mask, shifted, np.maximum(0.0, shifted))
    active = dp.eq_mask | (shifted > 0.0)
    adj, adj_free = dp.adjoint(lam_t)
    S = [cj - aj for cj, aj in zip(dp.C, adj)]
    return dp, ys, tails, x, c, lam_t, active, S, adj_free


def al_value_grad(problem: ConicSdpProblem, point: FactorizedPoint, lam, rho: float):
    """Augmented-Lagrangian value and gradient.

    Gradient is returned in the same shape as the point: 2*S_j*Y_j for factor
    blocks, the slack-matrix component for tail blocks, and the free-part
    slack for the free variables.
    """
    dp, ys, tails, x, c, lam_t, active, S, adj_free = _mixed_eval(problem, point, lam, rho)
    lam = np.asarray(lam, dtype=float)
    eq = dp.eq_mask
    value = dp.objective([y @ y.T for y in ys] + tails, x)
    value += float(np.sum((-lam * c + 0.5 * rho * c * c)[eq]))
    if np.any(~eq):
        if rho <= 0.0:
            raise NumericalFailure("PHR terms need rho > 0 with inequality rows")
        value += float(np.sum(lam_t[~eq] ** 2 - lam[~eq] ** 2)) / (2.0 * rho)
    if not np.isfinite(value):
        raise NumericalFailure("non-finite augmented Lagrangian value")
    k = dp.k
    grad = FactorizedPoint(
        factors=tuple(2.0 * S[j] @ ys[j] for j in range(k)),
        tail_blocks=tuple(SymmetricMatrix.from_dense(S[j]) for j in range(k, len(S))),
        free=(dp.c_free - adj_free if dp.d else np.zeros(0)),
    )
    return value, grad


def al_hessian_vector(
    problem: ConicSdpProblem,
    point: FactorizedPoint,
    lam,
    rho: float,
    direction: FactorizedPoint,
) -> FactorizedPoint:
    """Exact Hessian-vector product of the AL, in the public coordinates."""
    dp, ys, tails, x, c, lam_t, active, S, _ = _mixed_eval(problem, point, lam, rho)
    k = dp.k
    us = [np.asarray(u, dtype=float) for u in direction.factors]
    uds = [t.to_dense() for t in direction.tail_blocks]
    ux = np.asarray(direction.free, dtype=float)

    dc = np.zeros(dp.m)
    for j in range(k):
        dc += 2.0 * np.einsum("iab,aq,bq->i", dp.A[j], us[j], ys[j])
    for j, ud in enumerate(uds):
        dc += np.einsum("iab,ab->i", dp.A[k + j], ud)
    if dp.d:
        dc += dp.Af @ ux
    wdc = np.where(active, rho, 0.0) * dc
    dS = [np.einsum("i,iab->ab", wdc, dp.A[j]) for j in range(len(dp.A))]

    out_factors = tuple(
        2.0 * S[j] @ us[j] + 2.0 * dS[j] @ ys[j] for j in range(k)
    )
    out_tails = tuple(SymmetricMatrix.from_dense(dS[k + j]) for j in range(len(uds)))
    out_free = dp.Af.T @ wdc if dp.d else np.zeros(0)
    res = FactorizedPoint(out_factors, out_tails, out_free)
    for a in res.factors:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite Hessian-vector product")
    return res


def inner_minimize(problem: ConicSdpProblem, state: LagrangianState, config: SolverConfig) -> LagrangianState:
    """Minimize the AL at fixed multipliers/penalty from the state's point."""
    dp = densify(problem)
    work = _Work(dp, [y.shape[1] for y in state.point.factors])
    z0 = work.from_point(state.point)
    ev0 = _Eval(work, z0, state.lam, state.rho)
    tol = max(config.outer_tol, 0.1 * ev0.infeasibility())
    z, ev, accepted, stalled = _inner(
        work, z0, state.lam, state.rho, tol, config.max_inner, config.tr_radius_init
    )
    return LagrangianState(
        point=work.to_point(z),
        lam=np.array(state.lam),
        rho=state.rho,
        objective=ev.sdp_objective,
        infeasibility=ev.infeasibility(),
        stationarity=float(np.linalg.norm(ev.grad)),
        converged=not stalled,
    )


def _initial_z(work: _Work, rng: np.random.Generator, sigma: float, b: np.ndarray) -> np.ndarray:
    # i.i.d. normal factors scaled so lifted diagonals start near the rhs scale
    theta = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    ys = []
    for n, q in work.shapes:
        ys.append(rng.standard_normal((n, q)) * (sigma * np.sqrt(theta / q)))
    x = np.zeros(work.dp.d)
    return work.pack(ys, x)


def al_solve(
    problem: ConicSdpProblem,
    ranks,
    config: SolverConfig,
    warm_start: tuple[FactorizedPoint, np.ndarray, float] | None = None,
):
    """Full augmented-Lagrangian solve at the given factor ranks.

    Returns (final LagrangianState, trace of per-outer-iteration records).
    Raises InfeasibleError when infeasibility stalls above feas_tol with the
    penalty at its cap.
    """
    dp = densify(problem)
    work = _Work(dp, ranks)
    rng = np.random.default_rng(config.seed)

    if warm_start is not None:
        point0, lam, rho = warm_start
        z = work.from_point(point0)
        lam = np.array(lam, dtype=float)
        rho = float(rho)
    else:
        z = _initial_z(work, rng, config.init_scale, dp.b)
        lam = np.zeros(dp.m)
        rho = config.penalty_init

    trace = []
    ev = _Eval(work, z, lam, rho)
    best_infeas = ev.infeasibility()
    stall = 0
    state = None
    for outer in range(1, config.max_outer + 1):
        tol_inner = max(config.outer_tol, 0.1 * min(best_infeas, ev.infeasibility()))
        z, ev, accepted, stalled = _inner(
            work, z, lam, rho, tol_inner, config.max_inner, config.tr_radius_init
        )
        lam_new = np.clip(ev.lam_tilde, -config.dual_cap, config.dual_cap)
        infeas = ev.infeasibility()
        stationarity = float(np.linalg.norm(ev.grad))
        trace.append(
            {
                "outer": outer,
                "objective": ev.sdp_objective,
                "infeasibility": infeas,
                "stationarity": stationarity,
                "rho": rho,
                "inner_accepted": accepted,
            }
        )
        lam = lam_new
        state = LagrangianState(
            point=work.to_point(z),
            lam=lam,
            rho=rho,
            objective=ev.sdp_objective,
            infeasibility=infeas,
            stationarity=stationarity,
            converged=True,
        )
        if infeas <= config.feas_tol and stationarity <= config.outer_tol:
            return state, trace

        if infeas > best_infeas / 4.0:
            rho = min(rho * config.penalty_growth, config.penalty_cap)
        if rho >= config.penalty_cap and infeas > config.feas_tol:
            stall += 1
            if stall >= 5:
                raise InfeasibleError(
                    f"infeasibility {infeas:.3e} stalled with penalty at cap"
                )
        else:
            stall = 0
        best_infeas = min(best_infeas, infeas)
        ev = _Eval(work, z, lam, rho)

    return replace(state, converged=False), trace
