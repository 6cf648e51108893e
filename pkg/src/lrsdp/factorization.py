"""Low-rank factorization of PSD blocks and the rank bounds that drive it.

The solver replaces each of the leading ``factorized_count`` PSD blocks by a
rectangular factor ``Y_j`` (n_j x p_j) with ``X_j = Y_j Y_j^T``.  The starting
rank comes from a combinatorial quantity m': the largest number of linearly
independent constraints that can be simultaneously active.  Whenever the
triangular number tau(p) exceeds m' (capped at tau(n)), solving the factorized
problem is equivalent to solving the convex one.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .model import (
    ConicSdpProblem,
    PrimalPoint,
    SymmetricMatrix,
    packed_size,
)

__all__ = [
    "FactorizedPoint",
    "RankBoundReport",
    "NotPsdError",
    "RankTooSmallError",
    "triangular",
    "lift",
    "factor",
    "m_prime_inequality",
    "m_prime_conic",
    "append_column",
    "initial_rank_bound",
]

RANK_TOL = 1e-9  # relative threshold for numerical ranks throughout


class NotPsdError(ValueError):
    pass


class RankTooSmallError(ValueError):
    pass


def triangular(k: int) -> int:
    """k-th triangular number k(k+1)/2, the dimension of S^k."""
    if k < 0:
        raise ValueError("triangular numbers need k >= 0")
    return k * (k + 1) // 2


@dataclass(frozen=True, eq=False)
class FactorizedPoint:
    """Factors for the leading blocks, matrices for the tail, free variables."""

    factors: tuple[np.ndarray, ...]
    tail_blocks: tuple[SymmetricMatrix, ...]
    free: np.ndarray

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(y.shape[1] for y in self.factors)


@dataclass(frozen=True)
class RankBoundReport:
    m_prime: int
    p_per_block: tuple[int, ...]
    method: str  # ExactEnumeration | RankUpperBound | ConicFormula


def lift(point: FactorizedPoint) -> PrimalPoint:
    """Map factors back to matrix variables: block j becomes Y_j Y_j^T."""
    blocks = [SymmetricMatrix.from_dense(y @ y.T) for y in point.factors]
    blocks.extend(point.tail_blocks)
    return PrimalPoint(psd_blocks=tuple(blocks), free=np.array(point.free, dtype=float))


def factor(point: PrimalPoint, p: list[int], psd_tol: float = 1e-9) -> FactorizedPoint:
    """Factor the first len(p) blocks of a PSD point at the requested ranks.

    Uses symmetric eigendecomposition; eigenvalues in [-tol, 0] are clamped to
    zero, anything below -tol raises NotPsdError.  Columns beyond the numerical
    rank are zero.  Raises RankTooSmallError when p_j is below the numerical
    rank of block j.
    """
    k = len(p)
    if k > len(point.psd_blocks):
        raise ValueError("more ranks than PSD blocks")
    factors = []
    for j in range(k):
        a = point.psd_blocks[j].to_dense()
        n = a.shape[0]
        w, v = np.linalg.eigh(a)
        scale = max(1.0, float(w[-1]))
        if w[0] < -psd_tol * scale:
            raise NotPsdError(f"block {j}: eigenvalue {w[0]:.3e} below -{psd_tol:.0e}")
        w = np.clip(w, 0.0, None)
        rank_thr = RANK_TOL * max(w[-1], 0.0)
        rank = int(np.sum(w > rank_thr))
        if p[j] < rank:
            raise RankTooSmallError(f"block {j}: numerical rank {rank} exceeds p = {p[j]}")
        # descending order, keep the p leading eigenpairs
        w = w[::-1][: p[j]]
        v = v[:, ::-1][:, : p[j]]
        w[w <= rank_thr] = 0.0
        y = np.zeros((n, p[j]))
        y[:, : v.shape[1]] = v * np.sqrt(w)
        factors.append(y)
    return FactorizedPoint(
        factors=tuple(factors),
        tail_blocks=tuple(point.psd_blocks[k:]),
        free=np.array(point.free, dtype=float),
    )


def append_column(point: FactorizedPoint, block: int, v: np.ndarray, alpha: float) -> FactorizedPoint:
    """Grow factor `block` by one column alpha*v; lift changes by alpha^2 v v^T."""
    v = np.asarray(v, dtype=float)
    y = point.factors[block]
    if v.shape != (y.shape[0],):
        raise ValueError(f"dimension mismatch: direction has shape {v.shape}, block dim {y.shape[0]}")
    new = np.hstack([y, (alpha * v)[:, None]])
    factors = list(point.factors)
    factors[block] = new
    return FactorizedPoint(tuple(factors), point.tail_blocks, np.array(point.free))


# ---------------------------------------------------------------------------
# rank bounds
# ---------------------------------------------------------------------------


def _min_rank_for(m_prime: int, n: int) -> int:
    """Least p with tau(p) > min(m_prime, tau(n)), capped at n (and >= 1)."""
    target = min(m_prime, triangular(n))
    p = 0
    while triangular(p) <= target:
        p += 1
        if p >= n:
            return n
    return max(1, p)


def _stack_rows(problem: ConicSdpProblem, idx) -> np.ndarray:
    n = problem.structure.psd_sizes[0]
    rows = np.zeros((len(idx), packed_size(n)))
    for r, i in enumerate(idx):
        bl = problem.constraints[i].blocks[0]
        pos = bl.rows * n - bl.rows * (bl.rows - 1) // 2 + (bl.cols - bl.rows)
        # off-diagonal entries scaled so packed vectors are isometric to matrices
        rows[r, pos] = np.where(bl.rows == bl.cols, bl.vals, np.sqrt(2.0) * bl.vals)
    return rows


def _numerical_rank(mat: np.ndarray) -> int:
    if mat.size == 0 or min(mat.shape) == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def m_prime_inequality(
    problem: ConicSdpProblem,
    cap: int = 20,
    feasibility=None,
) -> RankBoundReport:
    """m' for a single-block problem (largest independent simultaneously-active set).

    With no inequalities this is just the rank of the constraint stack.  With
    inequalities and m <= cap, enumerates candidate active sets, certifying
    each with a feasibility solve (oracle-backed by default) and pruning
    supersets of infeasible sets; above the cap falls back to min(m, rank A).
    """
    st = problem.structure
    if st.num_blocks != 1 or st.free_dim != 0:
        raise ValueError("unsupported structure: m' enumeration needs one PSD block and d = 0")
    n = st.psd_sizes[0]
    m = problem.m
    if m == 0:
        return RankBoundReport(0, (_min_rank_for(0, n),), "ExactEnumeration")

    all_rank = _numerical_rank(_stack_rows(problem, range(m)))
    eq_idx = list(problem.equality_indices())
    ineq_idx = list(problem.inequality_indices())

    if not ineq_idx:
        return RankBoundReport(all_rank, (_min_rank_for(all_rank, n),), "ExactEnumeration")

    if m > cap:
        mp = min(m, all_rank)
        return RankBoundReport(mp, (_min_rank_for(mp, n),), "RankUpperBound")

    if feasibility is None:
        from .oracle import active_subset_feasible

        feasibility = active_subset_feasible

    best = -1
    infeasible: list[frozenset[int]] = []
    for size in range(0, len(ineq_idx) + 1):
        if best >= all_rank:
            break
        for combo in combinations(ineq_idx, size):
            sset = frozenset(combo)
            if any(bad <= sset for bad in infeasible):
                continue
            if feasibility(problem, combo):
                r = _numerical_rank(_stack_rows(problem, eq_idx + list(combo)))
                best = max(best, r)
            else:
                infeasible.append(sset)
    if best < 0:
        # not even the empty active set is feasible: problem itself infeasible
        best = 0
    return RankBoundReport(best, (_min_rank_for(best, n),), "ExactEnumeration")


def m_prime_conic(problem: ConicSdpProblem, rank_ranges) -> RankBoundReport:
    """m' for the multi-block split: max over tail ranks of m - d - sum tau(r_j).

    `rank_ranges` supplies, per tail block, the set of ranks the block can take
    at solutions; the formula's maximum is attained at the smallest rank in
    each range.
    """
    st = problem.structure
    tail = st.tail_sizes
    ranges = [sorted(set(int(r) for r in rr)) for rr in rank_ranges]
    if len(ranges) != len(tail):
        raise ValueError(f"need one rank range per tail block ({len(tail)}), got {len(ranges)}")
    for j, (rr, nj) in enumerate(zip(ranges, tail)):
        if not rr:
            raise ValueError(f"empty rank range for tail block {j}")
        if rr[0] < 0 or rr[-1] > nj:
            raise ValueError(f"rank range for tail block {j} outside [0, {nj}]")
    mp = problem.m - st.free_dim - sum(triangular(rr[0]) for rr in ranges)
    p = tuple(
        _min_rank_for(mp, st.psd_sizes[j]) for j in range(st.factorized_count)
    )
    return RankBoundReport(mp, p, "ConicFormula")


def initial_rank_bound(problem: ConicSdpProblem) -> RankBoundReport:
    """Cheap rank bound used to seed the staircase (no active-set enumeration).

    Single block, equality-only: exact (rank of the stack).  Single block with
    inequalities: min(m, rank A) upper bound.  Multi-block or free variables:
    the conic formula with unconstrained tail ranks, i.e. m' = m - d.
    """
    st = problem.structure
    if st.num_blocks == 1 and st.free_dim == 0 and st.factorized_count == 1:
        if problem.m_ineq == 0:
            return m_prime_inequality(problem)
        mp = min(problem.m, _numerical_rank(_stack_rows(problem, range(problem.m))))
        return RankBoundReport(mp, (_min_rank_for(mp, st.psd_sizes[0]),), "RankUpperBound")
    mp = max(0, problem.m - st.free_dim)
    p = tuple(_min_rank_for(mp, st.psd_sizes[j]) for j in range(st.factorized_count))
    return RankBoundReport(mp, p, "ConicFormula")
