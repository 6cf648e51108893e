"""Dense views of problem data for the numerical kernels.

Constraint blocks are stored sparse in the model; the local solver, the
certification routines and the interior-point oracle all want stacked dense
arrays.  ``DenseProblem`` is that one conversion, built once per solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConicSdpProblem, ConstraintKind


@dataclass(frozen=True, eq=False)
class DenseProblem:
    sizes: tuple[int, ...]
    k: int
    d: int
    C: list[np.ndarray]          # per block, (n_j, n_j)
    A: list[np.ndarray]          # per block, (m, n_j, n_j)
    Af: np.ndarray               # (m, d)
    c_free: np.ndarray           # (d,)
    b: np.ndarray                # (m,)
    eq_mask: np.ndarray          # (m,) bool
    name: str = ""

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def ineq_mask(self) -> np.ndarray:
        return ~self.eq_mask

    def apply(self, blocks: list[np.ndarray], x: np.ndarray) -> np.ndarray:
        """<A_i, X> + a_i . x for every row i."""
        out = np.zeros(self.m)
        for a, xb in zip(self.A, blocks):
            out += np.einsum("iab,ab->i", a, xb)
        if self.d:
            out += self.Af @ x
        return out

    def adjoint(self, lam: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        blocks = [np.einsum("i,iab->ab", lam, a) for a in self.A]
        free = self.Af.T @ lam if self.d else np.zeros(0)
        return blocks, free

    def objective(self, blocks: list[np.ndarray], x: np.ndarray) -> float:
        val = sum(float(np.tensordot(c, xb)) for c, xb in zip(self.C, blocks))
        if self.d:
            val += float(self.c_free @ x)
        return val


def densify(problem: ConicSdpProblem) -> DenseProblem:
    st = problem.structure
    m = problem.m
    C = [c.to_dense() for c in problem.cost_blocks]
    A = [np.zeros((m, n, n)) for n in st.psd_sizes]
    Af = np.zeros((m, st.free_dim))
    b = np.zeros(m)
    eq = np.zeros(m, dtype=bool)
    for i, con in enumerate(problem.constraints):
        for j, bl in enumerate(con.blocks):
            A[j][i] = bl.to_dense()
        if st.free_dim:
            Af[i] = con.free
        b[i] = con.rhs
        eq[i] = con.kind is ConstraintKind.EQUALITY
    return DenseProblem(
        sizes=st.psd_sizes,
        k=st.factorized_count,
        d=st.free_dim,
        C=C,
        A=A,
        Af=Af,
        c_free=np.array(problem.cost_free, dtype=float),
        b=b,
        eq_mask=eq,
        name=problem.name,
    )
