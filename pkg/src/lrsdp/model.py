"""Block-structured SDP problem data: types, linear maps, validation, file I/O.

A problem is

    min  sum_j <C_j, X_j> + c_f . x
    s.t. sum_j <A_ij, X_j> + a_i . x  {= | >=}  b_i,   i = 1..m
         X_j PSD,  x free,

with equality rows listed before inequality rows (canonical order).  The
first ``factorized_count`` PSD blocks are the ones the low-rank solver
factorizes; trailing blocks are kept as matrix variables.

Symmetric matrices are stored packed (upper triangle, row-major), so symmetry
is structural.  Constraint data is kept as sparse upper-triangle coordinate
lists; cost blocks are dense packed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

__all__ = [
    "ConstraintKind",
    "SymmetricMatrix",
    "CooSymmetric",
    "Constraint",
    "BlockStructure",
    "ConicSdpProblem",
    "PrimalPoint",
    "ProblemFormatError",
    "validate",
    "apply_map",
    "apply_adjoint",
    "read_problem",
    "write_problem",
]


class ConstraintKind(Enum):
    EQUALITY = "E"
    INEQUALITY = "I"


class ProblemFormatError(ValueError):
    """Raised by the problem-file reader; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@lru_cache(maxsize=None)
def _triu_rows_cols(n: int) -> tuple[np.ndarray, np.ndarray]:
    r, c = np.triu_indices(n)
    r.setflags(write=False)
    c.setflags(write=False)
    return r, c


@lru_cache(maxsize=None)
def _inner_weights(n: int) -> np.ndarray:
    # trace inner product on packed storage: diagonal entries weigh 1, off 2
    r, c = _triu_rows_cols(n)
    w = np.where(r == c, 1.0, 2.0)
    w.setflags(write=False)
    return w


def packed_size(n: int) -> int:
    return n * (n + 1) // 2


def packed_index(n: int, i: int, j: int) -> int:
    """Position of entry (i, j), i <= j, 0-based, in row-major packed storage."""
    return i * n - i * (i - 1) // 2 + (j - i)


@dataclass(frozen=True, eq=False)
class SymmetricMatrix:
    """Dense symmetric matrix in packed upper-triangular storage."""

    dim: int
    packed: np.ndarray

    def __post_init__(self):
        if self.packed.shape != (packed_size(self.dim),):
            raise ValueError(
                f"packed storage for dim {self.dim} needs "
                f"{packed_size(self.dim)} entries, got {self.packed.shape}"
            )

    @classmethod
    def zeros(cls, n: int) -> "SymmetricMatrix":
        return cls(n, np.zeros(packed_size(n)))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SymmetricMatrix":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"expected square matrix, got {a.shape}")
        sym = 0.5 * (a + a.T)
        r, c = _triu_rows_cols(n)
        return cls(n, sym[r, c].copy())

    def to_dense(self) -> np.ndarray:
        n = self.dim
        r, c = _triu_rows_cols(n)
        a = np.zeros((n, n))
        a[r, c] = self.packed
        a[c, r] = self.packed
        return a

    def inner(self, other: "SymmetricMatrix") -> float:
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        w = _inner_weights(self.dim)
        return float(np.dot(w * self.packed, other.packed))

    def norm(self) -> float:
        w = _inner_weights(self.dim)
        return float(np.sqrt(np.dot(w * self.packed, self.packed)))

    def __add__(self, other: "SymmetricMatrix") -> "SymmetricMatrix":
        return SymmetricMatrix(self.dim, self.packed + other.packed)

    def __sub__(self, other: "SymmetricMatrix") -> "SymmetricMatrix":
        return SymmetricMatrix(self.dim, self.packed - other.packed)

    def scaled(self, t: float) -> "SymmetricMatrix":
        return SymmetricMatrix(self.dim, t * self.packed)


@dataclass(frozen=True, eq=False)
class CooSymmetric:
    """Sparse symmetric matrix: upper-triangle coordinates only (i <= j)."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "CooSymmetric":
        z = np.zeros(0)
        return cls(n, z.astype(int), z.astype(int), z)

    @classmethod
    def from_entries(cls, n: int, entries) -> "CooSymmetric":
        """Build from (i, j, value) triples with i <= j; duplicates accumulate."""
        acc: dict[tuple[int, int], float] = {}
        for i, j, v in entries:
            if not (0 <= i <= j < n):
                raise ValueError(f"entry ({i},{j}) outside upper triangle of dim {n}")
            acc[(i, j)] = acc.get((i, j), 0.0) + float(v)
        keys = sorted(acc)
        rows = np.array([k[0] for k in keys], dtype=int)
        cols = np.array([k[1] for k in keys], dtype=int)
        vals = np.array([acc[k] for k in keys], dtype=float)
        return cls(n, rows, cols, vals)

    @classmethod
    def from_dense(cls, a: np.ndarray, tol: float = 0.0) -> "CooSymmetric":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        sym = 0.5 * (a + a.T)
        r, c = _triu_rows_cols(n)
        v = sym[r, c]
        keep = np.abs(v) > tol
        return cls(n, r[keep].copy(), c[keep].copy(), v[keep].copy())

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        a[self.rows, self.cols] = self.vals
        a[self.cols, self.rows] = self.vals
        return a

    def inner_packed(self, m: SymmetricMatrix) -> float:
        """Trace inner product with a packed symmetric matrix of equal dim."""
        if m.dim != self.dim:
            raise ValueError("dimension mismatch")
        idx = self.rows * self.dim - self.rows * (self.rows - 1) // 2 + (self.cols - self.rows)
        w = np.where(self.rows == self.cols, 1.0, 2.0)
        return float(np.dot(w * self.vals, m.packed[idx]))

    @property
    def nnz(self) -> int:
        return self.vals.size


@dataclass(frozen=True, eq=False)
class Constraint:
    """One affine row: per-block sparse matrices, free-part vector, rhs, kind."""

    blocks: tuple[CooSymmetric, ...]
    free: np.ndarray
    rhs: float
    kind: ConstraintKind


@dataclass(frozen=True)
class BlockStructure:
    """PSD block sizes, how many leading blocks get factorized, free dimension."""

    psd_sizes: tuple[int, ...]
    factorized_count: int
    free_dim: int = 0

    @property
    def num_blocks(self) -> int:
        return len(self.psd_sizes)

    @property
    def tail_sizes(self) -> tuple[int, ...]:
        return self.psd_sizes[self.factorized_count:]


@dataclass(frozen=True, eq=False)
class PrimalPoint:
    """Candidate primal point: one symmetric matrix per PSD block plus free part."""

    psd_blocks: tuple[SymmetricMatrix, ...]
    free: np.ndarray

    def objective(self, problem: "ConicSdpProblem") -> float:
        val = sum(c.inner(x) for c, x in zip(problem.cost_blocks, self.psd_blocks))
        return float(val + np.dot(problem.cost_free, self.free))


@dataclass(frozen=True, eq=False)
class ConicSdpProblem:
    structure: BlockStructure
    cost_blocks: tuple[SymmetricMatrix, ...]
    cost_free: np.ndarray
    constraints: tuple[Constraint, ...]
    name: str = ""

    @classmethod
    def normalized(cls, structure, cost_blocks, cost_free, constraints, name="") -> "ConicSdpProblem":
        """Canonical constructor: reorders constraints so equalities come first."""
        eqs = [c for c in constraints if c.kind is ConstraintKind.EQUALITY]
        ineqs = [c for c in constraints if c.kind is ConstraintKind.INEQUALITY]
        return cls(
            structure=structure,
            cost_blocks=tuple(cost_blocks),
            cost_free=np.asarray(cost_free, dtype=float),
            constraints=tuple(eqs + ineqs),
            name=name,
        )

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def m_eq(self) -> int:
        return sum(1 for c in self.constraints if c.kind is ConstraintKind.EQUALITY)

    @property
    def m_ineq(self) -> int:
        return self.m - self.m_eq

    @property
    def b(self) -> np.ndarray:
        return np.array([c.rhs for c in self.constraints])

    @property
    def kinds(self) -> str:
        return "".join(c.kind.value for c in self.constraints)

    def equality_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.constraints) if c.kind is ConstraintKind.EQUALITY],
            dtype=int,
        )

    def inequality_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.constraints) if c.kind is ConstraintKind.INEQUALITY],
            dtype=int,
        )


def validate(problem: ConicSdpProblem) -> list[str]:
    """Check all structural invariants; returns diagnostics (empty when clean)."""
    diags: list[str] = []
    st = problem.structure

    if not st.psd_sizes and st.free_dim == 0:
        diags.append("structure: no PSD blocks and free_dim == 0")
    if any(n <= 0 for n in st.psd_sizes):
        diags.append("structure: PSD block sizes must be positive")
    if not (0 <= st.factorized_count <= st.num_blocks):
        diags.append(
            f"structure: factorized_count {st.factorized_count} outside "
            f"[0, {st.num_blocks}]"
        )
    if st.free_dim < 0:
        diags.append("structure: free_dim must be nonnegative")

    if len(problem.cost_blocks) != st.num_blocks:
        diags.append(
            f"cost: {len(problem.cost_blocks)} blocks, structure declares {st.num_blocks}"
        )
    else:
        for j, c in enumerate(problem.cost_blocks):
            if c.dim != st.psd_sizes[j]:
                diags.append(f"cost: block {j} has dim {c.dim}, expected {st.psd_sizes[j]}")
            if not np.all(np.isfinite(c.packed)):
                diags.append(f"cost: block {j} has non-finite entries")
    if problem.cost_free.shape != (st.free_dim,):
        diags.append(
            f"cost: free part has length {problem.cost_free.shape}, expected {st.free_dim}"
        )

    for i, con in enumerate(problem.constraints):
        if len(con.blocks) != st.num_blocks:
            diags.append(
                f"constraint {i}: {len(con.blocks)} blocks, structure declares {st.num_blocks}"
            )
            continue
        for j, bl in enumerate(con.blocks):
            if bl.dim != st.psd_sizes[j]:
                diags.append(
                    f"constraint {i}: block {j} has dim {bl.dim}, expected {st.psd_sizes[j]}"
                )
            if bl.nnz and not np.all(np.isfinite(bl.vals)):
                diags.append(f"constraint {i}: block {j} has non-finite entries")
            if bl.nnz and np.any(bl.rows > bl.cols):
                diags.append(f"constraint {i}: block {j} stores lower-triangle entries")
        if con.free.shape != (st.free_dim,):
            diags.append(
                f"constraint {i}: free part length {con.free.shape}, expected {st.free_dim}"
            )
        if not np.isfinite(con.rhs):
            diags.append(f"constraint {i}: non-finite right-hand side")

    seen_ineq = False
    for i, con in enumerate(problem.constraints):
        if con.kind is ConstraintKind.INEQUALITY:
            seen_ineq = True
        elif seen_ineq:
            diags.append(f"constraint {i}: equality listed after an inequality")
            break

    return diags


def apply_map(problem: ConicSdpProblem, point: PrimalPoint) -> np.ndarray:
    """Evaluate the constraint map: component i is <A_i, X> + a_i . x."""
    st = problem.structure
    if len(point.psd_blocks) != st.num_blocks:
        raise ValueError("dimension mismatch: wrong number of PSD blocks")
    for j, x in enumerate(point.psd_blocks):
        if x.dim != st.psd_sizes[j]:
            raise ValueError(f"dimension mismatch: block {j}")
    if point.free.shape != (st.free_dim,):
        raise ValueError("dimension mismatch: free part")

    out = np.zeros(problem.m)
    for i, con in enumerate(problem.constraints):
        acc = sum(bl.inner_packed(x) for bl, x in zip(con.blocks, point.psd_blocks))
        out[i] = acc + np.dot(con.free, point.free)
    return out


def apply_adjoint(problem: ConicSdpProblem, lam: np.ndarray) -> tuple[list[SymmetricMatrix], np.ndarray]:
    """Evaluate the adjoint map: per-block sum_i lam_i A_ij, plus the free part."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (problem.m,):
        raise ValueError(f"length mismatch: lambda has shape {lam.shape}, m = {problem.m}")
    st = problem.structure
    blocks = [np.zeros(packed_size(n)) for n in st.psd_sizes]
    free = np.zeros(st.free_dim)
    for li, con in zip(lam, problem.constraints):
        if li == 0.0:
            continue
        for j, bl in enumerate(con.blocks):
            if bl.nnz == 0:
                continue
            n = bl.dim
            idx = bl.rows * n - bl.rows * (bl.rows - 1) // 2 + (bl.cols - bl.rows)
            blocks[j][idx] += li * bl.vals
        free += li * con.free
    return (
        [SymmetricMatrix(n, p) for n, p in zip(st.psd_sizes, blocks)],
        free,
    )


# ---------------------------------------------------------------------------
# text format
#
# line 1: m
# line 2: nblocks d k           (k = number of factorized leading blocks)
# line 3: block sizes           (nblocks integers; empty when nblocks = 0)
# line 4: constraint kinds      (string of E/I, length m)
# line 5: b                     (m values)
# then entry lines: con block i j value
#   con = 0 is the cost; block = 0 is the free part (j ignored); 1-based;
#   only i <= j stored.  Lines starting with '"' are comments.
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def read_problem(text: str) -> ConicSdpProblem:
    """Parse the extended sparse problem format."""
    lines: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.lstrip().startswith('"'):
            continue
        lines.append((lineno, raw.strip()))

    if len(lines) < 5:
        raise ProblemFormatError("file has fewer than 5 header lines")

    def ints(slot: int, expect: int | None, what: str) -> list[int]:
        lineno, content = lines[slot]
        try:
            vals = [int(t) for t in content.split()]
        except ValueError:
            raise ProblemFormatError(f"could not parse {what}", lineno)
        if expect is not None and len(vals) != expect:
            raise ProblemFormatError(
                f"inconsistent dimension declaration: expected {expect} values for {what}, got {len(vals)}",
                lineno,
            )
        return vals

    m = ints(0, 1, "constraint count")[0]
    if m < 0:
        raise ProblemFormatError("negative constraint count", lines[0][0])
    nblocks, d, k = ints(1, 3, "nblocks d k")
    if nblocks < 0 or d < 0 or not (0 <= k <= nblocks):
        raise ProblemFormatError(
            f"inconsistent dimension declaration: nblocks={nblocks} d={d} k={k}", lines[1][0]
        )
    sizes = ints(2, nblocks, "block sizes")
    if any(n <= 0 for n in sizes):
        raise ProblemFormatError("block sizes must be positive", lines[2][0])

    kind_line, kind_text = lines[3]
    kind_text = kind_text.replace(" ", "")
    if len(kind_text) != m:
        raise ProblemFormatError(
            f"inconsistent dimension declaration: kind string has length {len(kind_text)}, m = {m}",
            kind_line,
        )
    kinds: list[ConstraintKind] = []
    for ch in kind_text:
        if ch not in ("E", "I"):
            raise ProblemFormatError(f"unknown constraint kind {ch!r}", kind_line)
        kinds.append(ConstraintKind(ch))

    b_line, b_text = lines[4]
    try:
        b = [float(t) for t in b_text.split()]
    except ValueError:
        raise ProblemFormatError("could not parse right-hand side", b_line)
    if len(b) != m:
        raise ProblemFormatError(
            f"inconsistent dimension declaration: {len(b)} rhs values, m = {m}", b_line
        )

    # entry accumulators: cost and one slot per constraint
    block_entries: list[list[dict]] = [[{} for _ in range(nblocks)] for _ in range(m + 1)]
    free_entries = [np.zeros(d) for _ in range(m + 1)]

    for lineno, content in lines[5:]:
        if not content:
            continue
        toks = content.split()
        if len(toks) != 5:
            raise ProblemFormatError(f"expected 'con block i j value', got {content!r}", lineno)
        try:
            con, blk, i, j = (int(t) for t in toks[:4])
            val = float(toks[4])
        except ValueError:
            raise ProblemFormatError(f"could not parse entry {content!r}", lineno)
        if not (0 <= con <= m):
            raise ProblemFormatError(f"constraint index {con} outside [0, {m}]", lineno)
        if not (0 <= blk <= nblocks):
            raise ProblemFormatError(f"unknown block marker {blk}", lineno)
        if blk == 0:
            if not (1 <= i <= d):
                raise ProblemFormatError(f"free index {i} outside [1, {d}]", lineno)
            free_entries[con][i - 1] += val
        else:
            n = sizes[blk - 1]
            if not (1 <= i <= j <= n):
                raise ProblemFormatError(
                    f"entry ({i},{j}) outside stored upper triangle of block {blk} (dim {n})",
                    lineno,
                )
            key = (i - 1, j - 1)
            slot = block_entries[con][blk - 1]
            slot[key] = slot.get(key, 0.0) + val

    def coo(con: int, blk: int) -> CooSymmetric:
        n = sizes[blk]
        items = sorted(block_entries[con][blk].items())
        rows = np.array([ij[0] for ij, _ in items], dtype=int)
        cols = np.array([ij[1] for ij, _ in items], dtype=int)
        vals = np.array([v for _, v in items], dtype=float)
        return CooSymmetric(n, rows, cols, vals)

    cost_blocks = []
    for blk in range(nblocks):
        sm = SymmetricMatrix.zeros(sizes[blk])
        for (i, j), v in block_entries[0][blk].items():
            sm.packed[packed_index(sizes[blk], i, j)] += v
        sm.packed.setflags(write=False)
        cost_blocks.append(sm)

    constraints = []
    for ci in range(1, m + 1):
        fv = free_entries[ci]
        fv.setflags(write=False)
        constraints.append(
            Constraint(
                blocks=tuple(coo(ci, blk) for blk in range(nblocks)),
                free=fv,
                rhs=b[ci - 1],
                kind=kinds[ci - 1],
            )
        )

    cf = free_entries[0]
    cf.setflags(write=False)
    return ConicSdpProblem(
        structure=BlockStructure(tuple(sizes), k, d),
        cost_blocks=tuple(cost_blocks),
        cost_free=cf,
        constraints=tuple(constraints),
    )


def write_problem(problem: ConicSdpProblem) -> str:
    """Serialize in canonical entry order (sorted by con, block, i, j)."""
    st = problem.structure
    out = [
        str(problem.m),
        f"{st.num_blocks} {st.free_dim} {st.factorized_count}",
        " ".join(str(n) for n in st.psd_sizes),
        problem.kinds,
        " ".join(_fmt(c.rhs) for c in problem.constraints),
    ]

    def emit_free(con: int, vec: np.ndarray):
        for i, v in enumerate(vec):
            if v != 0.0:
                out.append(f"{con} 0 {i + 1} 0 {_fmt(v)}")

    def emit_packed(con: int, blk: int, sm: SymmetricMatrix):
        r, c = _triu_rows_cols(sm.dim)
        for i, j, v in zip(r, c, sm.packed):
            if v != 0.0:
                out.append(f"{con} {blk} {i + 1} {j + 1} {_fmt(v)}")

    def emit_coo(con: int, blk: int, bl: CooSymmetric):
        order = np.lexsort((bl.cols, bl.rows))
        for t in order:
            if bl.vals[t] != 0.0:
                out.append(f"{con} {blk} {bl.rows[t] + 1} {bl.cols[t] + 1} {_fmt(bl.vals[t])}")

    emit_free(0, problem.cost_free)
    for blk, sm in enumerate(problem.cost_blocks, start=1):
        emit_packed(0, blk, sm)
    for ci, con in enumerate(problem.constraints, start=1):
        emit_free(ci, con.free)
        for blk, bl in enumerate(con.blocks, start=1):
            emit_coo(ci, blk, bl)

    return "\n".join(out) + "\n"
