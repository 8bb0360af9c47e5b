"""Exact dense linear algebra for N-dimensional linear subspaces.

A subspace is carried as a (dim H) x N complex ket matrix whose columns are
basis states.  Promotions of scalar quantum values to N x N matrices (operator
expectations, variances/covariances, overlaps, fidelities), the subspace
metric, and the complementary-minor identities all live here.  Everything is
pure and allocation-per-call; values are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateSubspace,
    NonDiagonalizable,
    SingularGram,
    SingularInput,
)

__all__ = [
    "MatrixRole",
    "DenseSubspaceBasis",
    "GramMatrix",
    "SubspaceMatrix",
    "PrincipalDecomposition",
    "TangentPerturbation",
    "gram",
    "dual_basis",
    "projector",
    "wedge_overlap",
    "oem",
    "ovm_ocm",
    "principal",
    "fidelity_matrices",
    "p_fidelity",
    "metric_inner",
    "minor_complement",
    "minor_complement_chained",
    "minor_sum_enumerated",
]

RANK_TOL = 1e-10
EIGVEC_COND_BOUND = 1e10


class MatrixRole(Enum):
    OEM = "oem"
    OVM = "ovm"
    OCM = "ocm"
    OVERLAP = "overlap"
    FIDELITY = "fidelity"
    LOCAL = "local"


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DenseSubspaceBasis:
    """Columns of `kets` are the basis states phi_1..phi_N."""

    kets: np.ndarray

    def __post_init__(self):
        kets = np.asarray(self.kets, dtype=np.complex128)
        if kets.ndim != 2 or kets.shape[1] < 1 or kets.shape[1] > kets.shape[0]:
            raise ValueError(f"invalid ket matrix shape {kets.shape}")
        object.__setattr__(self, "kets", _readonly(kets))

    @property
    def dim(self) -> int:
        return self.kets.shape[0]

    @property
    def n_states(self) -> int:
        return self.kets.shape[1]

    def smallest_singular_value(self) -> float:
        return float(np.linalg.svd(self.kets, compute_uv=False)[-1])


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(np.asarray(self.entries, dtype=np.complex128)))


@dataclass(frozen=True)
class SubspaceMatrix:
    entries: np.ndarray
    role: MatrixRole

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(np.asarray(self.entries, dtype=np.complex128)))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class PrincipalDecomposition:
    """values[i], transform X with F = X diag(values) X^-1, unit-norm columns."""

    values: np.ndarray
    transform: np.ndarray
    degeneracy_flag: bool


@dataclass(frozen=True)
class TangentPerturbation:
    """One perturbation column per basis column, same shape as the kets."""

    kets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kets", _readonly(np.asarray(self.kets, dtype=np.complex128)))


def _gram_factor(basis: DenseSubspaceBasis, rank_tol: float = RANK_TOL):
    """Cholesky factor of the Gram matrix; raises SingularGram when the basis
    columns are dependent at the requested tolerance."""
    sv = np.linalg.svd(basis.kets, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise SingularGram(
            f"basis numerically rank deficient: singular values {sv[0]:.3e}..{sv[-1]:.3e}"
        )
    g = basis.kets.conj().T @ basis.kets
    g = 0.5 * (g + g.conj().T)
    try:
        c, low = sla.cho_factor(g, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by the SVD test
        raise SingularGram(str(exc)) from exc
    return g, (c, low)


def _gram_solve(factor, rhs: np.ndarray) -> np.ndarray:
    return sla.cho_solve(factor, rhs, check_finite=False)


def gram(basis: DenseSubspaceBasis) -> GramMatrix:
    """Pairwise inner products <phi_i|phi_j>."""
    g = basis.kets.conj().T @ basis.kets
    return GramMatrix(0.5 * (g + g.conj().T))


def dual_basis(basis: DenseSubspaceBasis, rank_tol: float = RANK_TOL) -> DenseSubspaceBasis:
    """Basis with <dual_i|phi_j> = delta_ij, columns in span(basis)."""
    _, factor = _gram_factor(basis, rank_tol)
    duals = basis.kets @ _gram_solve(factor, np.eye(basis.n_states, dtype=np.complex128))
    return DenseSubspaceBasis(duals)


def projector(basis: DenseSubspaceBasis, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projector onto the span; invariant under column rescaling."""
    dual = dual_basis(basis, rank_tol)
    p = basis.kets @ dual.kets.conj().T
    return 0.5 * (p + p.conj().T)


def wedge_overlap(left: DenseSubspaceBasis, right: DenseSubspaceBasis) -> complex:
    """det of the N x N overlap matrix, left as the bra side."""
    if left.n_states != right.n_states or left.dim != right.dim:
        raise ValueError("bases must share N and dim H")
    return complex(np.linalg.det(left.kets.conj().T @ right.kets))


def _apply_op(op, kets: np.ndarray) -> np.ndarray:
    return np.asarray(op @ kets, dtype=np.complex128)


def oem(basis: DenseSubspaceBasis, op, rank_tol: float = RANK_TOL) -> SubspaceMatrix:
    """Operator expectation matrix: Gram-normalized operator overlaps.

    Equivariant under basis changes: oem(basis @ X) = X^-1 oem(basis) X.
    """
    _, factor = _gram_factor(basis, rank_tol)
    raw = basis.kets.conj().T @ _apply_op(op, basis.kets)
    return SubspaceMatrix(_gram_solve(factor, raw), MatrixRole.OEM)


def ovm_ocm(basis: DenseSubspaceBasis, op_a, op_b=None, rank_tol: float = RANK_TOL) -> SubspaceMatrix:
    """Operator variance (op_b omitted) or covariance matrix.

    Computed as the difference form: OEM of the product minus the OEM
    product, which equals the expectation matrix of A P_perp B.
    """
    role = MatrixRole.OVM if op_b is None else MatrixRole.OCM
    if op_b is None:
        op_b = op_a
    _, factor = _gram_factor(basis, rank_tol)
    a_kets = _apply_op(op_a, basis.kets)
    b_kets = _apply_op(op_b, basis.kets)
    ab = _gram_solve(factor, basis.kets.conj().T @ _apply_op(op_a, b_kets))
    a_mat = _gram_solve(factor, basis.kets.conj().T @ a_kets)
    b_mat = _gram_solve(factor, basis.kets.conj().T @ b_kets)
    return SubspaceMatrix(ab - a_mat @ b_mat, role)


def principal(
    matrix: SubspaceMatrix | np.ndarray,
    gap_tol: float = 1e-8,
    cond_bound: float = EIGVEC_COND_BOUND,
) -> PrincipalDecomposition:
    """Eigendecomposition with a deterministic order.

    Values sorted by ascending real part, ties broken by ascending imaginary
    part; transform columns are unit norm.  Rejects matrices whose eigenvector
    matrix is too ill-conditioned to invert reliably.
    """
    entries = matrix.entries if isinstance(matrix, SubspaceMatrix) else np.asarray(matrix)
    values, vectors = np.linalg.eig(entries)
    order = np.lexsort((values.imag, values.real))
    values = values[order]
    vectors = vectors[:, order]
    vectors = vectors / np.linalg.norm(vectors, axis=0, keepdims=True)
    cond = np.linalg.cond(vectors)
    if not np.isfinite(cond) or cond > cond_bound:
        raise NonDiagonalizable(f"eigenvector condition number {cond:.3e}")
    if len(values) > 1:
        pairwise = np.abs(values[:, None] - values[None, :])
        min_gap = pairwise[~np.eye(len(values), dtype=bool)].min()
    else:
        min_gap = np.inf
    return PrincipalDecomposition(values, vectors, bool(min_gap < gap_tol))


def fidelity_matrices(
    a: DenseSubspaceBasis, b: DenseSubspaceBasis, rank_tol: float = RANK_TOL
) -> tuple[SubspaceMatrix, SubspaceMatrix]:
    """Both orderings of the normalized cross-overlap product.

    The two results share their eigenvalue multiset (squared cosines of the
    principal angles between the spans).
    """
    if a.n_states != b.n_states:
        raise ValueError("bases must share N")
    _, fa = _gram_factor(a, rank_tol)
    _, fb = _gram_factor(b, rank_tol)
    ab = _gram_solve(fa, a.kets.conj().T @ b.kets)  # dual(a)^dag b
    ba = _gram_solve(fb, b.kets.conj().T @ a.kets)  # dual(b)^dag a
    return (
        SubspaceMatrix(ab @ ba, MatrixRole.FIDELITY),
        SubspaceMatrix(ba @ ab, MatrixRole.FIDELITY),
    )


def fidelity_eigenvalues(f: SubspaceMatrix, tol: float = 1e-8) -> np.ndarray:
    values = np.linalg.eigvals(f.entries)
    if np.any(values.real < -tol):
        raise DegenerateSubspace(f"fidelity eigenvalue below zero: {values.real.min():.3e}")
    return np.clip(values.real, 0.0, None)


def p_fidelity(
    a: DenseSubspaceBasis, b: DenseSubspaceBasis, p: float, rank_tol: float = RANK_TOL
) -> float:
    """Power-mean aggregate of the principal fidelities, in [0, 1].

    p = 0 is the geometric-mean limit, evaluated through logs to avoid
    underflow of the eigenvalue product.
    """
    f, _ = fidelity_matrices(a, b, rank_tol)
    lam = fidelity_eigenvalues(f)
    n = len(lam)
    if p == 0:
        if np.any(lam == 0.0):
            return 0.0
        return float(np.exp(np.log(lam).sum() / n))
    value = (np.power(lam, p / 2.0).sum() / n) ** (2.0 / p)
    return float(min(max(value, 0.0), 1.0))


def metric_inner(
    basis: DenseSubspaceBasis,
    u: TangentPerturbation,
    w: TangentPerturbation,
    rank_tol: float = RANK_TOL,
) -> complex:
    """Subspace metric: (1/N) Tr(G^-1 <u| P_perp |w>).

    Conjugate-symmetric in (u, w); vanishes when u lies columnwise in the span.
    """
    if u.kets.shape != basis.kets.shape or w.kets.shape != basis.kets.shape:
        raise ValueError("perturbation shapes must match the basis kets")
    _, factor = _gram_factor(basis, rank_tol)
    w_perp = w.kets - basis.kets @ _gram_solve(factor, basis.kets.conj().T @ w.kets)
    inner = u.kets.conj().T @ w_perp
    return complex(np.trace(_gram_solve(factor, inner)) / basis.n_states)


def _perm_parity_sign(indices) -> int:
    idx = list(indices)
    sign = 1
    for i in range(len(idx)):
        for j in range(i + 1, len(idx)):
            if idx[i] > idx[j]:
                sign = -sign
    return sign


def _slogdet_or_raise(w: np.ndarray, min_logdet: float = -500.0):
    sign, logdet = np.linalg.slogdet(w)
    if sign == 0 or logdet < min_logdet:
        raise SingularInput("determinant underflow")
    return sign * np.exp(logdet)


def minor_complement(w: np.ndarray, rows, cols) -> complex:
    """det of `w` with `rows`/`cols` removed, via the complementary identity.

    Computed as sign x (minor of w^-1 selecting cols/rows) x det(w).  The sign
    follows the convention where normally ordered index lists reproduce the
    plain submatrix determinant and odd permutations of either list negate the
    result.  Supports |rows| = |cols| = M in {1, 2}.
    """
    w = np.asarray(w, dtype=np.complex128)
    rows = list(rows)
    cols = list(cols)
    m = len(rows)
    if m != len(cols) or m not in (1, 2):
        raise ValueError("need |rows| = |cols| = M in {1, 2}")
    det_w = _slogdet_or_raise(w)
    w_inv = np.linalg.inv(w)
    sub = w_inv[np.ix_(cols, rows)]
    sign = (-1) ** (sum(rows) + sum(cols))
    return complex(sign * np.linalg.det(sub) * det_w)


def minor_complement_chained(w: np.ndarray, rows, cols) -> complex:
    """Same quantity through the two-step chained identity (M = 1 or 2).

    One inverse entry of w, then one inverse entry of w with the first
    row/column removed, with the relative-index sign rule.
    """
    w = np.asarray(w, dtype=np.complex128)
    rows = list(rows)
    cols = list(cols)
    det_w = _slogdet_or_raise(w)
    w_inv = np.linalg.inv(w)
    i1, j1 = rows[0], cols[0]
    first = (-1) ** (i1 + j1) * w_inv[j1, i1]
    if len(rows) == 1:
        return complex(first * det_w)
    i2, j2 = rows[1], cols[1]
    if i2 == i1 or j2 == j1:
        raise ValueError("removed indices must be distinct")
    keep_r = [r for r in range(w.shape[0]) if r != i1]
    keep_c = [c for c in range(w.shape[0]) if c != j1]
    w1 = w[np.ix_(keep_r, keep_c)]
    w1_inv = np.linalg.inv(w1)
    i2p = i2 - (i2 > i1)
    j2p = j2 - (j2 > j1)
    second = (-1) ** (i2p + j2p) * w1_inv[j2p, i2p]
    return complex(first * second * det_w)


def minor_sum_enumerated(kets: np.ndarray, keep_rows, keep_cols) -> complex:
    """Exhaustive overlap-minor sum over ordered tuples of basis indices.

    For column subsets I = keep_rows and J = keep_cols of equal size P, sums
    det(kets[S, I])* det(kets[S, J]) over all ordered P-tuples S of
    computational basis indices.  Equals P! times the corresponding Gram
    submatrix determinant; enumeration cost dim^P.
    """
    kets = np.asarray(kets, dtype=np.complex128)
    keep_rows = list(keep_rows)
    keep_cols = list(keep_cols)
    p = len(keep_rows)
    if p != len(keep_cols) or p < 1:
        raise ValueError("index lists must be equal sized and nonempty")
    dim = kets.shape[0]
    total = 0.0 + 0.0j
    left = kets[:, keep_rows]
    right = kets[:, keep_cols]
    for tup in np.ndindex(*([dim] * p)):
        idx = list(tup)
        total += np.conj(np.linalg.det(left[idx, :])) * np.linalg.det(right[idx, :])
    return complex(total)
