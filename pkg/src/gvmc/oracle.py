"""Exact enumeration over all ordered N-tuples of a small sector.

Provides the determinant-sampling distribution in closed form and the exact
one- and two-local-matrix averages (including the equal/unequal inner-index
split) that Monte Carlo estimators are validated against.

Enumeration uses the adjugate (cofactor) form |det|^2 (Phi^-1)_{ik} =
conj(det) adj(Phi)_{ik}: a polynomial in the amplitudes that stays finite on
zero-probability tuples with repeated configurations.  Those tuples carry
nonzero cofactor products, which is why the split identities hold for the
full ordered sum while a sampling chain never visits them; the assembled
covariance is insensitive to the difference because the collision terms
cancel between the two index branches.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import factorial

import numpy as np

from .errors import SectorTooLarge

__all__ = [
    "TupleDistribution",
    "tuple_distribution",
    "adjugate",
    "one_local_average",
    "one_local_exact",
    "two_local_average",
    "two_local_exact_split",
    "covariance_exact",
    "OracleReport",
    "run_oracle_suite",
    "verification_suite",
]

MAX_TUPLES = 2_000_000


@dataclass(frozen=True)
class TupleDistribution:
    indices: np.ndarray  # (T, N) sector row indices of every ordered tuple
    dets: np.ndarray  # (T,) det Phi(S)
    probabilities: np.ndarray  # (T,) |det|^2 / partition
    partition: float  # sum |det|^2 = N! det(Gram)

    def __len__(self):
        return len(self.indices)


def tuple_distribution(columns: np.ndarray, n_states: int | None = None) -> TupleDistribution:
    """Determinant-sampling weights over all ordered tuples of basis rows."""
    columns = np.asarray(columns, dtype=np.complex128)
    m, n = columns.shape
    if n_states is None:
        n_states = n
    if m**n_states > MAX_TUPLES:
        raise SectorTooLarge(f"{m}^{n_states} ordered tuples exceed the enumeration budget")
    indices = np.array(list(product(range(m), repeat=n_states)), dtype=np.int64)
    dets = np.linalg.det(columns[indices])
    weights = np.abs(dets) ** 2
    partition = weights.sum()
    return TupleDistribution(indices, dets, weights / partition, float(partition))


def adjugate(mats: np.ndarray) -> np.ndarray:
    """Batched adjugate (det times inverse) of 1x1, 2x2 or 3x3 matrices."""
    n = mats.shape[-1]
    if n == 1:
        return np.ones_like(mats)
    if n == 2:
        out = np.empty_like(mats)
        out[..., 0, 0] = mats[..., 1, 1]
        out[..., 1, 1] = mats[..., 0, 0]
        out[..., 0, 1] = -mats[..., 0, 1]
        out[..., 1, 0] = -mats[..., 1, 0]
        return out
    if n == 3:
        out = np.empty_like(mats)
        for i in range(3):
            for j in range(3):
                r = [a for a in range(3) if a != j]
                c = [a for a in range(3) if a != i]
                minor = (
                    mats[..., r[0], c[0]] * mats[..., r[1], c[1]]
                    - mats[..., r[0], c[1]] * mats[..., r[1], c[0]]
                )
                out[..., i, j] = (-1) ** (i + j) * minor
        return out
    raise ValueError("adjugate enumeration supports N <= 3")


def _cofactor_locals(dist: TupleDistribution, phi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """E1[t, i, k, j] = adj(Phi(S_t))_{ik} A_{kj}(S_t); finite for every tuple."""
    mats = phi[dist.indices]
    adj = adjugate(mats)
    a_s = a[dist.indices]
    return np.einsum("tik,tkj->tikj", adj, a_s)


def one_local_average(dist: TupleDistribution, phi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sum_S P(S) (Phi^-1(S))_{ik} A_{kj}(S) as a (N, N, N) tensor (i, k, j)."""
    e1 = _cofactor_locals(dist, phi, a)
    return np.einsum("t,tikj->ikj", dist.dets.conj() / dist.partition, e1)


def one_local_exact(phi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """(1/N) <dual_i|a_j>, the k-independent value of the one-local average."""
    g = phi.conj().T @ phi
    return np.linalg.solve(g, phi.conj().T @ a) / phi.shape[1]


def two_local_average(
    dist: TupleDistribution, phi: np.ndarray, a: np.ndarray, b: np.ndarray
) -> np.ndarray:
    """Weighted ordered sum of conj((Phi^-1)_{i1 k1} A_{k1 j1}) times
    (Phi^-1)_{i2 k2} B_{k2 j2}, a (N,)*6 tensor over (i1, k1, j1, i2, k2, j2)."""
    e_a = _cofactor_locals(dist, phi, a)
    e_b = _cofactor_locals(dist, phi, b)
    return np.einsum("tikj,tlmn->ikjlmn", e_a.conj(), e_b) / dist.partition


def mean_local(dist: TupleDistribution, phi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sum_S P(S) (Phi^-1 A)(S) = normalized overlap dual(phi)^dag a."""
    e1 = _cofactor_locals(dist, phi, a)
    return np.einsum("t,tikj->ij", dist.dets.conj() / dist.partition, e1)


def two_local_exact_split(phi: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Closed-form values of the two-local average for the k1 = k2 and
    k1 != k2 index branches, as (N,N,N,N) tensors over (i1, j1, i2, j2)."""
    n = phi.shape[1]
    g = phi.conj().T @ phi
    g_inv = np.linalg.inv(g)
    dual = phi @ g_inv
    p_v = phi @ g_inv @ phi.conj().T
    ab = a.conj().T @ b  # <a_j1|b_j2>
    # equal[i1, j1, i2, j2] = (G^-1)_{i2 i1} <a_j1|b_j2> / N
    equal = np.einsum("li,jm->ijlm", g_inv, ab) / n
    a_dual = a.conj().T @ dual  # <a_j1|dual_i1>
    dual_b = dual.conj().T @ b  # <dual_i2|b_j2>
    term1 = np.einsum("ji,lm->ijlm", a_dual, dual_b)
    apb = a.conj().T @ p_v @ b
    term2 = np.einsum("li,jm->ijlm", g_inv, apb)
    unequal = (term1 - term2) / (n * (n - 1)) if n > 1 else np.zeros_like(term1)
    return equal, unequal


def covariance_exact(phi: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cov[conj(A_loc_{i1 j1}), B_loc_{i2 j2}] = (G^-1)_{i2 i1} <a_j1|P_perp|b_j2>,
    as a (N,N,N,N) tensor over (i1, j1, i2, j2)."""
    g_inv = np.linalg.inv(phi.conj().T @ phi)
    p_v = phi @ g_inv @ phi.conj().T
    ap_b = a.conj().T @ (np.eye(phi.shape[0]) - p_v) @ b
    return np.einsum("li,jm->ijlm", g_inv, ap_b)


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error < self.tolerance


def run_oracle_suite(
    phi: np.ndarray, a: np.ndarray, b: np.ndarray, tolerance: float = 1e-10,
    minor_fn=None,
) -> list[OracleReport]:
    """Exact-identity checks for one dense basis and two column sets.

    `minor_fn` overrides the complementary-minor routine (mutation hook for
    suite-sensitivity tests).
    """
    from . import grassmann

    dist = tuple_distribution(phi)
    n = phi.shape[1]
    reports = []

    one = one_local_average(dist, phi, a)
    one_ref = one_local_exact(phi, a)
    err = np.abs(one - one_ref[:, None, :]).max()
    reports.append(OracleReport("one-local average", float(err), tolerance))

    two = two_local_average(dist, phi, a, b)
    equal_ref, unequal_ref = two_local_exact_split(phi, a, b)
    idx = np.arange(n)
    equal_meas = two[:, idx, :, :, idx, :]  # (k, i1, j1, i2, j2)
    err_eq = np.abs(equal_meas - equal_ref[None]).max()
    reports.append(OracleReport("two-local equal-index branch", float(err_eq), tolerance))

    if n > 1:
        err_ne = 0.0
        for k1 in range(n):
            for k2 in range(n):
                if k1 == k2:
                    continue
                err_ne = max(
                    err_ne, float(np.abs(two[:, k1, :, :, k2, :] - unequal_ref).max())
                )
        reports.append(OracleReport("two-local unequal-index branch", err_ne, tolerance))

    full = np.einsum("ikjlmn->ijln", two)
    mean_a = mean_local(dist, phi, a)
    mean_b = mean_local(dist, phi, b)
    cov = full - np.einsum("ij,lm->ijlm", mean_a.conj(), mean_b)
    err_cov = np.abs(cov - covariance_exact(phi, a, b)).max()
    reports.append(OracleReport("assembled local-matrix covariance", float(err_cov), tolerance))

    minor_fn = minor_fn or grassmann.minor_complement
    rng = np.random.default_rng(1234)
    err_minor = 0.0
    for _ in range(10):
        w = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        rows = sorted(rng.choice(4, 2, replace=False).tolist())
        cols = sorted(rng.choice(4, 2, replace=False).tolist())
        keep_r = [i for i in range(4) if i not in rows]
        keep_c = [j for j in range(4) if j not in cols]
        direct = np.linalg.det(w[np.ix_(keep_r, keep_c)])
        err_minor = max(err_minor, abs(minor_fn(w, rows, cols) - direct))
        i, j = rows[0], cols[0]
        keep_r1 = [r for r in range(4) if r != i]
        keep_c1 = [c for c in range(4) if c != j]
        direct1 = np.linalg.det(w[np.ix_(keep_r1, keep_c1)])
        err_minor = max(err_minor, abs(minor_fn(w, [i], [j]) - direct1))
    reports.append(OracleReport("complementary-minor identity", float(err_minor), 1e-9))

    err_sum = 0.0
    for p in range(max(1, n - 2), n + 1):
        keep = list(range(p))
        total = grassmann.minor_sum_enumerated(phi, keep, keep)
        g = phi.conj().T @ phi
        expected = factorial(p) * np.linalg.det(g[np.ix_(keep, keep)])
        scale = max(1.0, abs(expected))
        err_sum = max(err_sum, abs(total - expected) / scale)
    reports.append(OracleReport("overlap-minor sum identity", float(err_sum), 1e-9))
    return reports


def verification_suite(tier: str = "fast", seed: int = 0, minor_fn=None) -> list[OracleReport]:
    """Tiered identity battery over random instances; deterministic per seed.

    The fast tier enumerates spaces of dimension up to 6, the full tier up to
    8, both with subspace sizes up to 3 and with plain as well as
    operator-generated column sets.
    """
    if tier not in ("fast", "full"):
        raise ValueError(f"unknown tier {tier!r}")
    dims = (5, 6) if tier == "fast" else (5, 6, 7, 8)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xFACADE)))
    reports: list[OracleReport] = []
    for dim in dims:
        for n in (1, 2, 3):
            for use_operator in (False, True):
                phi = rng.standard_normal((dim, n)) + 1j * rng.standard_normal((dim, n))
                if use_operator:
                    op = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
                    op = 0.5 * (op + op.conj().T)
                    a, b = op @ phi, op @ phi
                else:
                    a = rng.standard_normal((dim, n)) + 1j * rng.standard_normal((dim, n))
                    b = rng.standard_normal((dim, n)) + 1j * rng.standard_normal((dim, n))
                tag = f"dim={dim} N={n} {'op' if use_operator else 'raw'}"
                for rep in run_oracle_suite(phi, a, b, minor_fn=minor_fn):
                    reports.append(
                        OracleReport(f"{rep.name} [{tag}]", rep.max_abs_error, rep.tolerance)
                    )
    return reports
