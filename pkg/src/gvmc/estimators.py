"""Monte Carlo estimators over determinant-sampled batches.

Local matrices are built against the cached rescaled overlap matrices by
linear solves (never explicit inverses).  Covariances conjugate their first
slot, so Cov[Tr A_loc, B_loc] estimates the expectation matrix of
A^dag P_perp B; error bars are leave-one-chain-out jackknife estimates,
treating per-chain means as independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import grassmann, lattice
from .ansatz import jacobian_traces
from .errors import (
    EmptyBatch,
    SingularLocalMatrix,
    SingularMeanOverlap,
    ZeroEnergy,
)
from .sampler import SampleBatch

__all__ = [
    "EstimateWithError",
    "GeometricTensor",
    "ScalarValues",
    "local_operator_matrices",
    "estimate_oem",
    "estimate_cov_matrix",
    "estimate_overlap",
    "estimate_fidelity_matrix",
    "estimate_qgt",
    "scalar_values",
    "structure_factor",
]


@dataclass(frozen=True)
class EstimateWithError:
    value: np.ndarray | complex
    stderr: np.ndarray | float  # componentwise, >= 0
    n_samples: int


@dataclass(frozen=True)
class GeometricTensor:
    """Real symmetric PSD metric over the flat parameters.

    Held in implicit form: `samples` stacks the centered real and imaginary
    parts of the Jacobian traces ((2n, M) real) and the tensor is
    scale * samples^T samples.  `dense()` materializes it.
    """

    samples: np.ndarray
    scale: float

    @property
    def n_params(self) -> int:
        return self.samples.shape[1]

    def dense(self) -> np.ndarray:
        t = self.scale * (self.samples.T @ self.samples)
        return 0.5 * (t + t.T)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        return self.scale * (self.samples.T @ (self.samples @ vec))


@dataclass(frozen=True)
class ScalarValues:
    expectation: complex
    expectation_err: float
    variance: float
    v_score: float
    n_samples: int


def _require_samples(batch: SampleBatch, minimum: int = 1):
    if len(batch) < minimum:
        raise EmptyBatch(f"need at least {minimum} samples, got {len(batch)}")


def _jackknife(chain_ids: np.ndarray, stat_fn):
    """Leave-one-chain-out error for a statistic of the whole batch."""
    full = stat_fn(np.ones(len(chain_ids), dtype=bool))
    chains = np.unique(chain_ids)
    if len(chains) < 2:
        return full, np.zeros_like(np.abs(np.asarray(full, dtype=np.complex128)), dtype=float)
    loo = np.stack([stat_fn(chain_ids != c) for c in chains])
    center = loo.mean(axis=0)
    m = len(chains)
    var = (m - 1) / m * (np.abs(loo - center) ** 2).sum(axis=0)
    return full, np.sqrt(var)


def _solve_local(phimat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    sign, logabs = np.linalg.slogdet(phimat)
    if np.any(~np.isfinite(logabs)) or np.any(logabs < -300):
        raise SingularLocalMatrix("sampled overlap matrix numerically singular")
    return np.linalg.solve(phimat, rhs)


def _dedup_log_amps(evaluator, configs: np.ndarray) -> np.ndarray:
    """log_amps with duplicate configurations evaluated once.

    Sampled batches revisit configurations heavily (thin chains, shared
    connected sets), so unique-and-gather cuts the amplitude evaluations by a
    large factor at identical results.
    """
    if configs.shape[0] < 2048 or configs.shape[1] > 62:
        return evaluator.log_amps(configs)
    keys = lattice.pack_configs(configs)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    if len(uniq) > 0.7 * len(keys):
        return evaluator.log_amps(configs)
    la_unique = evaluator.log_amps(configs[first])
    return la_unique[inverse]


def _evaluate_columns(batch: SampleBatch, evaluator, op) -> np.ndarray:
    """Operator overlap rows: A(S)[i, j] = sum_s' <s_i|op|s'> amp_j(s'),
    rescaled by the cached row offsets of the batch."""
    n, n_rows, ns = batch.configs.shape
    flat_rows = batch.configs.reshape(n * n_rows, ns)
    conn_configs, conn_amps, offsets = op.connected(flat_rows)
    la = _dedup_log_amps(evaluator, conn_configs)  # (Btot, N)
    parent = np.repeat(np.arange(n * n_rows), np.diff(offsets))
    row_off = batch.row_offsets.reshape(n * n_rows)[parent]
    with np.errstate(over="ignore", invalid="ignore"):
        scaled = np.exp(la - row_off[:, None])
    scaled[~np.isfinite(la.real)] = 0.0
    weighted = conn_amps[:, None] * scaled
    out = np.add.reduceat(weighted, offsets[:-1], axis=0)
    out[np.diff(offsets) == 0] = 0.0
    return out.reshape(n, n_rows, evaluator.n_states)


def local_operator_matrices(batch: SampleBatch, evaluator, op) -> np.ndarray:
    """A_loc(S) = Phi(S)^-1 A(S) for every sample, (n, N, N)."""
    _require_samples(batch)
    rhs = _evaluate_columns(batch, evaluator, op)
    return _solve_local(batch.phimat, rhs)


def estimate_oem(batch: SampleBatch, evaluator, op) -> EstimateWithError:
    """Expectation matrix as the plain average of local operator matrices."""
    _require_samples(batch)
    local = local_operator_matrices(batch, evaluator, op)
    value, err = _jackknife(batch.chain_ids, lambda mask: local[mask].mean(axis=0))
    return EstimateWithError(value, err, len(batch))


def _covariance(first_traces: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Cov with the first slot conjugated, (n-1) normalization."""
    n = len(first_traces)
    tc = np.conj(first_traces - first_traces.mean())
    sc = second - second.mean(axis=0)
    return np.tensordot(tc, sc, axes=(0, 0)) / (n - 1)


def estimate_cov_matrix(
    batch: SampleBatch, evaluator, op_a, op_b=None
) -> EstimateWithError:
    """Variance (op_b omitted) or covariance matrix estimate:
    Cov[Tr A_loc(S), B_loc(S)_ij] -> expectation matrix of A^dag P_perp B."""
    _require_samples(batch, 2)
    local_a = local_operator_matrices(batch, evaluator, op_a)
    local_b = local_a if op_b is None else local_operator_matrices(batch, evaluator, op_b)
    traces = np.trace(local_a, axis1=1, axis2=2)

    def stat(mask):
        return _covariance(traces[mask], local_b[mask])

    value, err = _jackknife(batch.chain_ids, stat)
    return EstimateWithError(value, err, len(batch))


@dataclass(frozen=True)
class OverlapEstimate:
    forward: EstimateWithError  # normalized overlap dual(Phi)^dag Psi
    backward: EstimateWithError  # importance-weighted dual(Psi)^dag Phi
    ratio_matrices: np.ndarray  # per-sample R(S), (n, N, N)


def _ratio_matrices(batch: SampleBatch, evaluator_psi) -> np.ndarray:
    """R(S) = Phi(S)^-1 Psi(S); the shared row rescaling cancels."""
    n, n_rows, ns = batch.configs.shape
    la = _dedup_log_amps(evaluator_psi, batch.configs.reshape(n * n_rows, ns))
    with np.errstate(over="ignore", invalid="ignore"):
        psi_scaled = np.exp(
            la.reshape(n, n_rows, -1) - batch.row_offsets[:, :, None]
        )
    psi_scaled[~np.isfinite(la.reshape(n, n_rows, -1).real)] = 0.0
    return _solve_local(batch.phimat, psi_scaled)


def estimate_overlap(batch: SampleBatch, evaluator_psi) -> OverlapEstimate:
    """Both normalized overlap matrices from one batch sampled under Phi.

    The forward direction is the mean ratio matrix; the backward direction
    reweights R(S)^-1 by |det R(S)|^2 (self-normalized importance sampling).
    """
    _require_samples(batch)
    ratios = _ratio_matrices(batch, evaluator_psi)
    fwd_value, fwd_err = _jackknife(batch.chain_ids, lambda m: ratios[m].mean(axis=0))

    sign, logabs = np.linalg.slogdet(ratios)
    if np.any(~np.isfinite(logabs)):
        raise SingularLocalMatrix("ratio matrix singular; backward overlap undefined")
    log_w = 2.0 * logabs
    log_w -= log_w.max()
    weights = np.exp(log_w)
    inverses = np.linalg.solve(ratios, np.broadcast_to(np.eye(ratios.shape[1]), ratios.shape).copy())

    def backward(mask):
        w = weights[mask]
        return np.tensordot(w, inverses[mask], axes=(0, 0)) / w.sum()

    bwd_value, bwd_err = _jackknife(batch.chain_ids, backward)
    n = len(batch)
    return OverlapEstimate(
        EstimateWithError(fwd_value, fwd_err, n),
        EstimateWithError(bwd_value, bwd_err, n),
        ratios,
    )


@dataclass(frozen=True)
class FidelityEstimate:
    matrix: EstimateWithError
    principal_fidelities: np.ndarray
    mode: str


def estimate_fidelity_matrix(
    batch: SampleBatch, evaluator_psi, mode: str = "product"
) -> FidelityEstimate:
    """Fidelity matrix F(Phi|Psi) by either route.

    "product": product of the two overlap estimates.  "variance": normalized
    ratio matrices Gamma(S) = R(S) (mean R)^-1 and F = (I + Cov[Tr Gamma,
    Gamma])^-1, importance-sampling free.
    """
    _require_samples(batch, 2)
    overlaps = estimate_overlap(batch, evaluator_psi)
    ratios = overlaps.ratio_matrices
    n_states = ratios.shape[1]
    if mode == "product":
        def stat(mask):
            fwd = ratios[mask].mean(axis=0)
            sign, logabs = np.linalg.slogdet(ratios[mask])
            log_w = 2.0 * logabs
            log_w -= log_w.max()
            w = np.exp(log_w)
            inv = np.linalg.solve(
                ratios[mask], np.broadcast_to(np.eye(n_states), ratios[mask].shape).copy()
            )
            bwd = np.tensordot(w, inv, axes=(0, 0)) / w.sum()
            return fwd @ bwd
    elif mode == "variance":
        mean_r = ratios.mean(axis=0)
        sign, logabs = np.linalg.slogdet(mean_r)
        if not np.isfinite(logabs) or logabs < -100:
            raise SingularMeanOverlap("mean ratio matrix not invertible")

        def stat(mask):
            sub = ratios[mask]
            gamma = np.linalg.solve(sub.mean(axis=0).T, sub.transpose(0, 2, 1)).transpose(0, 2, 1)
            traces = np.trace(gamma, axis1=1, axis2=2)
            finv_minus_1 = _covariance(traces, gamma)
            return np.linalg.inv(np.eye(n_states) + finv_minus_1)
    else:
        raise ValueError(f"unknown fidelity mode {mode!r}")

    value, err = _jackknife(batch.chain_ids, stat)
    dec = grassmann.principal(grassmann.SubspaceMatrix(value, grassmann.MatrixRole.FIDELITY))
    return FidelityEstimate(
        EstimateWithError(value, err, len(batch)), np.clip(dec.values.real, 0.0, None), mode
    )


def estimate_qgt(batch: SampleBatch, evaluator) -> GeometricTensor:
    """Metric tensor from Jacobian traces: (1/N) Cov[Tr D_mu, Tr D_nu],
    real part (real parameters), exposed in centered sample form."""
    _require_samples(batch, 2)
    traces = jacobian_traces(evaluator, batch.configs, batch.phimat, batch.row_offsets)
    return qgt_from_traces(traces, batch.n_states)


def qgt_from_traces(traces: np.ndarray, n_states: int) -> GeometricTensor:
    n = traces.shape[0]
    centered = traces - traces.mean(axis=0)
    stacked = np.concatenate([centered.real, centered.imag], axis=0)
    return GeometricTensor(stacked, 1.0 / (n_states * (n - 1)))


def scalar_values(
    batch: SampleBatch, evaluator, op, geom: lattice.LatticeGeometry | None = None,
    energy_tol: float = 1e-9,
) -> ScalarValues:
    """Mean, variance and V-score of the local-matrix traces.

    expectation = (1/N) E[Tr A_loc], variance = (1/N) Var[Tr A_loc]; the
    V-score uses the total system (trace) quantities with a traceless
    operator's zero infinite-temperature reference.
    """
    _require_samples(batch, 2)
    local = local_operator_matrices(batch, evaluator, op)
    traces = np.trace(local, axis1=1, axis2=2)
    n_states = batch.n_states
    value, err = _jackknife(batch.chain_ids, lambda m: traces[m].mean() / n_states)
    variance = float(np.var(traces, ddof=1) / n_states)
    n_sites = evaluator.n_sites if geom is None else geom.n_sites
    total_energy = n_states * value
    if abs(total_energy) < energy_tol:
        raise ZeroEnergy("V-score undefined at zero energy")
    v_score = n_sites * (n_states * variance) / abs(total_energy) ** 2
    return ScalarValues(complex(value), float(err), variance, float(v_score), len(batch))


@dataclass(frozen=True)
class StructureFactorEstimate:
    rotated: EstimateWithError  # per-state values in the principal basis
    unrotated: EstimateWithError  # raw OVM diagonal
    degenerate: bool


def structure_factor(
    batch: SampleBatch, evaluator, geom: lattice.LatticeGeometry,
    k: tuple[int, int], transform: np.ndarray | None = None,
    degenerate: bool = False,
) -> StructureFactorEstimate:
    """S(k) per basis state from the variance-matrix diagonal.

    `transform` rotates to the principal basis of the Hamiltonian expectation
    matrix (estimated on the same batch when omitted); with degenerate
    principal values the rotation is ill-defined and a warning is issued.
    """
    op = lattice.StructureFactorOperator(geom, k)
    local = local_operator_matrices(batch, evaluator, op)
    traces = np.trace(local, axis1=1, axis2=2)
    if transform is None:
        transform = np.eye(batch.n_states)

    def stat_rotated(mask):
        cov = _covariance(traces[mask], local[mask])
        rotated = np.linalg.solve(transform, cov @ transform)
        return np.diagonal(rotated).real

    def stat_unrotated(mask):
        cov = _covariance(traces[mask], local[mask])
        return np.diagonal(cov).real

    if degenerate:
        warnings.warn(
            "degenerate principal values: principal-basis structure factor is "
            "gauge dependent; compare the unrotated diagonal", stacklevel=2
        )
    rot_value, rot_err = _jackknife(batch.chain_ids, stat_rotated)
    raw_value, raw_err = _jackknife(batch.chain_ids, stat_unrotated)
    n = len(batch)
    return StructureFactorEstimate(
        EstimateWithError(rot_value, rot_err, n),
        EstimateWithError(raw_value, raw_err, n),
        degenerate,
    )
