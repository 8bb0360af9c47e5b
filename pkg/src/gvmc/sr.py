"""Stochastic Reconfiguration over the flat real parameters.

Natural-gradient updates solve (T + shift I) dtheta = -lr * grad with the
sampled metric tensor T, either densely (symmetric factorization) or through
the Woodbury identity on the centered sample matrix when samples are fewer
than parameters.  The tangent-projection utility and the optimization driver
live here too.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import estimators, grassmann, lattice, sampler
from .ansatz import AnsatzConfig, NeuralBasisEvaluator, jacobian_traces
from .errors import EmptyBatch, IndefiniteMatrix, SingularQgt
from .estimators import GeometricTensor

__all__ = [
    "SrSettings",
    "energy_gradient",
    "sr_solve",
    "tangent_project",
    "OptimizationProblem",
    "StepRecord",
    "OptimizationResult",
    "optimize",
    "final_evaluation",
]


@dataclass(frozen=True)
class SrSettings:
    learning_rate: float
    diag_shift: float = 1e-3
    solver: str = "auto"  # dense | implicit | auto
    max_steps: int = 1000
    seed: int = 0
    warmup_steps: int = 0  # linear learning-rate ramp, 0 disables
    variance_target: float | None = None
    checkpoint_interval: int = 200

    def __post_init__(self):
        if self.learning_rate <= 0 or self.diag_shift < 0:
            raise ValueError("learning_rate must be > 0 and diag_shift >= 0")
        if self.solver not in ("dense", "implicit", "auto"):
            raise ValueError(f"unknown solver {self.solver!r}")


def energy_gradient(
    traces: np.ndarray, local_energies: np.ndarray, n_states: int,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """(2/N) Re Cov[Tr D_mu(S), Tr H_loc(S)], the force on the flat parameters.

    `weights` switches from the sample average to an explicit distribution
    (used by enumeration tests); both use the same centered form.
    """
    n = traces.shape[0]
    if n < 2 and weights is None:
        raise EmptyBatch("gradient needs at least two samples")
    if weights is None:
        o_c = traces - traces.mean(axis=0)
        e_c = local_energies - local_energies.mean()
        cov = o_c.conj().T @ e_c / (n - 1)
    else:
        w = weights / weights.sum()
        mean_o = w @ traces
        mean_e = w @ local_energies
        cov = (traces - mean_o).conj().T @ (w * (local_energies - mean_e))
    return (2.0 / n_states) * cov.real


def _as_tensor(qgt) -> GeometricTensor | np.ndarray:
    return qgt


def sr_solve(qgt, grad: np.ndarray, settings: SrSettings) -> np.ndarray:
    """Solve the regularized natural-gradient system for the update step.

    Dense mode factorizes T + shift I; implicit mode applies the Woodbury
    identity to the centered (2n, M) sample matrix and matches dense to
    near machine precision.
    """
    lr, shift = settings.learning_rate, settings.diag_shift
    mode = settings.solver
    if isinstance(qgt, np.ndarray):
        mode = "dense" if mode == "auto" else mode
        if mode == "implicit":
            raise ValueError("implicit solver needs the sample form of the metric")
        return -lr * _dense_solve(qgt, grad, shift)
    if mode == "auto":
        mode = "implicit" if qgt.samples.shape[0] < qgt.n_params else "dense"
    if mode == "dense":
        return -lr * _dense_solve(qgt.dense(), grad, shift)
    s = qgt.samples
    sigma = qgt.scale
    if shift == 0:
        raise IndefiniteMatrix("implicit solver requires a positive diagonal shift")
    core = sigma * (s @ s.T)
    core[np.diag_indices_from(core)] += shift
    try:
        cf = sla.cho_factor(core, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise IndefiniteMatrix(str(exc)) from exc
    sg = s @ grad
    x = (grad - sigma * (s.T @ sla.cho_solve(cf, sg, check_finite=False))) / shift
    return -lr * x


def _dense_solve(t: np.ndarray, grad: np.ndarray, shift: float) -> np.ndarray:
    t = t + shift * np.eye(t.shape[0])
    try:
        cf = sla.cho_factor(t, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMatrix(
            f"metric not positive definite at shift {shift:g}"
        ) from exc
    return sla.cho_solve(cf, grad, check_finite=False)


def tangent_project(
    basis: grassmann.DenseSubspaceBasis,
    coords: np.ndarray,
    target: grassmann.TangentPerturbation,
    shift: float = 0.0,
) -> grassmann.TangentPerturbation:
    """Project a perturbation onto the span of coordinate tangent vectors.

    coords has shape (M, dim H, N).  Idempotent under the subspace metric;
    raises when the coordinate metric is singular even after the shift.
    """
    coords = np.asarray(coords, dtype=np.complex128)
    m = coords.shape[0]
    t = np.empty((m, m), dtype=np.complex128)
    b = np.empty(m, dtype=np.complex128)
    perturbs = [grassmann.TangentPerturbation(coords[mu]) for mu in range(m)]
    for mu in range(m):
        b[mu] = grassmann.metric_inner(basis, perturbs[mu], target)
        for nu in range(m):
            t[mu, nu] = grassmann.metric_inner(basis, perturbs[mu], perturbs[nu])
    t = 0.5 * (t + t.conj().T) + shift * np.eye(m)
    try:
        coeff = np.linalg.solve(t, b)
    except np.linalg.LinAlgError as exc:
        raise SingularQgt(str(exc)) from exc
    if not np.all(np.isfinite(coeff)) or np.linalg.cond(t) > 1e14:
        raise SingularQgt("coordinate metric numerically singular")
    return grassmann.TangentPerturbation(np.tensordot(coeff, coords, axes=(0, 0)))


@dataclass(frozen=True)
class OptimizationProblem:
    ansatz: AnsatzConfig
    hamiltonian: object  # connected-rows operator
    geometry: lattice.LatticeGeometry
    initial_parameters: np.ndarray
    total_sz: int = 0
    n_chains: int = 16
    samples_per_step: int = 512
    warmup_sweeps: int | None = None
    thinning: int = 1
    backend: str = "auto"

    def chain_settings(self, seed: int) -> sampler.ChainSettings:
        return sampler.ChainSettings.for_samples(
            self.samples_per_step,
            n_chains=self.n_chains,
            warmup_sweeps=self.warmup_sweeps,
            thinning=self.thinning,
            seed=seed,
            total_sz=self.total_sz,
            backend=self.backend,
        )


@dataclass
class StepRecord:
    step: int
    energy: float
    energy_err: float
    variance: float
    v_score: float
    principal: list[float]
    acceptance: float
    grad_norm: float
    step_norm: float
    descent: float
    solver: str
    elapsed_s: float

    def to_json_dict(self) -> dict:
        # wall time is deliberately excluded: metrics files are bit-identical
        # for equal seeds
        return {
            "schema_version": 1,
            "step": self.step,
            "energy": self.energy,
            "energy_err": self.energy_err,
            "variance": self.variance,
            "v_score": self.v_score,
            "principal": self.principal,
            "acceptance": self.acceptance,
            "grad_norm": self.grad_norm,
            "step_norm": self.step_norm,
            "descent": self.descent,
            "solver": self.solver,
        }


@dataclass
class OptimizationResult:
    parameters: np.ndarray
    records: list[StepRecord]
    stopped_early: bool

    @property
    def final_energy(self) -> float:
        return self.records[-1].energy if self.records else float("nan")


def _step_metrics(batch, evaluator, problem, traces, local_mats):
    tr_h = np.trace(local_mats, axis1=1, axis2=2)
    n_states = batch.n_states
    value, err = estimators._jackknife(
        batch.chain_ids, lambda m: tr_h[m].mean().real / n_states
    )
    variance = float(np.var(tr_h, ddof=1).real / n_states)
    oem_mean = local_mats.mean(axis=0)
    principal = np.sort(np.linalg.eigvals(oem_mean).real)
    total = n_states * value
    n_sites = problem.geometry.n_sites
    v_score = n_sites * n_states * variance / total**2 if total != 0 else float("inf")
    return float(value), float(err), variance, float(v_score), principal


def optimize(
    problem: OptimizationProblem,
    settings: SrSettings,
    on_step=None,
    on_checkpoint=None,
) -> OptimizationResult:
    """SR loop: sample, estimate gradient and metric, solve, update.

    `on_step(record)` streams metrics; `on_checkpoint(step, theta)` fires on
    the checkpoint interval and once at the end.  Stops at max_steps, or
    earlier when the variance target is reached; aborts on non-finite
    parameters.  The update is a descent direction whenever the shifted
    metric is positive definite, which is asserted each step.
    """
    theta = problem.initial_parameters.copy()
    records: list[StepRecord] = []
    stopped = False
    chains: sampler.PersistentSampler | None = None
    try:
        theta, stopped = _optimize_loop(
            problem, settings, theta, records, on_step, on_checkpoint
        )
    except KeyboardInterrupt:
        stopped = True  # final checkpoint below still fires
    if on_checkpoint is not None:
        on_checkpoint(len(records), theta)
    return OptimizationResult(theta, records, stopped)


def _optimize_loop(problem, settings, theta, records, on_step, on_checkpoint):
    stopped = False
    chains: sampler.PersistentSampler | None = None
    for step in range(settings.max_steps):
        t0 = time.perf_counter()
        evaluator = NeuralBasisEvaluator(theta, problem.ansatz)
        if chains is None:
            chains = sampler.PersistentSampler(
                problem.chain_settings(seed=settings.seed), evaluator
            )
        batch = chains.sample(evaluator)
        local_mats = estimators.local_operator_matrices(batch, evaluator, problem.hamiltonian)
        traces = jacobian_traces(evaluator, batch.configs, batch.phimat, batch.row_offsets)
        tr_h = np.trace(local_mats, axis1=1, axis2=2)
        grad = energy_gradient(traces, tr_h, batch.n_states)
        qgt = estimators.qgt_from_traces(traces, batch.n_states)
        lr_scale = min(1.0, (step + 1) / settings.warmup_steps) if settings.warmup_steps else 1.0
        scaled = SrSettings(
            learning_rate=settings.learning_rate * lr_scale,
            diag_shift=settings.diag_shift,
            solver=settings.solver,
            max_steps=settings.max_steps,
            seed=settings.seed,
        )
        dtheta = sr_solve(qgt, grad, scaled)
        descent = float(grad @ dtheta)
        if descent > 1e-10 * max(1.0, np.linalg.norm(grad) * np.linalg.norm(dtheta)):
            raise IndefiniteMatrix(f"update is not a descent direction: g.dtheta = {descent:g}")
        theta = theta + dtheta
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(f"non-finite parameters at step {step}")
        energy, err, variance, v_score, principal = _step_metrics(
            batch, evaluator, problem, traces, local_mats
        )
        record = StepRecord(
            step=step,
            energy=energy,
            energy_err=err,
            variance=variance,
            v_score=v_score,
            principal=[float(p) for p in principal],
            acceptance=batch.acceptance,
            grad_norm=float(np.linalg.norm(grad)),
            step_norm=float(np.linalg.norm(dtheta)),
            descent=descent,
            solver=settings.solver,
            elapsed_s=time.perf_counter() - t0,
        )
        records.append(record)
        if on_step is not None:
            on_step(record)
        if on_checkpoint is not None and (step + 1) % settings.checkpoint_interval == 0:
            on_checkpoint(step + 1, theta)
        if settings.variance_target is not None and variance < settings.variance_target:
            stopped = True
            break
    return theta, stopped


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence((seed, step)).generate_state(1)[0])


def final_evaluation(
    theta: np.ndarray, problem: OptimizationProblem, seed: int, n_samples: int,
):
    """Per-state principal energies with jackknife errors on a fresh batch."""
    evaluator = NeuralBasisEvaluator(theta, problem.ansatz)
    settings = problem.chain_settings(seed=seed)
    settings = sampler.ChainSettings.for_samples(
        n_samples, n_chains=settings.n_chains, warmup_sweeps=settings.warmup_sweeps,
        thinning=settings.thinning, seed=seed, total_sz=settings.total_sz,
        backend=settings.backend,
    )
    batch = sampler.sample_batch(settings, evaluator)
    local_mats = estimators.local_operator_matrices(batch, evaluator, problem.hamiltonian)

    def principal_stat(mask):
        return np.sort(np.linalg.eigvals(local_mats[mask].mean(axis=0)).real)

    values, errs = estimators._jackknife(batch.chain_ids, principal_stat)
    scalars = estimators.scalar_values(batch, evaluator, problem.hamiltonian, problem.geometry)
    return values, errs, scalars, batch
