"""Markov chain over N-tuples with stationary weight |det Phi(S)|^2,
restricted to a fixed-magnetization sector.

Chains are independent with one RNG stream each (seeded by (seed, chain
index)), run in lockstep for vectorization, and assembled chain-major so a
batch is deterministic given the seed and chain count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .ansatz import basis_matrices
from .errors import InitFailure
from .kernels.numpy_backend import ChainState

__all__ = [
    "ChainSettings",
    "SampledTuple",
    "SampleBatch",
    "init_tuple",
    "propose_and_step",
    "sample_batch",
    "integrated_autocorrelation",
]

LOGDET_FLOOR = -250.0
SINGULAR_FLOOR = -30.0


@dataclass(frozen=True)
class ChainSettings:
    """warmup_sweeps defaults to 10 * Ns; one sweep is N * Ns proposed moves."""

    n_chains: int = 8
    sweeps: int = 64
    warmup_sweeps: int | None = None
    thinning: int = 1
    seed: int = 0
    total_sz: int = 0
    backend: str = "auto"
    logdet_floor: float = LOGDET_FLOOR
    singular_floor: float = SINGULAR_FLOOR
    init_retries: int = 100

    def __post_init__(self):
        if min(self.n_chains, self.sweeps, self.thinning) < 1:
            raise ValueError("chain counts, sweeps and thinning must be positive")
        if self.warmup_sweeps is not None and self.warmup_sweeps < 0:
            raise ValueError("warmup must be nonnegative")

    @classmethod
    def for_samples(cls, n_samples: int, n_chains: int = 8, **kw) -> "ChainSettings":
        per_chain = -(-n_samples // n_chains)
        thinning = kw.get("thinning", 1)
        return cls(n_chains=n_chains, sweeps=per_chain * thinning, **kw)

    def n_samples(self) -> int:
        return self.n_chains * (self.sweeps // self.thinning)


@dataclass(frozen=True)
class SampledTuple:
    """One occupied N-tuple with its cached rescaled overlap matrix."""

    configs: np.ndarray  # (N, Ns) int8
    phimat: np.ndarray  # (N, N) complex, rows scaled by exp(-offset)
    row_offsets: np.ndarray  # (N,)
    logabs: float  # log|det| of the rescaled matrix

    @property
    def log_det_magnitude(self) -> float:
        return float(self.logabs + self.row_offsets.sum())


@dataclass
class SampleBatch:
    """Chain-major stacked samples plus cached factorization inputs."""

    configs: np.ndarray  # (n, N, Ns)
    phimat: np.ndarray  # (n, N, N)
    row_offsets: np.ndarray  # (n, N)
    logabs: np.ndarray  # (n,)
    chain_ids: np.ndarray  # (n,)
    acceptance: float
    n_chains: int
    backend: str

    def __len__(self) -> int:
        return self.configs.shape[0]

    @property
    def n_states(self) -> int:
        return self.configs.shape[1]

    def permuted_rows(self, rng: np.random.Generator) -> "SampleBatch":
        """Same batch with configs permuted within every tuple (re-deriving
        the cached matrices); estimator means must be invariant."""
        n, n_rows, _ = self.configs.shape
        configs = self.configs.copy()
        phimat = self.phimat.copy()
        offsets = self.row_offsets.copy()
        for i in range(n):
            perm = rng.permutation(n_rows)
            configs[i] = configs[i][perm]
            phimat[i] = phimat[i][perm]
            offsets[i] = offsets[i][perm]
        _, logabs = np.linalg.slogdet(phimat)
        return SampleBatch(
            configs, phimat, offsets, logabs, self.chain_ids.copy(),
            self.acceptance, self.n_chains, self.backend,
        )


def _sector_base(ns: int, total_sz: int) -> np.ndarray:
    twice = 2 * total_sz
    if (ns + twice) % 2 != 0 or abs(twice) > ns:
        raise ValueError(f"no magnetization sector 2Sz={twice} on {ns} sites")
    n_up = (ns + twice) // 2
    return np.array([1] * n_up + [-1] * (ns - n_up), dtype=np.int8)


def init_tuple(
    evaluator, rng: np.random.Generator, total_sz: int = 0,
    logdet_floor: float = LOGDET_FLOOR, retries: int = 100,
    singular_floor: float = SINGULAR_FLOOR,
) -> SampledTuple:
    """Random sector tuple resampled until |det Phi(S)| clears both floors."""
    base = _sector_base(evaluator.n_sites, total_sz)
    for _ in range(retries):
        configs = np.stack([rng.permutation(base) for _ in range(evaluator.n_states)])
        phimat, offsets, logabs, _ = basis_matrices(evaluator, configs[None])
        if (
            np.isfinite(logabs[0])
            and logabs[0] > singular_floor
            and logabs[0] + offsets[0].sum() > logdet_floor
        ):
            return SampledTuple(configs, phimat[0], offsets[0], float(logabs[0]))
    raise InitFailure(f"no nonsingular tuple found in {retries} attempts")


def _state_from_tuples(
    tuples: list[SampledTuple], logdet_floor: float, singular_floor: float = SINGULAR_FLOOR
) -> ChainState:
    configs = np.stack([t.configs for t in tuples])
    phimat = np.stack([t.phimat for t in tuples])
    offsets = np.stack([t.row_offsets for t in tuples])
    logabs = np.array([t.logabs for t in tuples])
    return ChainState(configs, phimat, offsets, logabs, logdet_floor, singular_floor)


def propose_and_step(
    state: SampledTuple, evaluator, rng: np.random.Generator,
    logdet_floor: float = LOGDET_FLOOR,
) -> tuple[SampledTuple, bool]:
    """One exchange proposal with Metropolis acceptance (single chain)."""
    chain = _state_from_tuples([state], logdet_floor)
    randoms = rng.random(4)[None, None, None, :]
    accepted = kernels.numpy_backend.run_block(evaluator, chain, randoms)
    new = SampledTuple(
        chain.configs[0].copy(), chain.phimat[0].copy(),
        chain.offsets[0].copy(), float(chain.logabs[0]),
    )
    return new, bool(accepted)


def sample_batch(settings: ChainSettings, evaluator) -> SampleBatch:
    """Warm up, then retain one tuple per thinning interval per chain."""
    nc = settings.n_chains
    backend = kernels.resolve_backend(settings.backend, evaluator)
    rngs = [
        np.random.default_rng(np.random.SeedSequence((settings.seed, c)))
        for c in range(nc)
    ]
    tuples = [
        init_tuple(evaluator, rngs[c], settings.total_sz,
                   settings.logdet_floor, settings.init_retries,
                   settings.singular_floor)
        for c in range(nc)
    ]
    state = _state_from_tuples(tuples, settings.logdet_floor, settings.singular_floor)
    moves = state.n_rows * state.n_sites
    warmup = settings.warmup_sweeps
    if warmup is None:
        warmup = 10 * state.n_sites

    def draw(n_sweeps: int) -> np.ndarray:
        return np.stack([rng.random((n_sweeps, moves, 4)) for rng in rngs])

    if warmup:
        kernels.run_block(backend, evaluator, state, draw(warmup))

    keep = settings.sweeps // settings.thinning
    n_rows, ns = state.n_rows, state.n_sites
    out_configs = np.empty((nc, keep, n_rows, ns), dtype=np.int8)
    out_phimat = np.empty((nc, keep, n_rows, n_rows), dtype=np.complex128)
    out_offsets = np.empty((nc, keep, n_rows))
    out_logabs = np.empty((nc, keep))
    accepted = 0
    for k in range(keep):
        accepted += kernels.run_block(backend, evaluator, state, draw(settings.thinning))
        out_configs[:, k] = state.configs
        out_phimat[:, k] = state.phimat
        out_offsets[:, k] = state.offsets
        out_logabs[:, k] = state.logabs
    total_moves = nc * keep * settings.thinning * moves
    chain_ids = np.repeat(np.arange(nc), keep)
    return SampleBatch(
        configs=out_configs.reshape(nc * keep, n_rows, ns),
        phimat=out_phimat.reshape(nc * keep, n_rows, n_rows),
        row_offsets=out_offsets.reshape(nc * keep, n_rows),
        logabs=out_logabs.reshape(nc * keep),
        chain_ids=chain_ids,
        acceptance=accepted / total_moves if total_moves else 0.0,
        n_chains=nc,
        backend=backend,
    )


class PersistentSampler:
    """Chain state carried across optimization epochs.

    Parameters are frozen within an epoch and replaced wholesale between
    epochs; the chains keep their configurations, so each epoch only needs a
    short re-equilibration instead of a full warmup.  Per-chain RNG streams
    continue across epochs, keeping runs deterministic for a given seed.
    """

    def __init__(self, settings: ChainSettings, evaluator, epoch_warmup: int = 2):
        self.settings = settings
        self.epoch_warmup = epoch_warmup
        nc = settings.n_chains
        self.rngs = [
            np.random.default_rng(np.random.SeedSequence((settings.seed, c)))
            for c in range(nc)
        ]
        tuples = [
            init_tuple(evaluator, self.rngs[c], settings.total_sz,
                       settings.logdet_floor, settings.init_retries,
                       settings.singular_floor)
            for c in range(nc)
        ]
        self.state = _state_from_tuples(tuples, settings.logdet_floor,
                                        settings.singular_floor)
        self._first_epoch = True

    def _draw(self, n_sweeps: int) -> np.ndarray:
        moves = self.state.n_rows * self.state.n_sites
        return np.stack([rng.random((n_sweeps, moves, 4)) for rng in self.rngs])

    def _refresh(self, evaluator) -> None:
        """Re-evaluate the cached matrices of the current configurations under
        new parameters; chains landing below the floors are re-initialized."""
        from .ansatz import basis_matrices as _bm

        state = self.state
        phimat, offsets, logabs, _ = _bm(evaluator, state.configs)
        bad = ~(
            np.isfinite(logabs)
            & (logabs > self.settings.singular_floor)
            & (logabs + offsets.sum(axis=1) > self.settings.logdet_floor)
        )
        for c in np.nonzero(bad)[0]:
            fresh = init_tuple(evaluator, self.rngs[c], self.settings.total_sz,
                               self.settings.logdet_floor, self.settings.init_retries,
                               self.settings.singular_floor)
            state.configs[c] = fresh.configs
            phimat[c] = fresh.phimat
            offsets[c] = fresh.row_offsets
            logabs[c] = fresh.logabs
        state.phimat = phimat
        state.offsets = offsets
        state.logabs = logabs
        state.phiinv = np.linalg.inv(phimat)

    def sample(self, evaluator) -> SampleBatch:
        settings = self.settings
        backend = kernels.resolve_backend(settings.backend, evaluator)
        self._refresh(evaluator)
        state = self.state
        warmup = settings.warmup_sweeps if self._first_epoch else self.epoch_warmup
        if warmup is None:
            warmup = 10 * state.n_sites
        self._first_epoch = False
        if warmup:
            kernels.run_block(backend, evaluator, state, self._draw(warmup))
        keep = settings.sweeps // settings.thinning
        nc, n_rows, ns = settings.n_chains, state.n_rows, state.n_sites
        out_configs = np.empty((nc, keep, n_rows, ns), dtype=np.int8)
        out_phimat = np.empty((nc, keep, n_rows, n_rows), dtype=np.complex128)
        out_offsets = np.empty((nc, keep, n_rows))
        out_logabs = np.empty((nc, keep))
        accepted = 0
        for k in range(keep):
            accepted += kernels.run_block(
                backend, evaluator, state, self._draw(settings.thinning)
            )
            out_configs[:, k] = state.configs
            out_phimat[:, k] = state.phimat
            out_offsets[:, k] = state.offsets
            out_logabs[:, k] = state.logabs
        total_moves = nc * keep * settings.thinning * n_rows * ns
        return SampleBatch(
            configs=out_configs.reshape(nc * keep, n_rows, ns),
            phimat=out_phimat.reshape(nc * keep, n_rows, n_rows),
            row_offsets=out_offsets.reshape(nc * keep, n_rows),
            logabs=out_logabs.reshape(nc * keep),
            chain_ids=np.repeat(np.arange(nc), keep),
            acceptance=accepted / total_moves if total_moves else 0.0,
            n_chains=nc,
            backend=backend,
        )


def integrated_autocorrelation(series: np.ndarray) -> float:
    """Binning estimate of the integrated autocorrelation time.

    Doubles the bin size while the error estimate keeps growing; returns
    tau_int in units of the series spacing (>= 0.5 for uncorrelated data).
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    var0 = x.var(ddof=1)
    if n < 8 or var0 == 0:
        return 0.5
    best = 0.5
    size = 1
    while n // size >= 4:
        nb = n // size
        means = x[: nb * size].reshape(nb, size).mean(axis=1)
        tau = 0.5 * size * means.var(ddof=1) / var0
        best = max(best, tau)
        size *= 2
    return float(best)
