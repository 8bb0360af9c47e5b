"""Basis evaluation: N log-amplitudes per configuration, sampled overlap
matrices with per-row log offsets, and analytic Jacobian traces.

Momentum projection is a phased sum over all lattice translations and the
spin-flip projection a signed two-term average; the sublattice gauge sign is
applied to each translated term so the projected amplitudes keep an exact
transformation phase.  A dense evaluator over an enumerated sector provides
the same interface for exact-subspace injection in tests.
"""

from __future__ import annotations

import numpy as np

from .. import lattice
from ..errors import AmplitudeOverflow, AnsatzInitError
from .config import AnsatzConfig, ParameterLayout, build_layout
from .feature_map import FeatureMapParams, fmap_forward, fmap_vjp, neighbor_table
from .heads import HeadParams, head_forward

__all__ = [
    "NeuralBasisEvaluator",
    "DenseBasisEvaluator",
    "initialize_parameters",
    "basis_matrices",
    "jacobian_traces",
    "log_amps",
    "basis_matrix",
]


class NeuralBasisEvaluator:
    """Frozen-parameter evaluator; parameters are copied at construction and
    replaced wholesale between optimization epochs."""

    def __init__(self, theta: np.ndarray, cfg: AnsatzConfig):
        theta = np.ascontiguousarray(np.asarray(theta, dtype=np.float64))
        layout = build_layout(cfg)
        if theta.shape != (layout.size,):
            raise ValueError(f"parameter vector shape {theta.shape} != ({layout.size},)")
        self.cfg = cfg
        self.theta = theta.copy()
        self.theta.setflags(write=False)
        self.layout = layout
        geom = cfg.geometry
        self.geom = geom
        self.nbr = neighbor_table(cfg) if cfg.feature_map else None
        self.fp = FeatureMapParams(self.theta, layout, cfg) if cfg.feature_map else None
        self.heads = [
            HeadParams(
                layout.get(self.theta, f"head{j}.w"),
                layout.get(self.theta, f"head{j}.b"),
                layout.get(self.theta, f"head{j}.c")[0],
            )
            for j in range(cfg.n_states)
        ]
        self._build_terms()
        if cfg.marshall and not geom.bipartite:
            raise lattice.NonBipartite(f"{geom.lx}x{geom.ly} lattice is not bipartite")
        self._sub_a = geom.sublattice_a

    def _build_terms(self):
        cfg, geom = self.cfg, self.geom
        if cfg.momentum is None:
            perms = np.arange(geom.n_sites, dtype=np.int64)[None, :]
            phases = np.ones(1, dtype=np.complex128)
        else:
            qx, qy = cfg.momentum
            trans = geom.translations
            perms = geom.translation_tables
            phases = np.exp(
                -2j * np.pi * (qx * trans[:, 0] / geom.lx + qy * trans[:, 1] / geom.ly)
            )
        flips = np.ones(perms.shape[0], dtype=np.int8)
        if cfg.spin_flip is not None:
            sign = 1.0 if cfg.spin_flip == 0 else -1.0
            perms = np.concatenate([perms, perms], axis=0)
            phases = np.concatenate([phases, sign * phases])
            flips = np.concatenate([flips, -flips])
        self.term_perms = perms
        self.term_phases = phases
        self.term_flips = flips
        self.n_terms = perms.shape[0]

    @property
    def n_states(self) -> int:
        return self.cfg.n_states

    @property
    def n_sites(self) -> int:
        return self.cfg.n_sites

    def raw_terms(self, configs: np.ndarray) -> np.ndarray:
        """(B, Ns) -> (B, T, Ns) transformed configurations, term-major."""
        configs = np.asarray(configs, dtype=np.int8)
        raws = configs[:, self.term_perms]  # (B, T, Ns)
        return raws * self.term_flips[None, :, None]

    def term_coefficients(self, raws: np.ndarray) -> np.ndarray:
        """(B, T) complex weights: projection phase times the gauge sign."""
        b, t, ns = raws.shape
        coef = np.broadcast_to(self.term_phases[None, :], (b, t)).copy()
        if self.cfg.marshall:
            down_a = (raws[:, :, self._sub_a] == -1).sum(axis=2)
            coef = coef * np.where(down_a % 2 == 0, 1.0, -1.0)
        return coef

    def _raw_log_amps(self, flat_raws: np.ndarray):
        """Head log-amplitudes for raw (untransformed) configurations.

        Returns (lh (B, N) complex, z (B, F) real, tanh (N, B, hidden), fcache).
        """
        if self.cfg.feature_map:
            z, fcache = fmap_forward(self.fp, flat_raws.astype(np.float64), self.nbr)
        else:
            z, fcache = flat_raws.astype(np.float64), None
        lh = np.empty((flat_raws.shape[0], self.n_states), dtype=np.complex128)
        tanh = np.empty(
            (self.n_states, flat_raws.shape[0], self.cfg.hidden), dtype=np.complex128
        )
        for j, hp in enumerate(self.heads):
            lh[:, j], tanh[j] = head_forward(hp, z)
        if np.any(np.abs(lh.real) > self.cfg.log_bound):
            raise AmplitudeOverflow(
                f"|log amplitude| beyond {self.cfg.log_bound}"
            )
        return lh, z, tanh, fcache

    # batches at least this large route through the compiled evaluator when
    # it is built (identical math; C loop instead of broadcast temporaries)
    compiled_amplitude_threshold = 256

    def log_amps(self, configs: np.ndarray) -> np.ndarray:
        """Projected log-amplitudes, (B, N) complex; real part may be -inf."""
        configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
        if configs.shape[0] >= self.compiled_amplitude_threshold:
            from ..kernels import cython_backend

            if cython_backend is not None and cython_backend.supports(self):
                return cython_backend.log_amps_batch(self, configs)
        return self.log_amps_reference(configs)

    def log_amps_reference(self, configs: np.ndarray) -> np.ndarray:
        """NumPy evaluation path (always available)."""
        configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
        raws = self.raw_terms(configs)
        b, t, ns = raws.shape
        lh, _, _, _ = self._raw_log_amps(raws.reshape(b * t, ns))
        lh = lh.reshape(b, t, self.n_states)
        coef = self.term_coefficients(raws)
        return _log_projected_sum(lh, coef)


def _log_projected_sum(lh: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """log sum_t coef[b,t] exp(lh[b,t,j]) with max-shift stabilization."""
    if lh.shape[1] == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            return lh[:, 0, :] + np.log(coef[:, 0, None].astype(np.complex128))
    ref = lh.real.max(axis=1)  # (B, N)
    safe_ref = np.where(np.isfinite(ref), ref, 0.0)
    amp = np.einsum("bt,btj->bj", coef, np.exp(lh - safe_ref[:, None, :]))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = safe_ref + np.log(amp)
    out = np.where(np.isfinite(ref), out, -np.inf + 0j)
    return out


class DenseBasisEvaluator:
    """Exact amplitudes from dense sector columns (test/injection path)."""

    def __init__(self, sector_configs: np.ndarray, columns: np.ndarray):
        self.sector_configs = np.asarray(sector_configs, dtype=np.int8)
        self.columns = np.asarray(columns, dtype=np.complex128)
        if self.columns.shape[0] != self.sector_configs.shape[0]:
            raise ValueError("columns must be indexed by sector configurations")
        self._keys = lattice.pack_configs(self.sector_configs)
        order = np.argsort(self._keys)
        self._keys = self._keys[order]
        self.columns = self.columns[order]
        self.sector_configs = self.sector_configs[order]

    @property
    def n_states(self) -> int:
        return self.columns.shape[1]

    @property
    def n_sites(self) -> int:
        return self.sector_configs.shape[1]

    def log_amps(self, configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
        keys = lattice.pack_configs(configs)
        idx = np.searchsorted(self._keys, keys)
        if np.any(idx >= len(self._keys)) or np.any(self._keys[idx] != keys):
            raise ValueError("configuration outside the evaluator's sector")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(self.columns[idx].astype(np.complex128))


def basis_matrices(evaluator, configs: np.ndarray):
    """Overlap matrices for a batch of N-tuples.

    configs (n, N, Ns) -> (phimat (n, N, N) row-rescaled, row_offsets (n, N),
    logdet (n,) log|det| of the rescaled matrix, phase (n,) unit complex).
    Entry (i, j) of each matrix is the head-j amplitude at row configuration i,
    divided by exp(row offset i); log|det Phi| = logdet + sum(row_offsets).
    """
    configs = np.asarray(configs, dtype=np.int8)
    n, n_states, ns = configs.shape
    la = evaluator.log_amps(configs.reshape(n * n_states, ns))
    la = la.reshape(n, n_states, evaluator.n_states)
    offsets = la.real.max(axis=2)  # (n, N)
    safe = np.where(np.isfinite(offsets), offsets, 0.0)
    phimat = np.exp(la - safe[:, :, None])
    phimat[~np.isfinite(la.real)] = 0.0
    sign, logabs = np.linalg.slogdet(phimat)
    return phimat, safe, logabs, sign


def basis_matrix(evaluator, tuple_configs: np.ndarray):
    """Single-tuple convenience wrapper around basis_matrices."""
    phimat, offsets, logabs, sign = basis_matrices(
        evaluator, np.asarray(tuple_configs)[None, ...]
    )
    return phimat[0], offsets[0], float(logabs[0]), complex(sign[0])


def jacobian_traces(evaluator: NeuralBasisEvaluator, configs, phimat, row_offsets):
    """Tr[Phi(S)^-1 d_mu Phi(S)] for every flat parameter, batched.

    configs (n, N, Ns), phimat/row_offsets from basis_matrices.  Returns a
    complex (n, M) array; the derivative with respect to the imaginary part of
    a complex head parameter is i times the holomorphic derivative.
    """
    cfg = evaluator.cfg
    layout = evaluator.layout
    configs = np.asarray(configs, dtype=np.int8)
    n, n_rows, ns = configs.shape
    inv = np.linalg.inv(phimat)  # (n, N, N); inv[s, a, b]: head a, row b
    raws = evaluator.raw_terms(configs.reshape(n * n_rows, ns))
    t = raws.shape[1]
    coef = evaluator.term_coefficients(raws).reshape(n, n_rows, t)
    lh, z, tanh, fcache = evaluator._raw_log_amps(raws.reshape(n * n_rows * t, ns))
    q = n_rows * t
    n_heads = cfg.n_states
    lh = lh.reshape(n, q, n_heads)
    z = z.reshape(n, q, -1)
    tanh = tanh.reshape(n_heads, n, q, cfg.hidden)
    coef = coef.reshape(n, q)
    row_of_q = np.repeat(np.arange(n_rows), t)

    # c2[s, a, q] = inv[s, a, row(q)] * coef[s, q] * exp(lh[s, q, a] - offset[s, row(q)])
    off_q = row_offsets[:, row_of_q]  # (n, q)
    scaled = np.exp(lh - off_q[:, :, None]) * coef[:, :, None]  # (n, q, heads)
    c2 = np.einsum("saq,sqa->asq", inv[:, :, row_of_q], scaled)  # (heads, n, q)

    out = np.zeros((n, layout.size), dtype=np.complex128)
    for j in range(n_heads):
        tw = np.einsum("sq,sqh,sqf->shf", c2[j], tanh[j], z)
        tb = np.einsum("sq,sqh->sh", c2[j], tanh[j])
        tc = c2[j].sum(axis=1)
        _write_complex(out, layout, f"head{j}.w", tw.reshape(n, -1))
        _write_complex(out, layout, f"head{j}.b", tb)
        _write_complex(out, layout, f"head{j}.c", tc[:, None])

    if cfg.feature_map:
        chi = np.zeros((n, q, z.shape[2]), dtype=np.complex128)
        for j in range(n_heads):
            chi += c2[j][:, :, None] * (tanh[j] @ evaluator.heads[j].w)
        grads = fmap_vjp(evaluator.fp, fcache, chi.reshape(n * q, -1), evaluator.nbr)
        for name, val in grads.items():
            seg = layout.by_name["fmap." + name]
            reduced = val.reshape(n, q, -1).sum(axis=1)
            out[:, seg.offset : seg.offset + seg.size] = reduced
    return out


def _write_complex(out, layout, name, value):
    seg = layout.by_name[name]
    half = seg.size // 2
    out[:, seg.offset : seg.offset + half] = value
    out[:, seg.offset + half : seg.offset + seg.size] = 1j * value


def log_amps(theta: np.ndarray, cfg: AnsatzConfig, config) -> np.ndarray:
    """Functional wrapper: N projected log-amplitudes of one configuration."""
    return NeuralBasisEvaluator(theta, cfg).log_amps(np.asarray(config)[None, :])[0]


def initialize_parameters(
    cfg: AnsatzConfig, seed: int, check_tuples: int = 4, sigma_shared: float = 0.01,
    sigma_head: float = 0.05,
) -> np.ndarray:
    """Random initialization: shared weights N(0, 0.01), head weights N(0, 0.05)
    with a distinct stream per head so the columns are distinguishable.

    Verifies on random zero-magnetization tuples that the overlap matrix is
    nonsingular and aborts otherwise.
    """
    layout = build_layout(cfg)
    theta = np.zeros(layout.size)
    streams = np.random.SeedSequence(seed).spawn(1 + cfg.n_states)
    shared_rng = np.random.default_rng(streams[0])
    for seg in layout.segments:
        if not seg.name.startswith("fmap."):
            continue
        if seg.name.endswith("ln_g"):
            layout.set(theta, seg.name, np.ones(seg.shape))
        elif seg.name.endswith(("_b", "ln_b", "b1", "b2")):
            continue  # biases start at zero
        else:
            layout.set(theta, seg.name, sigma_shared * shared_rng.standard_normal(seg.shape))
    for j in range(cfg.n_states):
        rng = np.random.default_rng(streams[1 + j])
        w = sigma_head * (
            rng.standard_normal((cfg.hidden, cfg.n_features))
            + 1j * rng.standard_normal((cfg.hidden, cfg.n_features))
        )
        b = sigma_head * (
            rng.standard_normal(cfg.hidden) + 1j * rng.standard_normal(cfg.hidden)
        )
        layout.set(theta, f"head{j}.w", w)
        layout.set(theta, f"head{j}.b", b)
    evaluator = NeuralBasisEvaluator(theta, cfg)
    check_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    geom = cfg.geometry
    base = np.array(
        [1] * (geom.n_sites // 2) + [-1] * (geom.n_sites - geom.n_sites // 2),
        dtype=np.int8,
    )
    # rows drawn at random may coincide or be symmetry-equivalent, which makes
    # the overlap matrix singular for any parameters; only heads that fail to
    # separate every resampled tuple indicate a degenerate initialization
    # global rank check: the N columns must span N independent directions over
    # the sector, else every overlap matrix is singular (identical heads, or a
    # symmetry projection whose sector is narrower than N)
    n_rows = max(8, 4 * cfg.n_states, check_tuples * cfg.n_states)
    seen: set[tuple] = set()
    rows = []
    for _ in range(200 * n_rows):
        config = check_rng.permutation(base)
        key = tuple(config.tolist())
        if key not in seen:
            seen.add(key)
            rows.append(config)
        if len(rows) >= n_rows:
            break
    if len(rows) < cfg.n_states:
        raise AnsatzInitError("sector smaller than the number of basis states")
    amps = np.exp(evaluator.log_amps(np.stack(rows)))
    sv = np.linalg.svd(amps, compute_uv=False)
    if not np.all(np.isfinite(amps)) or sv[cfg.n_states - 1] <= 1e-10 * sv[0]:
        raise AnsatzInitError("initialization produced linearly dependent basis columns")
    return theta
