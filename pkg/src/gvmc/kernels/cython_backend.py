"""Wrapper around the compiled sweep kernel.

Packs the evaluator's parameters, symmetry terms and gather tables into
contiguous arrays once per evaluator, then drives the C sweep loop with the
same pre-drawn randoms as the NumPy backend.
"""

from __future__ import annotations

import numpy as np

from ..errors import AmplitudeOverflow

try:  # pragma: no cover - import guard exercised via kernels package
    from . import _sweeps

    AVAILABLE = True
except ImportError:  # pragma: no cover
    _sweeps = None
    AVAILABLE = False


def supports(evaluator) -> bool:
    from ..ansatz.evaluator import NeuralBasisEvaluator

    return AVAILABLE and isinstance(evaluator, NeuralBasisEvaluator)


def _c_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _c_c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def _build_pack(evaluator) -> dict:
    cfg = evaluator.cfg
    layout = evaluator.layout
    theta = evaluator.theta
    pack: dict = {}
    if cfg.feature_map:
        blocks = range(cfg.blocks)
        pack.update(
            use_fmap=1,
            nbr=np.ascontiguousarray(evaluator.nbr, dtype=np.int64),
            stem_w=_c_f64(layout.get(theta, "fmap.stem_w")),
            stem_b=_c_f64(layout.get(theta, "fmap.stem_b")),
            n_blocks=cfg.blocks,
            dw_w=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.dw_w") for b in blocks])
                        if cfg.blocks else np.zeros((0, 1, 1))),
            dw_b=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.dw_b") for b in blocks])
                        if cfg.blocks else np.zeros((0, 1))),
            ln_g=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.ln_g") for b in blocks])
                        if cfg.blocks else np.zeros((0, 1))),
            ln_b=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.ln_b") for b in blocks])
                        if cfg.blocks else np.zeros((0, 1))),
            w1=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.w1") for b in blocks])
                      if cfg.blocks else np.zeros((0, 1, 1))),
            b1=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.b1") for b in blocks])
                      if cfg.blocks else np.zeros((0, 1))),
            w2=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.w2") for b in blocks])
                      if cfg.blocks else np.zeros((0, 1, 1))),
            b2=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.b2") for b in blocks])
                      if cfg.blocks else np.zeros((0, 1))),
            res_g=_c_f64(np.stack([layout.get(theta, f"fmap.b{b}.res_g") for b in blocks])
                         if cfg.blocks else np.zeros((0, 1))),
            fin_g=_c_f64(layout.get(theta, "fmap.final_ln_g")),
            fin_b=_c_f64(layout.get(theta, "fmap.final_ln_b")),
        )
    else:
        pack.update(
            use_fmap=0,
            nbr=np.zeros((1, 1), dtype=np.int64),
            stem_w=np.zeros((1, 1)),
            stem_b=np.zeros(1),
            n_blocks=0,
            dw_w=np.zeros((0, 1, 1)),
            dw_b=np.zeros((0, 1)),
            ln_g=np.zeros((0, 1)),
            ln_b=np.zeros((0, 1)),
            w1=np.zeros((0, 1, 1)),
            b1=np.zeros((0, 1)),
            w2=np.zeros((0, 1, 1)),
            b2=np.zeros((0, 1)),
            res_g=np.zeros((0, 1)),
            fin_g=np.zeros(1),
            fin_b=np.zeros(1),
        )
    pack.update(
        term_perms=np.ascontiguousarray(evaluator.term_perms, dtype=np.int64),
        term_phases=_c_c128(evaluator.term_phases),
        term_flips=np.ascontiguousarray(evaluator.term_flips, dtype=np.int8),
        sub_a=np.ascontiguousarray(
            evaluator.geom.sublattice_a.astype(np.int8)
        ),
        use_marshall=1 if cfg.marshall else 0,
        head_w=_c_c128(np.stack([h.w for h in evaluator.heads])),
        head_b=_c_c128(np.stack([h.b for h in evaluator.heads])),
        head_c=_c_c128(np.array([h.c for h in evaluator.heads])),
        log_bound=float(cfg.log_bound),
    )
    return pack


def _get_pack(evaluator) -> dict:
    pack = getattr(evaluator, "_compiled_pack", None)
    if pack is None:
        pack = _build_pack(evaluator)
        evaluator._compiled_pack = pack
    return pack


def run_block(evaluator, state, randoms) -> int:
    pack = _get_pack(evaluator)
    status = np.zeros(1, dtype=np.int64)
    accepted = _sweeps.run_block(
        state.configs, state.phimat, state.phiinv, state.offsets, state.logabs,
        np.ascontiguousarray(randoms),
        pack["term_perms"], pack["term_phases"], pack["term_flips"],
        pack["sub_a"], pack["use_marshall"],
        pack["use_fmap"], pack["nbr"], pack["stem_w"], pack["stem_b"],
        pack["n_blocks"], pack["dw_w"], pack["dw_b"], pack["ln_g"], pack["ln_b"],
        pack["w1"], pack["b1"], pack["w2"], pack["b2"], pack["res_g"],
        pack["fin_g"], pack["fin_b"],
        pack["head_w"], pack["head_b"], pack["head_c"],
        pack["log_bound"], state.singular_floor, state.logdet_floor,
        status,
    )
    if status[0]:
        raise AmplitudeOverflow("|log amplitude| beyond the configured bound")
    return int(accepted)


def log_amps_batch(evaluator, configs: np.ndarray) -> np.ndarray:
    """Batched projected log-amplitudes through the compiled evaluator."""
    pack = _get_pack(evaluator)
    configs = np.ascontiguousarray(configs, dtype=np.int8)
    out = np.empty((configs.shape[0], evaluator.n_states), dtype=np.complex128)
    status = np.zeros(1, dtype=np.int64)
    _sweeps.log_amps_batch(
        configs,
        pack["term_perms"], pack["term_phases"], pack["term_flips"],
        pack["sub_a"], pack["use_marshall"],
        pack["use_fmap"], pack["nbr"], pack["stem_w"], pack["stem_b"],
        pack["n_blocks"], pack["dw_w"], pack["dw_b"], pack["ln_g"], pack["ln_b"],
        pack["w1"], pack["b1"], pack["w2"], pack["b2"], pack["res_g"],
        pack["fin_g"], pack["fin_b"],
        pack["head_w"], pack["head_b"], pack["head_c"],
        pack["log_bound"], status, out,
    )
    if status[0]:
        raise AmplitudeOverflow("|log amplitude| beyond the configured bound")
    # the kernel marks exact zeros with a large negative sentinel
    out[out.real < -1e307] = complex("-inf")
    return out
