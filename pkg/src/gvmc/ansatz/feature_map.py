"""Shared real feature map: periodic convolution stem plus residual blocks
(depthwise convolution, layer normalization, inverted-bottleneck MLP with
GELU, learnable residual scale), closed by a final layer normalization.

Forward and hand-written reverse mode; cotangents may be complex (the head
outputs are complex) while all parameters stay real.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .config import AnsatzConfig, ParameterLayout, filter_dims

__all__ = ["FeatureMapParams", "neighbor_table", "fmap_forward", "fmap_vjp"]

LN_EPS = 1e-6
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def neighbor_table(cfg: AnsatzConfig) -> np.ndarray:
    """(Ns, kx*ky) gather indices of the periodic filter footprint."""
    geom = cfg.geometry
    kx, ky = filter_dims(cfg)
    offs = [(dx - kx // 2, dy - ky // 2) for dx in range(kx) for dy in range(ky)]
    table = np.empty((geom.n_sites, len(offs)), dtype=np.int64)
    for p in range(geom.n_sites):
        x, y = geom.site_xy[p]
        for m, (dx, dy) in enumerate(offs):
            table[p, m] = geom.site_index(x + dx, y + dy)
    return table


class FeatureMapParams:
    """Views of the feature-map segments of a flat parameter vector."""

    def __init__(self, theta: np.ndarray, layout: ParameterLayout, cfg: AnsatzConfig):
        self.stem_w = layout.get(theta, "fmap.stem_w")
        self.stem_b = layout.get(theta, "fmap.stem_b")
        self.blocks = []
        for b in range(cfg.blocks):
            pre = f"fmap.b{b}."
            self.blocks.append(
                {
                    key: layout.get(theta, pre + key)
                    for key in ("dw_w", "dw_b", "ln_g", "ln_b", "w1", "b1", "w2", "b2", "res_g")
                }
            )
        self.final_ln_g = layout.get(theta, "fmap.final_ln_g")
        self.final_ln_b = layout.get(theta, "fmap.final_ln_b")


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _ln_vjp(cot, g, cache):
    """Returns (dx, dg per sample, db per sample); params are per-channel."""
    xhat, inv = cache
    dg = (cot * xhat).sum(axis=1)  # (B, C): sum over sites
    db = cot.sum(axis=1)
    gdy = cot * g
    mean1 = gdy.mean(axis=-1, keepdims=True)
    mean2 = (gdy * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (gdy - mean1 - xhat * mean2)
    return dx, dg, db


def fmap_forward(fp: FeatureMapParams, configs: np.ndarray, nbr: np.ndarray):
    """configs (B, Ns) in {-1, +1} float -> features (B, Ns*C) plus cache."""
    x = np.asarray(configs, dtype=np.float64)
    patches = x[:, nbr]  # (B, Ns, K)
    y = patches @ fp.stem_w + fp.stem_b  # (B, Ns, C)
    cache = {"patches": patches, "blocks": []}
    for blk in fp.blocks:
        xin = y
        dwp = xin[:, nbr, :]  # (B, Ns, K, C)
        x1 = np.einsum("bpkc,kc->bpc", dwp, blk["dw_w"]) + blk["dw_b"]
        x2, ln_cache = _ln_forward(x1, blk["ln_g"], blk["ln_b"])
        a1 = x2 @ blk["w1"] + blk["b1"]
        g1 = _gelu(a1)
        a2 = g1 @ blk["w2"] + blk["b2"]
        y = xin + blk["res_g"] * a2
        cache["blocks"].append({"xin": xin, "x2": x2, "a1": a1, "g1": g1, "a2": a2, "ln": ln_cache})
    z, final_cache = _ln_forward(y, fp.final_ln_g, fp.final_ln_b)
    cache["final_ln"] = final_cache
    b = x.shape[0]
    return z.reshape(b, -1), cache


def fmap_vjp(
    fp: FeatureMapParams, cache: dict, cot: np.ndarray, nbr: np.ndarray
) -> dict[str, np.ndarray]:
    """Per-sample parameter gradients for a (B, Ns*C) cotangent.

    Returns a dict keyed like the layout segment names (without the fmap.
    prefix), each entry shaped (B, *segment shape).
    """
    b = cot.shape[0]
    c = fp.stem_b.shape[0]
    dy = cot.reshape(b, -1, c)
    grads: dict[str, np.ndarray] = {}
    dy, grads["final_ln_g"], grads["final_ln_b"] = _ln_vjp(dy, fp.final_ln_g, cache["final_ln"])
    for idx in range(len(fp.blocks) - 1, -1, -1):
        blk = fp.blocks[idx]
        bc = cache["blocks"][idx]
        pre = f"b{idx}."
        grads[pre + "res_g"] = (dy * bc["a2"]).sum(axis=1)
        da2 = dy * blk["res_g"]
        grads[pre + "w2"] = np.einsum("bpf,bpc->bfc", bc["g1"], da2)
        grads[pre + "b2"] = da2.sum(axis=1)
        dg1 = da2 @ blk["w2"].T
        da1 = dg1 * _gelu_grad(bc["a1"])
        grads[pre + "w1"] = np.einsum("bpc,bpf->bcf", bc["x2"], da1)
        grads[pre + "b1"] = da1.sum(axis=1)
        dx2 = da1 @ blk["w1"].T
        dx1, grads[pre + "ln_g"], grads[pre + "ln_b"] = _ln_vjp(dx2, blk["ln_g"], bc["ln"])
        grads[pre + "dw_w"] = np.einsum("bpkc,bpc->bkc", bc["xin"][:, nbr, :], dx1)
        grads[pre + "dw_b"] = dx1.sum(axis=1)
        dxin = np.zeros_like(dy)
        scatter = dx1[:, :, None, :] * blk["dw_w"][None, None, :, :]  # (B, Ns, K, C)
        np.add.at(
            dxin,
            (np.arange(b)[:, None], nbr.reshape(1, -1)),
            scatter.reshape(b, -1, c),
        )
        dy = dxin + dy
    grads["stem_w"] = np.einsum("bpk,bpc->bkc", cache["patches"], dy)
    grads["stem_b"] = dy.sum(axis=1)
    return grads
