"""Vectorized-over-chains Metropolis sweeps (pure NumPy reference backend).

Move semantics shared with the compiled kernel: pick a row uniformly, pick
one up and one down site uniformly within that row's configuration, exchange
them, and accept with min(1, |det ratio|^2).  The determinant ratio is a
rank-one update against the cached inverse; accepted rows trigger a full
refactorization of the small overlap matrix.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ChainState", "run_block"]


class ChainState:
    """Lockstep state of n_chains Markov chains.

    Two determinant floors: `logdet_floor` rejects raw |det Phi| underflow
    (natural log, offsets included) and `singular_floor` rejects rescaled
    determinants in float-noise territory, where an exactly zero determinant
    (repeated or symmetry-equivalent rows) shows up as ~1e-16 of row scale.
    """

    def __init__(self, configs, phimat, offsets, logabs, logdet_floor,
                 singular_floor=-30.0):
        self.configs = configs  # (nc, N, Ns) int8
        self.phimat = phimat  # (nc, N, N) complex, row-rescaled
        self.phiinv = np.linalg.inv(phimat)
        self.offsets = offsets  # (nc, N)
        self.logabs = logabs  # (nc,) log|det| of the rescaled matrix
        self.logdet_floor = float(logdet_floor)
        self.singular_floor = float(singular_floor)
        nc, n_rows, ns = configs.shape
        self.n_chains = nc
        self.n_rows = n_rows
        self.n_sites = ns
        self.n_up = int((configs[0, 0] == 1).sum())
        self.n_down = ns - self.n_up

    def snapshot(self):
        return (
            self.configs.copy(),
            self.phimat.copy(),
            self.offsets.copy(),
            self.logabs.copy(),
        )


def _kth_site(rows: np.ndarray, value: int, k: np.ndarray) -> np.ndarray:
    """Site index of the (k+1)-th occurrence of `value` in each row."""
    mask = rows == value
    cum = np.cumsum(mask, axis=1)
    return np.argmax(cum == (k + 1)[:, None], axis=1)


def run_block(evaluator, state: ChainState, randoms: np.ndarray) -> int:
    """Advance all chains by randoms.shape[1] sweeps in place."""
    nc = state.n_chains
    chain_idx = np.arange(nc)
    n_sweeps = randoms.shape[1]
    moves = randoms.shape[2]
    accepted_total = 0
    for s in range(n_sweeps):
        for m in range(moves):
            u = randoms[:, s, m]  # (nc, 4)
            r = np.minimum((u[:, 0] * state.n_rows).astype(np.int64), state.n_rows - 1)
            rows = state.configs[chain_idx, r]  # (nc, Ns)
            k_up = np.minimum((u[:, 1] * state.n_up).astype(np.int64), state.n_up - 1)
            k_dn = np.minimum((u[:, 2] * state.n_down).astype(np.int64), state.n_down - 1)
            i_up = _kth_site(rows, 1, k_up)
            i_dn = _kth_site(rows, -1, k_dn)
            proposal = rows.copy()
            proposal[chain_idx, i_up] = -1
            proposal[chain_idx, i_dn] = 1

            la = evaluator.log_amps(proposal)  # (nc, N)
            old_off = state.offsets[chain_idx, r]
            with np.errstate(over="ignore", invalid="ignore"):
                rhat = np.exp(la - old_off[:, None])
            rhat[~np.isfinite(la.real)] = 0.0
            ratio = np.einsum("cj,cj->c", rhat, state.phiinv[chain_idx, :, r])
            ratio_sq = np.abs(ratio) ** 2
            new_off = la.real.max(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                pred_logabs = state.logabs + np.log(np.abs(ratio)) + old_off - new_off
            off_sum = state.offsets.sum(axis=1) - old_off + new_off
            accept = (
                np.isfinite(ratio_sq)
                & (u[:, 3] < ratio_sq)
                & np.isfinite(new_off)
                & (pred_logabs > state.singular_floor)
                & (pred_logabs + off_sum > state.logdet_floor)
            )
            idx = np.nonzero(accept)[0]
            if idx.size == 0:
                continue
            accepted_total += idx.size
            state.configs[idx, r[idx]] = proposal[idx]
            state.offsets[idx, r[idx]] = new_off[idx]
            state.phimat[idx, r[idx], :] = np.exp(la[idx] - new_off[idx, None])
            state.phiinv[idx] = np.linalg.inv(state.phimat[idx])
            _, state.logabs[idx] = np.linalg.slogdet(state.phimat[idx])
    return accepted_total
