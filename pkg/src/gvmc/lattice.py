"""Spin-1/2 Heisenberg model on periodic rectangular lattices.

Conventions: spins are stored as +-1 (units of 2*Sz), energies in units of
the exchange coupling, and each nearest-neighbor bond is counted once.  A
direction of length 2 produces the same site pair twice; those duplicates
are merged with doubled weight, except for the degenerate two-site system
where the single physical bond keeps unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from .errors import NonBipartite

__all__ = [
    "LatticeGeometry",
    "ConnectedSet",
    "HeisenbergOperator",
    "StructureFactorOperator",
    "DiagonalOperator",
    "IdentityOperator",
    "DenseSectorOperator",
    "heisenberg_connections",
    "marshall_gauge",
    "marshall_signs",
    "structure_factor_rows",
    "sector_enumerate",
    "pack_configs",
    "momentum_grid",
]


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic Lx x Ly lattice; Ly=1 gives a chain."""

    lx: int
    ly: int = 1

    def __post_init__(self):
        if self.lx < 1 or self.ly < 1 or self.n_sites < 2:
            raise ValueError(f"need at least two sites, got {self.lx}x{self.ly}")

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    def site_index(self, x: int, y: int) -> int:
        return (x % self.lx) * self.ly + (y % self.ly)

    @cached_property
    def site_xy(self) -> np.ndarray:
        """(Ns, 2) array of (x, y) coordinates, inverse of site_index."""
        xy = np.empty((self.n_sites, 2), dtype=np.int64)
        for x in range(self.lx):
            for y in range(self.ly):
                xy[self.site_index(x, y)] = (x, y)
        return xy

    @cached_property
    def bonds(self) -> np.ndarray:
        """(nb, 3) array of (i, j, weight); weight 2 for merged length-2 wraps."""
        counts: dict[tuple[int, int], int] = {}
        for d, length in ((0, self.lx), (1, self.ly)):
            if length < 2:
                continue
            for p in range(self.n_sites):
                x, y = self.site_xy[p]
                q = self.site_index(x + 1, y) if d == 0 else self.site_index(x, y + 1)
                key = (min(p, q), max(p, q))
                counts[key] = counts.get(key, 0) + 1
        if self.n_sites == 2:
            # single physical pair: the periodic wrap duplicates it, keep weight 1
            counts = {k: 1 for k in counts}
        return np.array(
            [(i, j, w) for (i, j), w in sorted(counts.items())], dtype=np.int64
        )

    @cached_property
    def translations(self) -> np.ndarray:
        """(T, 2) array of all lattice translation vectors (tx, ty)."""
        return np.array(
            [(tx, ty) for tx in range(self.lx) for ty in range(self.ly)],
            dtype=np.int64,
        )

    @cached_property
    def translation_tables(self) -> np.ndarray:
        """(T, Ns) index tables: translated config = config[table[t]].

        Row t implements (T_t s)(x, y) = s(x - tx, y - ty).
        """
        tables = np.empty((len(self.translations), self.n_sites), dtype=np.int64)
        for t, (tx, ty) in enumerate(self.translations):
            for p in range(self.n_sites):
                x, y = self.site_xy[p]
                tables[t, p] = self.site_index(x - tx, y - ty)
        return tables

    @cached_property
    def sublattice_a(self) -> np.ndarray:
        """Boolean mask of sublattice A sites ((x + y) even)."""
        return ((self.site_xy[:, 0] + self.site_xy[:, 1]) % 2 == 0)

    @property
    def bipartite(self) -> bool:
        return all(length % 2 == 0 for length in (self.lx, self.ly) if length >= 2)

    def translate(self, config: np.ndarray, tx: int, ty: int) -> np.ndarray:
        t = (tx % self.lx) * self.ly + (ty % self.ly)
        return np.asarray(config)[..., self.translation_tables[t]]


@dataclass(frozen=True)
class ConnectedSet:
    """Rows of an operator at one configuration: sum_m amps[m] * |configs[m]>.

    The diagonal pair is always entry 0, even when its amplitude vanishes.
    """

    configs: np.ndarray  # (m, Ns) int8
    amplitudes: np.ndarray  # (m,) complex128


def _as_config_batch(configs) -> np.ndarray:
    arr = np.asarray(configs, dtype=np.int8)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def heisenberg_connected_batch(geom: LatticeGeometry, configs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Hamiltonian rows for a batch of configurations.

    Returns (flat_configs, flat_amps, offsets) in CSR-like layout; entries of
    row b live in slice offsets[b]:offsets[b+1], with the diagonal pair first.
    """
    batch = _as_config_batch(configs)
    nb, ns = batch.shape
    bonds = geom.bonds
    si = batch[:, bonds[:, 0]].astype(np.float64)
    sj = batch[:, bonds[:, 1]].astype(np.float64)
    w = bonds[:, 2].astype(np.float64)
    diag = 0.25 * (w * si * sj).sum(axis=1)
    anti = si != sj  # (nb, n_bonds)

    counts = 1 + anti.sum(axis=1)
    offsets = np.zeros(nb + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    flat_configs = np.empty((total, ns), dtype=np.int8)
    flat_amps = np.zeros(total, dtype=np.complex128)

    flat_configs[offsets[:-1]] = batch
    flat_amps[offsets[:-1]] = diag
    cursor = offsets[:-1] + 1
    for b_idx in range(len(bonds)):
        rows = np.nonzero(anti[:, b_idx])[0]
        if rows.size == 0:
            continue
        pos = cursor[rows]
        flipped = batch[rows].copy()
        i, j = bonds[b_idx, 0], bonds[b_idx, 1]
        flipped[:, [i, j]] = flipped[:, [j, i]]
        flat_configs[pos] = flipped
        flat_amps[pos] = 0.5 * bonds[b_idx, 2]
        cursor[rows] += 1
    return flat_configs, flat_amps, offsets


def heisenberg_connections(geom: LatticeGeometry, config) -> ConnectedSet:
    """All <s'|H|s> rows for one configuration (spin-exchange convention)."""
    config = np.asarray(config, dtype=np.int8)
    if config.shape != (geom.n_sites,):
        raise ValueError(f"config shape {config.shape} != ({geom.n_sites},)")
    flat_configs, flat_amps, _ = heisenberg_connected_batch(geom, config)
    return ConnectedSet(flat_configs, flat_amps)


def marshall_signs(geom: LatticeGeometry, configs) -> np.ndarray:
    """(-1)^(down spins on sublattice A) for one or many configurations."""
    if not geom.bipartite:
        raise NonBipartite(f"{geom.lx}x{geom.ly} lattice is not bipartite")
    batch = _as_config_batch(configs)
    n_down_a = ((batch[:, geom.sublattice_a] == -1).sum(axis=1))
    return np.where(n_down_a % 2 == 0, 1, -1).astype(np.int8)


def marshall_gauge(geom: LatticeGeometry, config) -> int:
    return int(marshall_signs(geom, config)[0])


def momentum_phases(geom: LatticeGeometry, k: tuple[int, int]) -> np.ndarray:
    """exp(-i k.l) over all sites, with k in integer units of (2pi/Lx, 2pi/Ly)."""
    kx, ky = k
    xy = geom.site_xy
    phase = -2j * np.pi * (kx * xy[:, 0] / geom.lx + ky * xy[:, 1] / geom.ly)
    return np.exp(phase)


def structure_factor_values(geom: LatticeGeometry, k: tuple[int, int], configs) -> np.ndarray:
    """Diagonal values of S_k: (1/sqrt(Ns)) sum_l exp(-i k.l) s_l / 2."""
    batch = _as_config_batch(configs).astype(np.float64)
    phases = momentum_phases(geom, k)
    return (batch * 0.5) @ phases / np.sqrt(geom.n_sites)


def structure_factor_rows(geom: LatticeGeometry, k: tuple[int, int], config) -> ConnectedSet:
    """S_k rows for one configuration (diagonal operator in the Sz basis)."""
    kx, ky = k
    if kx % 1 != 0 or ky % 1 != 0:
        raise ValueError("momentum must be integer multiples of 2pi/L")
    config = np.asarray(config, dtype=np.int8)
    value = structure_factor_values(geom, k, config)[0]
    return ConnectedSet(config[None, :].copy(), np.array([value], dtype=np.complex128))


def momentum_grid(geom: LatticeGeometry) -> list[tuple[int, int]]:
    """All distinct lattice momenta, integer units of (2pi/Lx, 2pi/Ly)."""
    return [(kx, ky) for kx in range(geom.lx) for ky in range(geom.ly)]


def sector_enumerate(geom: LatticeGeometry, total_sz: int) -> np.ndarray:
    """All configurations with sum(spins) = 2*total_sz, lexicographic order.

    Lexicographic on the +-1 sequence with -1 < +1; an incompatible sector is
    an empty (0, Ns) array, not an error.
    """
    ns = geom.n_sites
    twice = 2 * total_sz
    if (ns + twice) % 2 != 0 or abs(twice) > ns:
        return np.empty((0, ns), dtype=np.int8)
    n_up = (ns + twice) // 2
    keys = sorted(
        sum(1 << (ns - 1 - p) for p in pos) for pos in combinations(range(ns), n_up)
    )
    configs = np.empty((len(keys), ns), dtype=np.int8)
    for row, key in enumerate(keys):
        for p in range(ns):
            configs[row, p] = 1 if (key >> (ns - 1 - p)) & 1 else -1
    return configs


def pack_configs(configs) -> np.ndarray:
    """Pack +-1 configurations into int64 keys (site 0 most significant)."""
    batch = _as_config_batch(configs)
    ns = batch.shape[1]
    if ns > 62:
        raise ValueError("packing supports at most 62 sites")
    bits = (batch > 0).astype(np.int64)
    weights = 1 << np.arange(ns - 1, -1, -1, dtype=np.int64)
    return bits @ weights


class HeisenbergOperator:
    """Heisenberg Hamiltonian as a connected-rows callback."""

    def __init__(self, geom: LatticeGeometry):
        self.geom = geom

    def connected(self, configs):
        return heisenberg_connected_batch(self.geom, configs)


class DiagonalOperator:
    """Operator diagonal in the Sz basis, defined by a value callback."""

    def __init__(self, values_fn):
        self._values_fn = values_fn

    def connected(self, configs):
        batch = _as_config_batch(configs)
        amps = np.asarray(self._values_fn(batch), dtype=np.complex128)
        offsets = np.arange(batch.shape[0] + 1, dtype=np.int64)
        return batch.copy(), amps, offsets


class StructureFactorOperator(DiagonalOperator):
    def __init__(self, geom: LatticeGeometry, k: tuple[int, int]):
        super().__init__(lambda batch: structure_factor_values(geom, k, batch))
        self.geom = geom
        self.k = k

    def adjoint(self) -> "StructureFactorOperator":
        kx, ky = self.k
        return StructureFactorOperator(self.geom, (-kx % self.geom.lx, -ky % self.geom.ly))


class IdentityOperator(DiagonalOperator):
    def __init__(self):
        super().__init__(lambda batch: np.ones(batch.shape[0]))


class DenseSectorOperator:
    """Dense matrix on an enumerated sector, exposed as connected rows.

    Used by tests to push arbitrary (e.g. random Hermitian) operators through
    the same estimator code path as production operators.
    """

    def __init__(self, matrix: np.ndarray, sector_configs: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.complex128)
        self.sector_configs = np.asarray(sector_configs, dtype=np.int8)
        self._keys = pack_configs(self.sector_configs)
        if self.matrix.shape != (len(self._keys), len(self._keys)):
            raise ValueError("matrix shape does not match sector size")

    def lookup(self, configs) -> np.ndarray:
        keys = pack_configs(configs)
        idx = np.searchsorted(self._keys, keys)
        if np.any(idx >= len(self._keys)) or np.any(self._keys[np.minimum(idx, len(self._keys) - 1)] != keys):
            raise ValueError("configuration outside the operator's sector")
        return idx

    def connected(self, configs):
        batch = _as_config_batch(configs)
        rows = self.lookup(batch)
        m = len(self._keys)
        nb = batch.shape[0]
        # dense rows: every sector configuration connects, diagonal first
        order = np.empty((nb, m), dtype=np.int64)
        order[:, 0] = rows
        rest = np.tile(np.arange(m, dtype=np.int64), (nb, 1))
        mask = rest != rows[:, None]
        order[:, 1:] = rest[mask].reshape(nb, m - 1)
        flat_idx = order.reshape(-1)
        flat_configs = self.sector_configs[flat_idx]
        flat_amps = self.matrix[np.repeat(rows, m), flat_idx]
        offsets = np.arange(nb + 1, dtype=np.int64) * m
        return flat_configs, flat_amps.astype(np.complex128), offsets
