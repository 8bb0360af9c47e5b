"""Exact diagonalization on fixed-magnetization sectors.

Dense spectra for small sectors, Krylov (Lanczos with full
reorthogonalization, via ARPACK) up to the 4x4 zero-magnetization sector.
Operator application is matrix-free from the lattice connections; a sparse
matrix is materialized only when its entry count stays small.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grassmann, lattice
from .errors import NoConvergence, SectorTooLarge

__all__ = [
    "SectorBasis",
    "SectorHamiltonian",
    "SpectrumResult",
    "lowest_k",
    "exact_observable",
    "grassmann_optimality_check",
    "momentum_sector_spectrum",
    "spectrum_rows",
]

MAX_SECTOR_DIM = 20000
MAX_STORED_ENTRIES = 100_000
DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class SectorBasis:
    """Lexicographically ordered configurations of one magnetization sector."""

    geom: lattice.LatticeGeometry
    total_sz: int

    @cached_property
    def configs(self) -> np.ndarray:
        return lattice.sector_enumerate(self.geom, self.total_sz)

    @cached_property
    def keys(self) -> np.ndarray:
        return lattice.pack_configs(self.configs)

    @property
    def dim(self) -> int:
        return self.configs.shape[0]

    def index(self, configs) -> np.ndarray:
        """Row indices of configurations; raises if any lies outside the sector."""
        keys = lattice.pack_configs(configs)
        idx = np.searchsorted(self.keys, keys)
        if np.any(idx >= self.dim) or np.any(self.keys[np.minimum(idx, self.dim - 1)] != keys):
            raise ValueError("configuration outside sector")
        return idx


class SectorHamiltonian:
    """Heisenberg Hamiltonian restricted to a sector, applied matrix-free."""

    def __init__(self, sector: SectorBasis):
        self.sector = sector
        geom = sector.geom
        self._estimated_entries = sector.dim * (1 + len(geom.bonds))
        self._csr = self._build_csr() if self._estimated_entries <= MAX_STORED_ENTRIES else None

    def _build_csr(self) -> sp.csr_matrix:
        sector = self.sector
        flat_configs, flat_amps, offsets = lattice.heisenberg_connected_batch(
            sector.geom, sector.configs
        )
        cols = sector.index(flat_configs)
        rows = np.repeat(np.arange(sector.dim), np.diff(offsets))
        mat = sp.csr_matrix(
            (flat_amps.real, (rows, cols)), shape=(sector.dim, sector.dim)
        )
        return mat

    @cached_property
    def _bond_maps(self):
        """Per-bond exchange permutations used by the matrix-free product."""
        sector = self.sector
        geom = sector.geom
        configs = sector.configs
        maps = []
        for i, j, w in geom.bonds:
            anti = configs[:, i] != configs[:, j]
            src = np.nonzero(anti)[0]
            flipped = configs[src].copy()
            flipped[:, [i, j]] = flipped[:, [j, i]]
            dst = sector.index(flipped)
            si = configs[:, i].astype(np.float64)
            sj = configs[:, j].astype(np.float64)
            maps.append((src, dst, float(w), 0.25 * w * si * sj))
        return maps

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        if self._csr is not None:
            return self._csr @ vec
        out = np.zeros_like(vec, dtype=np.result_type(vec, np.float64))
        for src, dst, w, diag in self._bond_maps:
            out += diag * vec
            out[dst] += (0.5 * w) * vec[src]
        return out

    def dense(self) -> np.ndarray:
        if self.sector.dim > 4096:
            raise SectorTooLarge(f"dense Hamiltonian refused at dim {self.sector.dim}")
        if self._csr is not None:
            return self._csr.toarray()
        eye = np.eye(self.sector.dim)
        return np.column_stack([self.matvec(eye[:, c]) for c in range(self.sector.dim)])

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(
            (self.sector.dim, self.sector.dim), matvec=self.matvec, dtype=np.float64
        )


@dataclass(frozen=True)
class SpectrumResult:
    energies: np.ndarray  # k lowest, ascending
    states: grassmann.DenseSubspaceBasis  # eigenvectors over the sector
    sector: SectorBasis

    def degeneracies(self, tol: float = DEGENERACY_TOL) -> np.ndarray:
        """Multiplicity label per level (within this computed window)."""
        groups = np.zeros(len(self.energies), dtype=np.int64)
        gid = 0
        for i in range(1, len(self.energies)):
            if self.energies[i] - self.energies[i - 1] > tol:
                gid += 1
            groups[i] = gid
        return np.array([(groups == groups[i]).sum() for i in range(len(groups))])


def lowest_k(
    geom: lattice.LatticeGeometry,
    total_sz: int,
    k: int,
    seed: int = 0,
    maxiter: int | None = None,
) -> SpectrumResult:
    """k lowest eigenpairs of the sector Hamiltonian, deterministic given seed."""
    sector = SectorBasis(geom, total_sz)
    if sector.dim == 0:
        raise ValueError("empty sector")
    if sector.dim > MAX_SECTOR_DIM:
        raise SectorTooLarge(f"sector dimension {sector.dim} > {MAX_SECTOR_DIM}")
    ham = SectorHamiltonian(sector)
    if sector.dim <= 500 or k >= sector.dim - 1:
        dense = ham.dense()
        energies, vectors = np.linalg.eigh(dense)
        energies, vectors = energies[:k], vectors[:, :k]
    else:
        v0 = np.random.default_rng(seed).standard_normal(sector.dim)
        try:
            energies, vectors = spla.eigsh(
                ham.as_linear_operator(), k=k, which="SA", v0=v0, maxiter=maxiter
            )
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(str(exc)) from exc
        order = np.argsort(energies)
        energies, vectors = energies[order], vectors[:, order]
    for col in range(k):
        residual = np.linalg.norm(ham.matvec(vectors[:, col]) - energies[col] * vectors[:, col])
        if residual > 1e-8 * max(1.0, abs(energies[col])):
            raise NoConvergence(f"residual {residual:.3e} for level {col}")
    return SpectrumResult(energies, grassmann.DenseSubspaceBasis(vectors), sector)


def exact_observable(states: grassmann.DenseSubspaceBasis, op) -> grassmann.SubspaceMatrix:
    """Dense expectation matrix of `op` on a (sub)space over the sector basis."""
    return grassmann.oem(states, op)


def sector_operator_matrix(sector: SectorBasis, op) -> np.ndarray:
    """Dense sector matrix of a connected-rows operator (small sectors only)."""
    if sector.dim > 4096:
        raise SectorTooLarge(f"dense operator refused at dim {sector.dim}")
    flat_configs, flat_amps, offsets = op.connected(sector.configs)
    cols = sector.index(flat_configs)
    rows = np.repeat(np.arange(sector.dim), np.diff(offsets))
    mat = np.zeros((sector.dim, sector.dim), dtype=np.complex128)
    np.add.at(mat, (rows, cols), flat_amps)
    return mat


def grassmann_optimality_check(
    geom: lattice.LatticeGeometry,
    total_sz: int,
    n: int,
    trials: int,
    seed: int = 0,
) -> bool:
    """True iff the span of the n lowest eigenvectors beats `trials` random
    n-dimensional subspaces on the mean projected energy (1/n) Tr OEM(H)."""
    sector = SectorBasis(geom, total_sz)
    if sector.dim > 500:
        raise SectorTooLarge("optimality check is a small-sector diagnostic")
    dense = SectorHamiltonian(sector).dense()
    energies, vectors = np.linalg.eigh(dense)
    best = energies[:n].mean()
    if n == sector.dim:
        return True  # every subspace is the whole sector
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        kets = rng.standard_normal((sector.dim, n)) + 1j * rng.standard_normal((sector.dim, n))
        basis = grassmann.DenseSubspaceBasis(kets)
        value = np.trace(grassmann.oem(basis, dense).entries).real / n
        if value <= best + 1e-12:
            return False
    return True


def _translation_permutations(sector: SectorBasis) -> list[tuple[tuple[int, int], np.ndarray]]:
    geom = sector.geom
    perms = []
    for t, (tx, ty) in enumerate(geom.translations):
        translated = sector.configs[:, geom.translation_tables[t]]
        perms.append(((int(tx), int(ty)), sector.index(translated)))
    return perms


def momentum_sector_spectrum(
    geom: lattice.LatticeGeometry,
    total_sz: int,
    momentum: tuple[int, int],
    k: int | None = None,
) -> np.ndarray:
    """Energies within one translation symmetry sector (dense, desk scale).

    The projector selects vectors v with v(T_t s) = exp(i q.t) v(s), matching
    the convention used by the symmetrized ansatz.  Supported for chains and
    small rectangles where the dense sector Hamiltonian is affordable.
    """
    sector = SectorBasis(geom, total_sz)
    if sector.dim > 500:
        raise SectorTooLarge("momentum-resolved spectra are desk-scale only")
    proj = np.zeros((sector.dim, sector.dim), dtype=np.complex128)
    qx, qy = momentum
    for (tx, ty), perm in _translation_permutations(sector):
        phase = np.exp(-2j * np.pi * (qx * tx / geom.lx + qy * ty / geom.ly))
        # (Pi_t v)(s) = v(T_t s): permutation rows gather translated entries
        mat = np.zeros((sector.dim, sector.dim))
        mat[np.arange(sector.dim), perm] = 1.0
        proj += phase * mat
    proj /= len(geom.translations)
    dense = SectorHamiltonian(sector).dense()
    evals, evecs = np.linalg.eigh(0.5 * (proj + proj.conj().T))
    cols = evecs[:, evals > 0.5]
    if cols.shape[1] == 0:
        return np.array([])
    block = cols.conj().T @ dense @ cols
    energies = np.linalg.eigvalsh(0.5 * (block + block.conj().T))
    return energies if k is None else energies[:k]


def spectrum_rows(result: SpectrumResult) -> list[dict]:
    """CSV-ready rows (level index, energy, degeneracy)."""
    degs = result.degeneracies()
    return [
        {"level": i, "energy": float(result.energies[i]), "degeneracy": int(degs[i])}
        for i in range(len(result.energies))
    ]
