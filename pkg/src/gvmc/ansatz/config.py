"""Ansatz configuration and flat parameter layout."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import cached_property

import numpy as np

from ..lattice import LatticeGeometry

__all__ = ["AnsatzConfig", "ParameterLayout", "build_layout"]


@dataclass(frozen=True)
class AnsatzConfig:
    """Shared feature map feeding N complex RBM heads, with optional
    momentum / spin-flip symmetrization and a sublattice sign gauge.

    Momentum components are integers in units of (2pi/Lx, 2pi/Ly); spin_flip
    is the +-1 sector label (0 even, 1 odd) or None for no projection.
    """

    lx: int
    ly: int
    n_states: int
    feature_map: bool = True
    channels: int = 4
    filter_size: int = 3
    blocks: int = 1
    expansion: int = 2
    hidden: int = 8
    momentum: tuple[int, int] | None = None
    spin_flip: int | None = None
    marshall: bool = False
    log_bound: float = 200.0

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.spin_flip not in (None, 0, 1):
            raise ValueError("spin_flip must be None, 0 or 1")
        if self.momentum is not None:
            object.__setattr__(self, "momentum", (int(self.momentum[0]), int(self.momentum[1])))

    @property
    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.lx, self.ly)

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def n_features(self) -> int:
        return self.n_sites * self.channels if self.feature_map else self.n_sites

    def to_dict(self) -> dict:
        d = asdict(self)
        d["momentum"] = list(self.momentum) if self.momentum is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnsatzConfig":
        d = dict(d)
        if d.get("momentum") is not None:
            d["momentum"] = tuple(d["momentum"])
        return cls(**d)


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]
    is_complex: bool  # stored as [all real parts, all imaginary parts]

    @property
    def size(self) -> int:
        n = int(np.prod(self.shape))
        return 2 * n if self.is_complex else n


@dataclass(frozen=True)
class ParameterLayout:
    """Bijection between the flat real parameter vector and named arrays."""

    segments: tuple[Segment, ...]

    @cached_property
    def by_name(self) -> dict[str, Segment]:
        return {s.name: s for s in self.segments}

    @property
    def size(self) -> int:
        return sum(s.size for s in self.segments)

    @cached_property
    def n_shared(self) -> int:
        return sum(s.size for s in self.segments if s.name.startswith("fmap."))

    def slice(self, name: str) -> slice:
        seg = self.by_name[name]
        return slice(seg.offset, seg.offset + seg.size)

    def get(self, theta: np.ndarray, name: str) -> np.ndarray:
        seg = self.by_name[name]
        flat = theta[self.slice(name)]
        if seg.is_complex:
            n = int(np.prod(seg.shape))
            return (flat[:n] + 1j * flat[n:]).reshape(seg.shape)
        return flat.reshape(seg.shape)

    def set(self, theta: np.ndarray, name: str, value: np.ndarray) -> None:
        seg = self.by_name[name]
        if seg.is_complex:
            n = int(np.prod(seg.shape))
            theta[seg.offset : seg.offset + n] = np.real(value).ravel()
            theta[seg.offset + n : seg.offset + 2 * n] = np.imag(value).ravel()
        else:
            theta[self.slice(name)] = np.real(value).ravel()

    def head_slice(self, j: int) -> slice:
        segs = [s for s in self.segments if s.name.startswith(f"head{j}.")]
        start = min(s.offset for s in segs)
        stop = max(s.offset + s.size for s in segs)
        return slice(start, stop)

    def table(self) -> list[dict]:
        return [
            {
                "name": s.name,
                "offset": s.offset,
                "shape": list(s.shape),
                "complex": s.is_complex,
            }
            for s in self.segments
        ]

    @classmethod
    def from_table(cls, table: list[dict]) -> "ParameterLayout":
        return cls(
            tuple(
                Segment(r["name"], int(r["offset"]), tuple(r["shape"]), bool(r["complex"]))
                for r in table
            )
        )


def filter_dims(cfg: AnsatzConfig) -> tuple[int, int]:
    """Filter extent clipped to the lattice (a chain gets a 1-wide y filter)."""
    return min(cfg.filter_size, cfg.lx), min(cfg.filter_size, cfg.ly)


def build_layout(cfg: AnsatzConfig) -> ParameterLayout:
    segments: list[Segment] = []
    offset = 0

    def add(name: str, shape: tuple[int, ...], is_complex: bool = False):
        nonlocal offset
        seg = Segment(name, offset, shape, is_complex)
        segments.append(seg)
        offset += seg.size

    if cfg.feature_map:
        kx, ky = filter_dims(cfg)
        c = cfg.channels
        add("fmap.stem_w", (kx * ky, c))
        add("fmap.stem_b", (c,))
        for b in range(cfg.blocks):
            add(f"fmap.b{b}.dw_w", (kx * ky, c))
            add(f"fmap.b{b}.dw_b", (c,))
            add(f"fmap.b{b}.ln_g", (c,))
            add(f"fmap.b{b}.ln_b", (c,))
            add(f"fmap.b{b}.w1", (c, cfg.expansion * c))
            add(f"fmap.b{b}.b1", (cfg.expansion * c,))
            add(f"fmap.b{b}.w2", (cfg.expansion * c, c))
            add(f"fmap.b{b}.b2", (c,))
            add(f"fmap.b{b}.res_g", (c,))
        add("fmap.final_ln_g", (c,))
        add("fmap.final_ln_b", (c,))
    f = cfg.n_features
    for j in range(cfg.n_states):
        add(f"head{j}.w", (cfg.hidden, f), is_complex=True)
        add(f"head{j}.b", (cfg.hidden,), is_complex=True)
        add(f"head{j}.c", (1,), is_complex=True)
    return ParameterLayout(tuple(segments))
