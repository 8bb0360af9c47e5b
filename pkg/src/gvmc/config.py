"""Run configuration: one YAML file per run, validated strictly.

The file is two levels deep (section -> key -> scalar); diagnostics name
fields by their dotted path.  Environment overrides are limited to GVMC_SEED
and GVMC_OUT.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ansatz import AnsatzConfig
from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_config"]

SCHEMA_VERSION = 1


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _opt(pred):
    return lambda v: v is None or pred(v)


def _int_pair(v):
    return (
        isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_int(x) for x in v)
    )


_SCHEMA = {
    "seed": _is_int,
    "lattice": {"lx": _is_int, "ly": _is_int},
    "sector": {
        "total_sz": _is_int,
        "momentum": _opt(_int_pair),
        "spin_flip": lambda v: v in (None, 0, 1),
    },
    "subspace": {"n_states": _is_int},
    "ansatz": {
        "feature_map": lambda v: isinstance(v, bool),
        "channels": _is_int,
        "filter_size": _is_int,
        "blocks": _is_int,
        "expansion": _is_int,
        "hidden": _is_int,
        "marshall": lambda v: isinstance(v, bool),
    },
    "sampler": {
        "n_chains": _is_int,
        "samples_per_step": _is_int,
        "warmup_sweeps": _opt(_is_int),
        "thinning": _is_int,
        "backend": lambda v: v in ("auto", "numpy", "compiled"),
    },
    "optimizer": {
        "learning_rate": _opt(_is_num),
        "diag_shift": _is_num,
        "solver": lambda v: v in ("auto", "dense", "implicit"),
        "max_steps": _is_int,
        "warmup_steps": _is_int,
        "variance_target": _opt(_is_num),
        "checkpoint_interval": _is_int,
        "final_samples": _is_int,
    },
    "output": {"directory": lambda v: isinstance(v, str)},
}

_DEFAULTS = {
    "seed": 0,
    "sector": {"total_sz": 0, "momentum": None, "spin_flip": None},
    "ansatz": {
        "feature_map": True, "channels": 4, "filter_size": 3, "blocks": 1,
        "expansion": 2, "hidden": 8, "marshall": True,
    },
    "sampler": {
        "n_chains": 16, "samples_per_step": 512, "warmup_sweeps": None,
        "thinning": 1, "backend": "auto",
    },
    "optimizer": {
        "learning_rate": None, "diag_shift": 1e-3, "solver": "auto",
        "max_steps": 1000, "warmup_steps": 0, "variance_target": None,
        "checkpoint_interval": 200, "final_samples": 4096,
    },
    "output": {"directory": "runs/default"},
}

_REQUIRED = ("lattice", "subspace")


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output"]["directory"])

    def lattice_geometry(self):
        from .lattice import LatticeGeometry

        return LatticeGeometry(self.raw["lattice"]["lx"], self.raw["lattice"]["ly"])

    def ansatz_config(self) -> AnsatzConfig:
        a, s = self.raw["ansatz"], self.raw["sector"]
        momentum = s["momentum"]
        return AnsatzConfig(
            lx=self.raw["lattice"]["lx"],
            ly=self.raw["lattice"]["ly"],
            n_states=self.raw["subspace"]["n_states"],
            feature_map=a["feature_map"],
            channels=a["channels"],
            filter_size=a["filter_size"],
            blocks=a["blocks"],
            expansion=a["expansion"],
            hidden=a["hidden"],
            momentum=tuple(momentum) if momentum is not None else None,
            spin_flip=s["spin_flip"],
            marshall=a["marshall"],
        )

    def learning_rate(self) -> float:
        lr = self.raw["optimizer"]["learning_rate"]
        if lr is None:
            lr = 0.15 / self.lattice_geometry().n_sites
        return float(lr)

    def sr_settings(self):
        from .sr import SrSettings

        opt = self.raw["optimizer"]
        return SrSettings(
            learning_rate=self.learning_rate(),
            diag_shift=float(opt["diag_shift"]),
            solver=opt["solver"],
            max_steps=opt["max_steps"],
            seed=self.seed,
            warmup_steps=opt["warmup_steps"],
            variance_target=opt["variance_target"],
            checkpoint_interval=opt["checkpoint_interval"],
        )

    def problem(self, theta):
        from .lattice import HeisenbergOperator
        from .sr import OptimizationProblem

        geom = self.lattice_geometry()
        smp = self.raw["sampler"]
        return OptimizationProblem(
            ansatz=self.ansatz_config(),
            hamiltonian=HeisenbergOperator(geom),
            geometry=geom,
            initial_parameters=theta,
            total_sz=self.raw["sector"]["total_sz"],
            n_chains=smp["n_chains"],
            samples_per_step=smp["samples_per_step"],
            warmup_sweeps=smp["warmup_sweeps"],
            thinning=smp["thinning"],
            backend=smp["backend"],
        )

    def to_dict(self) -> dict:
        return self.raw


def _validate(data: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    merged: dict = {}
    for section, spec in _SCHEMA.items():
        if isinstance(spec, dict):
            given = data.get(section, {})
            if given is None:
                given = {}
            if not isinstance(given, dict):
                raise ConfigError(f"section '{section}' must be a mapping")
            defaults = dict(_DEFAULTS.get(section, {}))
            for key in given:
                if key not in spec:
                    raise ConfigError(f"unknown key '{section}.{key}'")
            if section in _REQUIRED:
                for key in spec:
                    if key not in given and key not in defaults:
                        raise ConfigError(f"missing required key '{section}.{key}'")
            merged_section = {**defaults, **given}
            for key, value in merged_section.items():
                if not spec[key](value):
                    raise ConfigError(f"invalid value for '{section}.{key}': {value!r}")
            merged[section] = merged_section
        else:
            value = data.get(section, _DEFAULTS.get(section))
            if not spec(value):
                raise ConfigError(f"invalid value for '{section}': {value!r}")
            merged[section] = value
    for key in data:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
    for section in _REQUIRED:
        if section not in data:
            raise ConfigError(f"missing required section '{section}'")
    return merged


def load_config(path, seed_override: int | None = None, out_override: str | None = None) -> ExperimentConfig:
    """Parse, validate and apply environment/CLI overrides."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"malformed YAML{where}: {exc}") from exc
    merged = _validate(data or {})
    env_seed = os.environ.get("GVMC_SEED")
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"GVMC_SEED must be an integer, got {env_seed!r}") from exc
    if seed_override is not None:
        merged["seed"] = seed_override
    env_out = os.environ.get("GVMC_OUT")
    if env_out is not None:
        merged["output"]["directory"] = env_out
    if out_override is not None:
        merged["output"]["directory"] = out_override
    return ExperimentConfig(merged)
