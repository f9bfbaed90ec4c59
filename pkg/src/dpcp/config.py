"""Run configuration: schema, YAML parsing, presets, and hashing.

The file layout groups keys into sections (geometry, microstructure,
loading, numerics, material.ferrite, material.martensite, output).  An
empty file yields the full-resolution defaults; unknown keys are rejected
with line-numbered diagnostics rather than silently ignored.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import yaml


class ConfigError(RuntimeError):
    """Carries every schema violation found in one parse pass."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class SimulationConfig:
    """Complete description of one plane-strain tension run.

    Defaults reproduce the full-resolution reference setup: an 80 um
    square pulled 4 um at 1e-4 / s, marched at dt = 0.01 s.
    """

    domain_size: float = 80.0      # um, square specimen
    nx: int = 64
    ny: int = 64
    d_ferrite: float = 15.0        # um, hexagon across-flats size
    d_martensite: float = 3.125    # um, martensite grain extent
    martensite_fraction: float = 0.44
    seed: int = 1
    strain_rate: float = 1.0e-4    # 1/s nominal
    total_displacement: float = 4.0  # um pulled at the top surface
    dt: float = 0.01               # s
    theta: float = 0.5             # rate-linearization weight
    interaction_matrix: str = "identity"
    corotate_lattice: bool = False
    ferrite: dict = field(default_factory=dict)      # parameter overrides
    martensite: dict = field(default_factory=dict)
    output_dir: str = "runs"
    snapshot_interval: int = 0     # steps between field snapshots, 0 = final only
    checkpoint_interval: int = 0   # steps between checkpoints, 0 = none
    workers: int = 1               # parallel study runs

    @property
    def total_time(self) -> float:
        return self.total_displacement / (self.strain_rate * self.domain_size)

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def nominal_strain(self) -> float:
        return self.total_displacement / self.domain_size


PRESETS = {
    # Full-resolution profile of the reference setup.
    "paper": {},
    # Reduced profile for minutes-scale runs: coarser grid, 2% pull,
    # larger increment, about 2000 steps.
    "desk": {"nx": 32, "ny": 32, "dt": 0.1, "total_displacement": 1.6},
}

_SECTIONS = {
    "geometry": {"domain_size": float, "nx": int, "ny": int},
    "microstructure": {"d_ferrite": float, "d_martensite": float,
                       "martensite_fraction": float, "seed": int},
    "loading": {"strain_rate": float, "total_displacement": float},
    "numerics": {"dt": float, "theta": float, "interaction_matrix": str,
                 "corotate_lattice": bool},
    "material": {"ferrite": dict, "martensite": dict},
    "output": {"output_dir": str, "snapshot_interval": int,
               "checkpoint_interval": int, "workers": int},
}

_POSITIVE = ("domain_size", "d_ferrite", "d_martensite", "strain_rate",
             "total_displacement", "dt")

# Overridable per-phase parameters (see the material dataclass).
_MATERIAL_KEYS = {
    "young_modulus", "poisson", "initial_density", "rate_sensitivity",
    "ref_slip_rate", "burgers", "hardening_coeff", "storage_coeff",
    "c_star_110", "c_star_112", "friction_110", "friction_112",
    "flow_stress_110", "flow_stress_112",
}


def _coerce(node, want, where, problems):
    raw = node.value
    line = node.start_mark.line + 1
    try:
        if want is bool:
            if raw in ("true", "True"):
                return True
            if raw in ("false", "False"):
                return False
            raise ValueError(raw)
        if want is int:
            v = int(raw)
        elif want is float:
            v = float(raw)
        else:
            v = str(raw)
        return v
    except (TypeError, ValueError):
        problems.append("line %d: %s expects %s, got %r"
                        % (line, where, want.__name__, raw))
        return None


def _material_overrides(node, phase, problems) -> dict:
    out = {}
    for key_node, val_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in _MATERIAL_KEYS:
            problems.append("line %d: unknown %s parameter %r"
                            % (line, phase, key))
            continue
        v = _coerce(val_node, float, "material.%s.%s" % (phase, key),
                    problems)
        if v is not None:
            out[key] = v
    return out


def parse_config(text: str) -> SimulationConfig:
    """Parse and validate a YAML config; empty input gives defaults."""
    problems = []
    root = yaml.compose(text)
    values = {}
    if root is not None:
        if not isinstance(root, yaml.MappingNode):
            raise ConfigError(["line 1: top level must be a mapping of "
                               "sections"])
        for sec_node, body in root.value:
            sec = sec_node.value
            line = sec_node.start_mark.line + 1
            schema = _SECTIONS.get(sec)
            if schema is None:
                problems.append("line %d: unknown section %r" % (line, sec))
                continue
            if not isinstance(body, yaml.MappingNode):
                problems.append("line %d: section %r must be a mapping"
                                % (line, sec))
                continue
            for key_node, val_node in body.value:
                key = key_node.value
                kline = key_node.start_mark.line + 1
                if key not in schema:
                    problems.append("line %d: unknown key %r in section %r"
                                    % (kline, key, sec))
                    continue
                want = schema[key]
                if want is dict:
                    values[key] = _material_overrides(val_node, key,
                                                      problems)
                else:
                    v = _coerce(val_node, want, "%s.%s" % (sec, key),
                                problems)
                    if v is not None:
                        values[key] = v
    if problems:
        raise ConfigError(problems)
    cfg = SimulationConfig(**values)
    _validate(cfg)
    return cfg


def load_config(path) -> SimulationConfig:
    with open(path) as f:
        return parse_config(f.read())


def _validate(cfg: SimulationConfig) -> None:
    problems = []
    for name in _POSITIVE:
        if getattr(cfg, name) <= 0.0:
            problems.append("%s must be positive, got %r"
                            % (name, getattr(cfg, name)))
    if cfg.nx < 1 or cfg.ny < 1:
        problems.append("grid must be at least 1x1, got %dx%d"
                        % (cfg.nx, cfg.ny))
    if not 0.0 <= cfg.martensite_fraction < 1.0:
        problems.append("martensite_fraction must lie in [0, 1), got %r"
                        % cfg.martensite_fraction)
    if not 0.0 < cfg.theta <= 1.0:
        problems.append("theta must lie in (0, 1], got %r" % cfg.theta)
    if cfg.interaction_matrix not in ("identity", "dense"):
        problems.append("interaction_matrix must be identity or dense, "
                        "got %r" % cfg.interaction_matrix)
    if cfg.snapshot_interval < 0 or cfg.checkpoint_interval < 0:
        problems.append("intervals must be non-negative")
    if cfg.workers < 1:
        problems.append("workers must be at least 1, got %r" % cfg.workers)
    if problems:
        raise ConfigError(problems)


def apply_preset(cfg: SimulationConfig, preset: str) -> SimulationConfig:
    """Overlay a named profile; explicit file values stay untouched for
    keys the preset does not set."""
    if preset not in PRESETS:
        raise ConfigError(["unknown preset %r (choose from %s)"
                           % (preset, ", ".join(sorted(PRESETS)))])
    return dataclasses.replace(cfg, **PRESETS[preset])


def dump_config(cfg: SimulationConfig) -> str:
    """Normalized YAML rendering; parse(dump(cfg)) == cfg."""
    doc = {
        "geometry": {"domain_size": cfg.domain_size, "nx": cfg.nx,
                     "ny": cfg.ny},
        "microstructure": {"d_ferrite": cfg.d_ferrite,
                           "d_martensite": cfg.d_martensite,
                           "martensite_fraction": cfg.martensite_fraction,
                           "seed": cfg.seed},
        "loading": {"strain_rate": cfg.strain_rate,
                    "total_displacement": cfg.total_displacement},
        "numerics": {"dt": cfg.dt, "theta": cfg.theta,
                     "interaction_matrix": cfg.interaction_matrix,
                     "corotate_lattice": cfg.corotate_lattice},
        "material": {"ferrite": dict(cfg.ferrite),
                     "martensite": dict(cfg.martensite)},
        "output": {"output_dir": cfg.output_dir,
                   "snapshot_interval": cfg.snapshot_interval,
                   "checkpoint_interval": cfg.checkpoint_interval,
                   "workers": cfg.workers},
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def config_hash(cfg: SimulationConfig) -> str:
    """Content hash of the normalized config, used in manifests and
    checkpoint integrity checks."""
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()
