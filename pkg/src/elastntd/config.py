"""Experiment configuration with JSON round-trip and validation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .mesh import SIDES

LOAD_NAMES = ("zero", "normal", "corner", "traction_x", "traction_y")


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class MeshConfig:
    nx: int = 4
    ny: int = 4
    dirichlet_side: str = "bottom"
    pattern: str = "right"


@dataclass
class PartitionConfig:
    px: int = 2
    py: int = 2


@dataclass
class MaterialConfig:
    lam: float = 1.0
    mu: float = 1.0
    rho_bounds: list = field(default_factory=lambda: [1.0, 2.0])
    lam_bounds: list = field(default_factory=lambda: [1.0, 2.0])
    mu_bounds: list = field(default_factory=lambda: [1.0, 2.0])
    delta0: float | None = None
    M0: float | None = None

    @property
    def a(self) -> float:
        return float(self.rho_bounds[0])

    @property
    def b(self) -> float:
        return float(self.rho_bounds[1])

    @property
    def six_bounds(self) -> tuple:
        return tuple(float(x) for x in (*self.lam_bounds, *self.mu_bounds, *self.rho_bounds))


@dataclass
class SweepConfig:
    n_pairs: int = 50
    seed: int = 0
    workers: int = 1


@dataclass
class CgneConfig:
    max_iter: int = 500
    tol: float = 1e-14


@dataclass
class MonoConfig:
    n_pairs: int = 20
    n_loads: int = 10
    rho_pairs: list | None = None


@dataclass
class ForwardConfig:
    load: str = "normal"
    rho: float = 1.0


@dataclass
class ProbeConfig:
    d1_cells: list | None = None
    d2_cells: list | None = None
    n_levels: int = 3
    finest_step: int = 1
    epsilons: list = field(default_factory=lambda: [1e-2, 1e-4])
    rho: float = 1.0


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    cgne: CgneConfig = field(default_factory=CgneConfig)
    mono: MonoConfig = field(default_factory=MonoConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output: str = "runs"

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _build(cls, data, "")
        try:
            cfg.validate()
        except (TypeError, IndexError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from exc
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    @property
    def hash(self) -> str:
        """Hash of every setting that can change results (not output or workers)."""
        d = self.to_dict()
        d.pop("output")
        d["sweep"].pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output) / self.hash

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        m = self.mesh
        if not (isinstance(m.nx, int) and isinstance(m.ny, int)) or m.nx < 2 or m.ny < 2:
            raise ConfigError("mesh.nx and mesh.ny must be integers >= 2")
        if m.dirichlet_side not in SIDES:
            raise ConfigError(f"mesh.dirichlet_side must be one of {SIDES}")
        if m.pattern not in ("right", "crossed"):
            raise ConfigError("mesh.pattern must be 'right' or 'crossed'")
        p = self.partition
        if p.px < 1 or p.py < 1 or m.nx % p.px or m.ny % p.py:
            raise ConfigError("partition.px and partition.py must divide mesh.nx and mesh.ny")
        mat = self.material
        for name in ("rho_bounds", "lam_bounds", "mu_bounds"):
            lo_hi = getattr(mat, name)
            if len(lo_hi) != 2 or not 0 < lo_hi[0] < lo_hi[1]:
                raise ConfigError(f"material.{name} needs 0 < lower < upper")
        if mat.lam <= 0 or mat.mu <= 0:
            raise ConfigError("material.lam and material.mu must be positive")
        if mat.delta0 is not None:
            lows = (mat.mu, mat.lam + 2 * mat.mu, mat.mu_bounds[0], mat.lam_bounds[0] + 2 * mat.mu_bounds[0])
            if mat.delta0 <= 0 or min(lows) < mat.delta0:
                raise ConfigError("material violates mu >= delta0 and lam + 2 mu >= delta0")
        if mat.M0 is not None and max(mat.lam, mat.lam_bounds[1], mat.rho_bounds[1]) > mat.M0:
            raise ConfigError("material violates max lam, max rho <= M0")
        if self.sweep.n_pairs < 1:
            raise ConfigError("sweep.n_pairs must be positive")
        if self.sweep.workers < 1:
            raise ConfigError("sweep.workers must be positive")
        if self.cgne.max_iter < 1 or self.cgne.tol < 0:
            raise ConfigError("cgne.max_iter must be positive and cgne.tol non-negative")
        if self.mono.n_pairs < 0 or self.mono.n_loads < 1:
            raise ConfigError("mono.n_pairs must be >= 0 and mono.n_loads >= 1")
        if self.mono.rho_pairs is not None:
            n_sub = p.px * p.py
            for pair in self.mono.rho_pairs:
                if len(pair) != 2 or any(len(r) != n_sub or min(r) <= 0 for r in pair):
                    raise ConfigError(f"mono.rho_pairs entries need two positive lists of length {n_sub}")
        if self.forward.load not in LOAD_NAMES:
            raise ConfigError(f"forward.load must be one of {LOAD_NAMES}")
        if self.forward.rho <= 0 or self.probe.rho <= 0:
            raise ConfigError("rho values must be positive")
        pr = self.probe
        if pr.n_levels < 2:
            raise ConfigError("probe.n_levels must be >= 2")
        if pr.finest_step < 1 or any(e <= 0 for e in pr.epsilons):
            raise ConfigError("probe.finest_step must be >= 1 and epsilons positive")
        for name in ("d1_cells", "d2_cells"):
            cells = getattr(pr, name)
            if cells is None:
                continue
            if not cells or any(len(c) != 2 or not (0 <= c[0] < m.nx and 0 <= c[1] < m.ny) for c in cells):
                raise ConfigError(f"probe.{name} must list in-range [i, j] cells")


def _build(cls, data: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in data:
            continue
        default = getattr(defaults, name)
        value = data[name]
        if is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{name} must be an object")
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, name):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if value is None or isinstance(value, list):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"{name} has an invalid type")
