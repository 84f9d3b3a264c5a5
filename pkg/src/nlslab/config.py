"""Experiment configuration: nested dataclasses with defaults, read from and
written to JSON.

The canonical serialization is ``json.dumps(..., sort_keys=True, indent=2)``
followed by a newline, so ``dumps(loads(text)) == text`` for any canonical
``text``.  Unknown keys and ill-typed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .duhamel import SNormWeights, SourceTermSpec
from .profiles import DiracTrain, ScatteringProfile, scattering_profile_make
from .spectral import SpectralGrid, make_grid

_DEFAULT_ALPHA = 0.1 / (math.sqrt(2) * 4)  # l^{2,2} norm 0.1 for the two-mode train


class ConfigError(ValueError):
    """Invalid configuration (schema, range or profile placement)."""


@dataclass
class GridConfig:
    n: int = 16384
    m: int = 512


@dataclass
class TrainConfig:
    alphas: list = field(default_factory=lambda: [[-1, _DEFAULT_ALPHA, 0.0], [1, _DEFAULT_ALPHA, 0.0]])
    q: float = 2.0
    kappa: float = 0.5
    c: float = 0.0
    sign: int = 1
    max_norm: float = 0.2


@dataclass
class ProfileConfig:
    cell: int = 0
    center: float = 0.25
    width: float = 0.22
    amplitude: float = 2.0
    smoothness: float = 1.0
    quad_nodes: int = 256


@dataclass
class TimesConfig:
    t0: float = 20.0
    t_end: float = 2000.0
    rho: float = 2 ** 0.125
    substeps: int = 8
    h_max: float = 0.25
    t0_floor: float = 10.0


@dataclass
class PicardConfig:
    mu: float = 0.4
    s: int = 1
    delta: float = 1e-3
    max_iter: int = 15
    tol: float = 1e-8
    T_max_factor: float = 100.0
    panels_per_decade: int = 8
    panel_width: float = 2.0
    order: int = 8


@dataclass
class AnalysisConfig:
    fit_start_factor: float = math.sqrt(2)
    fit_decades: float = 1.0
    small_times: list = field(default_factory=lambda: [1e-3, 5e-4, 2.5e-4, 1.25e-4])
    dispersion_times: list = field(default_factory=lambda: [1.0, 10.0, 100.0])
    random_fields: int = 100


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    times: TimesConfig = field(default_factory=TimesConfig)
    picard: PicardConfig = field(default_factory=PicardConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    out: str = "out"

    # -- derived objects -------------------------------------------------

    def make_grid(self) -> SpectralGrid:
        return make_grid(self.grid.n, self.grid.m)

    def make_train(self) -> DiracTrain:
        alphas = {int(j): complex(re, im) for j, re, im in self.train.alphas}
        return DiracTrain(alphas, self.train.q, self.train.kappa, self.train.c, self.train.sign)

    def make_profile(self) -> ScatteringProfile:
        p = self.profile
        return scattering_profile_make(p.cell, p.center, p.width, p.amplitude, p.smoothness, p.quad_nodes)

    @property
    def T_max(self) -> float:
        return self.picard.T_max_factor * self.times.t0

    def source_spec(self, panels: int | None = None) -> SourceTermSpec:
        pc = self.picard
        return SourceTermSpec(self.make_train(), self.make_profile(), self.T_max, self.times.t0,
                              panels or pc.panels_per_decade, pc.panel_width, pc.order)

    def weights(self) -> SNormWeights:
        return SNormWeights(self.picard.mu, self.picard.s, self.times.t0)


_SECTIONS = {
    "grid": GridConfig,
    "train": TrainConfig,
    "profile": ProfileConfig,
    "times": TimesConfig,
    "picard": PicardConfig,
    "analysis": AnalysisConfig,
}


def _coerce(section: str, name: str, default, value):
    where = f"{section}.{name}" if section else name
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{where}: booleans are not accepted")
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where}: expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported value {value!r}")


def _build(cls, section: str, data):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    obj = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    for name, value in data.items():
        setattr(obj, name, _coerce(section, name, getattr(obj, name), value))
    return obj


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Range checks and derived-object construction; raises :class:`ConfigError`."""
    g, tr, t, pc, an = cfg.grid, cfg.train, cfg.times, cfg.picard, cfg.analysis
    if not _is_power_of_two(g.n) or g.n < 64:
        raise ConfigError(f"grid.n must be a power of two >= 64, got {g.n}")
    if g.m < 1:
        raise ConfigError("grid.m must be >= 1")
    for entry in tr.alphas:
        if not (isinstance(entry, list) and len(entry) == 3 and all(isinstance(v, (int, float)) for v in entry)
                and float(entry[0]).is_integer()):
            raise ConfigError(f"train.alphas entries must be [j, re, im] with integer j, got {entry!r}")
    modes = [int(e[0]) for e in tr.alphas]
    if len(set(modes)) != len(modes):
        raise ConfigError("train.alphas lists a mode twice")
    if any(abs(j) * g.m >= g.n // 2 for j in modes):
        raise ConfigError("a train mode lies at or beyond the grid Nyquist frequency")
    if tr.sign not in (1, -1):
        raise ConfigError("train.sign must be +1 or -1")
    if t.t0 <= 0 or t.t_end <= 0 or t.rho <= 1 or t.substeps < 1 or t.h_max <= 0:
        raise ConfigError("times: need t0, t_end, h_max > 0, rho > 1 and substeps >= 1")
    if not 0 < pc.mu < 0.5:
        raise ConfigError(f"picard.mu must lie in (0, 1/2), got {pc.mu}")
    if pc.s < 1 or pc.max_iter < 1 or pc.tol <= 0 or pc.delta <= 0:
        raise ConfigError("picard: need s >= 1, max_iter >= 1, tol > 0, delta > 0")
    if pc.T_max_factor < 10:
        raise ConfigError("picard.T_max_factor must be at least 10")
    if pc.panels_per_decade < 4 or pc.panel_width <= 0 or pc.order < 2:
        raise ConfigError("picard: need panels_per_decade >= 4, panel_width > 0, order >= 2")
    if an.fit_start_factor < 1 or an.fit_decades <= 0 or an.random_fields < 1:
        raise ConfigError("analysis: need fit_start_factor >= 1, fit_decades > 0, random_fields >= 1")
    if not all(isinstance(v, (int, float)) and 0 < v <= 1 for v in an.small_times) or len(an.small_times) < 2:
        raise ConfigError("analysis.small_times must hold at least two times in (0, 1]")
    if not all(isinstance(v, (int, float)) and v > 0 for v in an.dispersion_times):
        raise ConfigError("analysis.dispersion_times must be positive")
    span = an.fit_start_factor * 10**an.fit_decades * (1 + 1e-9)
    if pc.T_max_factor < span or t.t_end < span * t.t0:
        raise ConfigError(
            f"the time lattice must reach {span:.4g} t0 (fit window start times {an.fit_decades:g} decade(s)); "
            "raise picard.T_max_factor and times.t_end"
        )
    try:
        cfg.make_profile()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = ExperimentConfig()
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    for name, value in data.items():
        if name in _SECTIONS:
            setattr(cfg, name, _build(_SECTIONS[name], name, value))
        else:
            setattr(cfg, name, _coerce("", name, getattr(cfg, name), value))
    return validate(cfg)


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    return from_dict(data)


def load(path: str | None) -> ExperimentConfig:
    """Read ``path``; ``None`` gives the validated defaults."""
    if path is None:
        return validate(ExperimentConfig())
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def to_dict(cfg: ExperimentConfig) -> dict:
    assert is_dataclass(cfg)
    return asdict(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, indent=2) + "\n"


def fit_window(cfg: ExperimentConfig, times) -> tuple[float, float]:
    """One-decade lattice window starting at ``fit_start_factor * t0``."""
    from .analysis import decade_window

    return decade_window(times, cfg.analysis.fit_start_factor * cfg.times.t0, cfg.analysis.fit_decades)


__all__ = [
    "AnalysisConfig",
    "ConfigError",
    "ExperimentConfig",
    "GridConfig",
    "PicardConfig",
    "ProfileConfig",
    "TimesConfig",
    "TrainConfig",
    "dumps",
    "fit_window",
    "from_dict",
    "load",
    "loads",
    "validate",
]
