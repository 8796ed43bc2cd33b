"""Pipeline settings and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from datetime import date

from .filters import DEFAULT_CUTS, FIXED
from .geo import DEFAULT_FLOOR_M, DEFAULT_QUANTILE
from .journey import ClassifierConfig, JourneyConfig
from .timetable import DEFAULT_EPSILON_M, DEFAULT_TIME_SCALE


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    tz_offset_minutes: int = 0
    epsilon_m: float = DEFAULT_EPSILON_M
    time_scale: float = DEFAULT_TIME_SCALE
    quantile: float = DEFAULT_QUANTILE
    dmin_floor_m: float = DEFAULT_FLOOR_M
    unknown_km: float = 100.0
    non_trip_min: float = 180.0
    trip_min_duration: float = 15.0
    sandwich_min: float = 15.0
    entropy_mode: str = FIXED
    entropy_low: float | None = None  # None: the mode's default
    entropy_high: float | None = None
    days: list[date] = field(default_factory=list)  # empty: every day in the input
    workers: int = 1
    max_reject_fraction: float = 0.5

    def validate(self) -> "PipelineConfig":
        for name in ("epsilon_m", "time_scale", "dmin_floor_m", "unknown_km", "non_trip_min",
                     "trip_min_duration", "sandwich_min"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.quantile < 1:
            raise ConfigError("quantile must lie in (0, 1)")
        if self.entropy_mode not in DEFAULT_CUTS:
            raise ConfigError(f"entropy_mode must be one of {sorted(DEFAULT_CUTS)}")
        lo, hi = self.entropy_cuts
        if lo >= hi:
            raise ConfigError("entropy_low must be below entropy_high")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0 <= self.max_reject_fraction <= 1:
            raise ConfigError("max_reject_fraction must lie in [0, 1]")
        return self

    @property
    def entropy_cuts(self) -> tuple[float, float]:
        lo, hi = DEFAULT_CUTS[self.entropy_mode]
        return (lo if self.entropy_low is None else self.entropy_low,
                hi if self.entropy_high is None else self.entropy_high)

    @property
    def journey(self) -> JourneyConfig:
        return JourneyConfig(
            self.epsilon_m,
            self.time_scale,
            ClassifierConfig(self.unknown_km, self.non_trip_min, self.trip_min_duration, self.sandwich_min),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["days"] = [x.isoformat() for x in self.days]
        return d

    def updated(self, **overrides) -> "PipelineConfig":
        """Copy with the non-None overrides applied."""
        kw = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **kw)


def _coerce(name: str, raw: str):
    f = {f.name: f for f in dataclasses.fields(PipelineConfig)}[name]
    t = str(f.type)
    raw = raw.strip()
    if name == "days":
        return parse_days(raw)
    if name == "entropy_mode":
        return raw
    if "None" in t and raw.lower() in ("", "none", "default"):
        return None
    if t.startswith("int"):
        return int(raw)
    return float(raw)


def parse_days(raw: str) -> list[date]:
    try:
        return [date.fromisoformat(x.strip()) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad day list {raw!r}: {e}") from None


def parse_config_text(text: str) -> dict:
    """``key = value`` pairs; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """Built-in defaults, then the config file, then explicit overrides."""
    cfg = PipelineConfig()
    if path is not None:
        with open(path) as f:
            cfg = cfg.updated(**parse_config_text(f.read()))
    return cfg.updated(**overrides).validate()
