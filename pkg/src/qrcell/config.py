"""Versioned JSON run configuration.

Every section is optional and falls back to the defaults below.  Unknown keys
at any level are rejected so that typos never silently fall back to a default.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .entangle import BellOutcome
from .fit import ATOM_REFERENCE, PP_REFERENCE
from .noise import ETA_850
from .protocol import ProtocolParams
from .rates import ATTENUATION_DB_PER_KM, CLOCK_PERIOD, FIBER_SPEED

SCHEMA_VERSION = 1
DEFAULT_SEED = 20240917
DEFAULT_REPS = 10 ** 6


class ConfigError(ValueError):
    pass


def _protocol_defaults() -> dict:
    return asdict(ProtocolParams.reference())


@dataclass
class NoiseSection:
    f10: float = ATOM_REFERENCE["f10"]
    f20: float = 0.924
    p_sia_false: float = ATOM_REFERENCE["p_sia_false"]
    eta_850: float = ETA_850
    p: float = 0.00096
    p_alternative: float = 0.00114  # sensitivity rows use this detection probability
    outcomes: dict = field(default_factory=lambda: {
        k: {"f_ms": v["f_ms"], "p_sia_false": v["p_sia_false"]} for k, v in PP_REFERENCE.items()})

    def validate(self):
        for name, v in self.outcomes.items():
            if name not in BellOutcome.__members__:
                raise ConfigError(f"noise.outcomes: unknown outcome {name!r}")
            if set(v) != {"f_ms", "p_sia_false"}:
                raise ConfigError(f"noise.outcomes.{name}: need exactly f_ms and p_sia_false")


@dataclass
class RatesSection:
    p: float = 0.001
    p_t: float = 0.24
    one_way_length_km: float = 31.4
    tau0: float = CLOCK_PERIOD
    fiber_speed: float = FIBER_SPEED
    attenuation: float = ATTENUATION_DB_PER_KM
    conversion_efficiency: float = 1.0
    upgrade_factor: float = 3.4  # detection gain of the high-NA variant
    tiny_p: float = 1e-9  # a scenario that never beats direct transmission


@dataclass
class ScanNmaxSection:
    n_values: list = field(default_factory=lambda: [1, 3, 10, 30, 100])


@dataclass
class ScanTransmissionSection:
    p_t: list = field(default_factory=lambda: [1.0, 0.78, 0.48, 0.24])
    n_max: int = 100


@dataclass
class ThresholdsSection:
    target: float = 0.5
    saturating_p_sia_false: float = 0.011  # with ideal fidelities and the upgraded p


@dataclass
class FitSection:
    model: str = "atom"  # atom | pp
    curve: str | None = None  # CSV path; None generates a synthetic curve
    outcome: str = "PSI_MINUS"  # reference parameters for synthetic pp curves
    n_values: list = field(default_factory=lambda: [1, 3, 10, 30, 100, 300, 1000])
    synthetic_sigma: float = 0.0


@dataclass
class TomographySection:
    state: str = "atom2"  # atom1 | atom2 | photon_pair
    fidelity: float = 0.924
    outcome: str = "PSI_MINUS"  # photon_pair only
    shots: int | None = 100_000
    bootstrap: int = 200
    counts: str | None = None  # CSV path; None simulates counts


SECTIONS = {
    "noise": NoiseSection,
    "rates": RatesSection,
    "scan_nmax": ScanNmaxSection,
    "scan_transmission": ScanTransmissionSection,
    "thresholds": ThresholdsSection,
    "fit": FitSection,
    "tomography": TomographySection,
}


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = DEFAULT_SEED
    reps: int = DEFAULT_REPS
    protocol: dict = field(default_factory=_protocol_defaults)
    noise: NoiseSection = field(default_factory=NoiseSection)
    rates: RatesSection = field(default_factory=RatesSection)
    scan_nmax: ScanNmaxSection = field(default_factory=ScanNmaxSection)
    scan_transmission: ScanTransmissionSection = field(default_factory=ScanTransmissionSection)
    thresholds: ThresholdsSection = field(default_factory=ThresholdsSection)
    fit: FitSection = field(default_factory=FitSection)
    tomography: TomographySection = field(default_factory=TomographySection)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    def protocol_params(self, **overrides) -> ProtocolParams:
        kw = dict(self.protocol, rng_seed=self.seed)
        kw.update(overrides)
        try:
            return ProtocolParams(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"protocol: {e}") from e

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    obj = cls(**raw)
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


def from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    version = raw.get("schema_version", MISSING)
    if version is MISSING:
        raise ConfigError("schema_version is required")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    top = {"schema_version", "seed", "reps", "protocol", *SECTIONS}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    cfg = RunConfig(base_dir=base_dir or Path.cwd())
    if "seed" in raw:
        cfg.seed = _int(raw["seed"], "seed", 0)
    if "reps" in raw:
        cfg.reps = _int(raw["reps"], "reps", 1)
    if "protocol" in raw:
        proto = raw["protocol"]
        if not isinstance(proto, dict):
            raise ConfigError("protocol: expected an object")
        allowed = {f.name for f in fields(ProtocolParams)} - {"rng_seed"}
        unknown = sorted(set(proto) - allowed)
        if unknown:
            raise ConfigError(f"protocol: unknown keys {unknown}")
        cfg.protocol.update(proto)
    for name, cls in SECTIONS.items():
        if name in raw:
            setattr(cfg, name, _section(cls, raw[name], name))
    cfg.protocol_params()
    return cfg


def _int(v, name, minimum):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}")
    return v


def load(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return from_dict(raw, path.parent)
