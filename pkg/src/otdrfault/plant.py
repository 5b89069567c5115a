"""Domain types for fiber plants, OTDR traces, labels and detections.

All types are frozen dataclasses; everything here is a pure value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Optional

import numpy as np

SPEED_OF_LIGHT_M_S = 299_792_458.0


class EventKind(str, enum.Enum):
    SPLICE = "Splice"
    BEND = "Bend"
    CONNECTOR = "Connector"
    FIBER_END = "FiberEnd"


class FaultClass(str, enum.Enum):
    NORMAL = "Normal"
    SPLICE = "Splice"
    BEND = "Bend"
    CONNECTOR = "Connector"

    @property
    def index(self) -> int:
        return FAULT_CLASSES.index(self)

    @classmethod
    def from_index(cls, i: int) -> "FaultClass":
        return FAULT_CLASSES[i]


# Order fixes the class index used by the network heads and confusion matrices.
FAULT_CLASSES: tuple[FaultClass, ...] = (
    FaultClass.NORMAL,
    FaultClass.SPLICE,
    FaultClass.BEND,
    FaultClass.CONNECTOR,
)


class ValidationError(ValueError):
    """Raised when a domain object violates one of its invariants."""

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class AcquisitionConfig:
    """Instrument and fiber parameters for one acquisition.

    The displayed trace uses the one-way convention: a healthy fiber falls by
    ``attenuation_db_per_km`` per kilometer.
    """

    wavelength_nm: float = 1550.0
    attenuation_db_per_km: float = 0.35
    launch_level_db: float = 30.0
    pulse_width_ns: float = 100.0
    group_index: float = 1.468
    sample_spacing_m: float = 1.0
    range_m: float = 10_000.0
    noise_sigma_linear: float = 15.0
    noise_floor_db: float = -10.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise ValidationError(problems)

    def violations(self) -> list[str]:
        out = []
        if not self.wavelength_nm > 0:
            out.append("wavelength_nm must be positive")
        if not self.sample_spacing_m > 0:
            out.append("sample_spacing_m must be positive")
        elif not self.range_m >= 10 * self.sample_spacing_m:
            out.append("range_m must be at least 10 sample spacings")
        if not self.attenuation_db_per_km > 0:
            out.append("attenuation_db_per_km must be positive")
        if not self.pulse_width_ns > 0:
            out.append("pulse_width_ns must be positive")
        if not 1.0 <= self.group_index <= 2.0:
            out.append("group_index must lie in [1, 2]")
        if not self.noise_sigma_linear >= 0:
            out.append("noise_sigma_linear must be nonnegative")
        if not self.noise_floor_db < self.launch_level_db:
            out.append("noise_floor_db must be below launch_level_db")
        if not 0 <= int(self.rng_seed) < 2**64:
            out.append("rng_seed must be a 64-bit unsigned integer")
        return out

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.range_m / self.sample_spacing_m + 1e-9)) + 1

    def distances(self) -> np.ndarray:
        return np.arange(self.n_samples, dtype=np.float64) * self.sample_spacing_m

    def with_seed(self, seed: int) -> "AcquisitionConfig":
        return replace(self, rng_seed=int(seed))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AcquisitionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "rng_seed" in kwargs:
            kwargs["rng_seed"] = int(kwargs["rng_seed"])
        return cls(**kwargs)


@dataclass(frozen=True)
class FiberEvent:
    kind: EventKind
    position_m: float
    loss_db: float = 0.0
    reflectance_spike_db: float = 0.0
    extent_m: float = 0.0

    def violations(self) -> list[str]:
        out = []
        name = self.kind.value.lower()
        if not self.loss_db >= 0:
            out.append(f"{name} loss_db must be nonnegative")
        if not self.extent_m >= 0:
            out.append(f"{name} extent_m must be nonnegative")
        if self.kind in (EventKind.SPLICE, EventKind.BEND):
            if self.reflectance_spike_db != 0:
                out.append(f"{name} must be non-reflective")
        elif not self.reflectance_spike_db > 0:
            out.append(f"{name} must be reflective (reflectance_spike_db > 0)")
        if self.kind in (EventKind.SPLICE, EventKind.CONNECTOR) and self.extent_m != 0:
            out.append(f"{name} must have zero extent_m")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "position_m": self.position_m,
            "loss_db": self.loss_db,
            "reflectance_spike_db": self.reflectance_spike_db,
            "extent_m": self.extent_m,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FiberEvent":
        return cls(
            kind=EventKind(d["kind"]),
            position_m=float(d["position_m"]),
            loss_db=float(d.get("loss_db", 0.0)),
            reflectance_spike_db=float(d.get("reflectance_spike_db", 0.0)),
            extent_m=float(d.get("extent_m", 0.0)),
        )


@dataclass(frozen=True)
class FaultLabel:
    fault_class: FaultClass
    position_m: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"class": self.fault_class.value}
        if self.position_m is not None:
            d["position_m"] = self.position_m
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FaultLabel":
        pos = d.get("position_m")
        return cls(FaultClass(d["class"]), None if pos is None else float(pos))


NORMAL = FaultLabel(FaultClass.NORMAL)


@dataclass(frozen=True)
class Detection:
    fault_class: FaultClass
    position_m: Optional[float] = None
    loss_db_est: float = 0.0
    confidence: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        if (self.position_m is None) != (self.fault_class is FaultClass.NORMAL):
            raise ValidationError("position_m must be present iff class is not Normal")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "class": self.fault_class.value,
            "loss_db_est": self.loss_db_est,
            "confidence": self.confidence,
        }
        if self.position_m is not None:
            d["position_m"] = self.position_m
        return d


@dataclass(frozen=True)
class FiberScenario:
    config: AcquisitionConfig
    events: tuple[FiberEvent, ...] = ()
    label: FaultLabel = NORMAL
    name: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "label": self.label.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], name: str = "") -> "FiberScenario":
        for key in ("config", "events", "label"):
            if key not in d:
                raise ValidationError(f"scenario is missing '{key}'")
        return cls(
            config=AcquisitionConfig.from_dict(d["config"]),
            events=tuple(FiberEvent.from_dict(e) for e in d["events"]),
            label=FaultLabel.from_dict(d["label"]),
            name=name,
        )


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled backscatter power in dB, starting at distance 0."""

    samples: np.ndarray
    spacing_m: float
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("trace samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("trace samples must be finite")
        if not self.spacing_m > 0:
            raise ValidationError("spacing_m must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def range_m(self) -> float:
        return (len(self) - 1) * self.spacing_m

    def distances(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.float64) * self.spacing_m

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.spacing_m == other.spacing_m
            and dict(self.meta) == dict(other.meta)
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None  # type: ignore[assignment]


def db_to_linear(x_db):
    """Convert dB to linear power ratio, ``10 ** (x / 10)``."""
    if np.ndim(x_db):
        return np.power(10.0, np.asarray(x_db, dtype=np.float64) / 10.0)
    return 10.0 ** (float(x_db) / 10.0)


def linear_to_db(p):
    """Convert a positive linear power ratio to dB."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("linear_to_db requires strictly positive input")
    if arr.ndim:
        return 10.0 * np.log10(arr)
    return 10.0 * math.log10(float(p))


def pulse_spatial_width(config: AcquisitionConfig) -> float:
    """Spatial extent of the probe pulse in meters, ``c*T / (2*n_g)``."""
    return SPEED_OF_LIGHT_M_S * config.pulse_width_ns * 1e-9 / (2.0 * config.group_index)


def validate_scenario(s: FiberScenario) -> list[str]:
    """Return every violated invariant of ``s``; an empty list means valid."""
    cfg = s.config
    out = list(cfg.violations())
    for ev in s.events:
        out.extend(ev.violations())
        if ev.kind is EventKind.FIBER_END:
            if not 0 <= ev.position_m <= cfg.range_m:
                out.append(f"fiber end at {ev.position_m} m lies outside [0, range_m]")
        elif not 0 <= ev.position_m < cfg.range_m:
            out.append(f"{ev.kind.value.lower()} at {ev.position_m} m lies outside [0, range_m)")

    positions = [e.position_m for e in s.events]
    if any(b <= a for a, b in zip(positions, positions[1:])):
        out.append("events not sorted")
    if any(e.kind is EventKind.FIBER_END for e in s.events[:-1]):
        out.append("fiber end must be the last event")
    if not cfg.violations():
        min_sep = 2 * pulse_spatial_width(cfg)
        for a, b in zip(positions, positions[1:]):
            if abs(b - a) < min_sep:
                out.append(f"events at {a} m and {b} m are closer than {min_sep:.3f} m")

    lab = s.label
    if lab.fault_class is FaultClass.NORMAL:
        if lab.position_m is not None:
            out.append("normal label must not carry a position")
    elif lab.position_m is None:
        out.append("fault label requires a position")
    elif not 0 < lab.position_m < cfg.range_m:
        out.append("label position must lie in (0, range_m)")
    return out
