"""OTDR trace synthesis from fiber scenarios.

A clean trace is the straight backscatter line ``B0 - alpha*z`` minus the
cumulative event losses, with triangular reflectance spikes laid on top.
Noise is additive Gaussian in linear power, so its size in dB grows as the
backscatter decays along the fiber.
"""

from __future__ import annotations

import numpy as np

from .plant import (
    AcquisitionConfig,
    EventKind,
    FaultClass,
    FaultLabel,
    FiberEvent,
    FiberScenario,
    Trace,
    ValidationError,
    db_to_linear,
    linear_to_db,
    pulse_spatial_width,
    validate_scenario,
)
from .seeding import normal_stream

# Fault magnitudes of the reference archetypes (midpoints of the sampler ranges).
REFERENCE_SPLICE_LOSS_DB = 0.55
REFERENCE_BEND_LOSS_DB = 1.75
REFERENCE_BEND_EXTENT_M = 10.5
REFERENCE_CONNECTOR_LOSS_DB = 0.85
REFERENCE_CONNECTOR_SPIKE_DB = 6.0


def _check(s: FiberScenario) -> None:
    problems = validate_scenario(s)
    if problems:
        raise ValidationError(problems)


def event_ramp(ev: FiberEvent, z: np.ndarray, spacing_m: float) -> np.ndarray:
    """Cumulative loss contributed by ``ev`` at each distance in ``z``."""
    if ev.kind is EventKind.BEND:
        width = max(ev.extent_m, spacing_m)
        return ev.loss_db * np.clip((z - ev.position_m) / width, 0.0, 1.0)
    if ev.kind is EventKind.FIBER_END:
        return np.zeros_like(z)
    return np.where(z >= ev.position_m, ev.loss_db, 0.0)


def _baseline_and_loss(s: FiberScenario, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    cfg = s.config
    line = cfg.launch_level_db - cfg.attenuation_db_per_km * z / 1000.0
    return line, [event_ramp(ev, z, cfg.sample_spacing_m) for ev in s.events]


def clean_trace(s: FiberScenario) -> Trace:
    """Noiseless trace for scenario ``s``."""
    _check(s)
    cfg = s.config
    z = cfg.distances()
    line, ramps = _baseline_and_loss(s, z)
    y = line.copy()
    for r in ramps:
        y -= r

    w = pulse_spatial_width(cfg)
    end_cut = None
    for k, ev in enumerate(s.events):
        if ev.reflectance_spike_db <= 0:
            continue
        p = np.array([ev.position_m])
        base = cfg.launch_level_db - cfg.attenuation_db_per_km * ev.position_m / 1000.0
        base -= sum(float(event_ramp(prev, p, cfg.sample_spacing_m)[0]) for prev in s.events[:k])
        in_spike = (z >= ev.position_m) & (z <= ev.position_m + w)
        peak = base + ev.reflectance_spike_db * (1.0 - (z[in_spike] - ev.position_m) / w)
        y[in_spike] = np.maximum(y[in_spike], peak)
        if ev.kind is EventKind.FIBER_END:
            end_cut = ev.position_m + w
    if end_cut is not None:
        y[z > end_cut] = cfg.noise_floor_db

    np.maximum(y, cfg.noise_floor_db, out=y)
    return Trace(y, cfg.sample_spacing_m, _meta(s, noisy=False))


def noisy_trace(s: FiberScenario) -> Trace:
    """Clean trace plus seeded linear-domain Gaussian noise.

    With ``noise_sigma_linear == 0`` the clean trace is returned unchanged.
    """
    cfg = s.config
    clean = clean_trace(s)
    if cfg.noise_sigma_linear == 0:
        return Trace(clean.samples, clean.spacing_m, _meta(s, noisy=True))
    g = normal_stream(cfg.rng_seed, len(clean))
    p = db_to_linear(clean.samples) + cfg.noise_sigma_linear * g
    floor = db_to_linear(cfg.noise_floor_db)
    y = linear_to_db(np.maximum(p, floor))
    return Trace(y, cfg.sample_spacing_m, _meta(s, noisy=True))


def _meta(s: FiberScenario, noisy: bool) -> dict[str, str]:
    cfg = s.config
    return {
        "scenario": s.name or "unnamed",
        "label_class": s.label.fault_class.value,
        "label_position_m": "" if s.label.position_m is None else repr(float(s.label.position_m)),
        "rng_seed": str(cfg.rng_seed),
        "spacing_m": repr(float(cfg.sample_spacing_m)),
        "noise_sigma_linear": repr(float(cfg.noise_sigma_linear)) if noisy else "0.0",
        "noise_floor_db": repr(float(cfg.noise_floor_db)),
        "pulse_width_ns": repr(float(cfg.pulse_width_ns)),
        "group_index": repr(float(cfg.group_index)),
    }


def reference_scenarios(config: AcquisitionConfig | None = None) -> list[FiberScenario]:
    """The four archetypes on a 10 km span: normal, splice, bend, connector."""
    cfg = config or AcquisitionConfig()
    return [
        FiberScenario(cfg, (), FaultLabel(FaultClass.NORMAL), name="reference-normal"),
        FiberScenario(
            cfg,
            (FiberEvent(EventKind.SPLICE, 3000.0, loss_db=REFERENCE_SPLICE_LOSS_DB),),
            FaultLabel(FaultClass.SPLICE, 3000.0),
            name="reference-splice",
        ),
        FiberScenario(
            cfg,
            (
                FiberEvent(
                    EventKind.BEND,
                    6000.0,
                    loss_db=REFERENCE_BEND_LOSS_DB,
                    extent_m=REFERENCE_BEND_EXTENT_M,
                ),
            ),
            FaultLabel(FaultClass.BEND, 6000.0),
            name="reference-bend",
        ),
        FiberScenario(
            cfg,
            (
                FiberEvent(
                    EventKind.CONNECTOR,
                    8000.0,
                    loss_db=REFERENCE_CONNECTOR_LOSS_DB,
                    reflectance_spike_db=REFERENCE_CONNECTOR_SPIKE_DB,
                ),
            ),
            FaultLabel(FaultClass.CONNECTOR, 8000.0),
            name="reference-connector",
        ),
    ]
