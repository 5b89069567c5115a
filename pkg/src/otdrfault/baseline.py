"""Fixed-cutoff event detector, the classical control method.

At every admissible sample ``i`` two least-squares lines are fitted, one to
the window ending just before ``z_i`` and one to the window starting one
pulse width after it.  Both lines are extrapolated to ``z_i``; their
difference is the local step loss.  The spike height is the largest sample in
``[z_i, z_i + w]`` above the left line.

Because the sample spacing is uniform, each extrapolated fit value is a fixed
linear combination of the window samples, so the whole profile reduces to a
correlation with a precomputed kernel.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .plant import (
    AcquisitionConfig,
    Detection,
    FaultClass,
    Trace,
    ValidationError,
    pulse_spatial_width,
)

_EPS = 1e-9
# Candidate strengths closer than this are ties.
_TIE_DB = 1e-9


@dataclass(frozen=True)
class ThresholdConfig:
    window_m: float = 50.0
    loss_cutoff_db: float = 0.2
    spike_cutoff_db: float = 1.0
    bend_loss_cutoff_db: float = 1.0
    guard_m: Optional[float] = None  # None: two pulse widths of the trace

    def __post_init__(self) -> None:
        bad = [
            name
            for name in ("window_m", "loss_cutoff_db", "spike_cutoff_db", "bend_loss_cutoff_db")
            if not getattr(self, name) > 0
        ]
        if self.guard_m is not None and not self.guard_m > 0:
            bad.append("guard_m")
        if bad:
            raise ValidationError([f"{b} must be positive" for b in bad])
        if not self.bend_loss_cutoff_db > self.loss_cutoff_db:
            raise ValidationError("bend_loss_cutoff_db must exceed loss_cutoff_db")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ThresholdConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown threshold fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdConfig":
        return cls.from_dict(json.loads(text))


def trace_pulse_width_m(t: Trace) -> float:
    """Pulse spatial width recorded in the trace metadata, or the default."""
    defaults = AcquisitionConfig()
    try:
        t_ns = float(t.meta.get("pulse_width_ns", defaults.pulse_width_ns))
        n_g = float(t.meta.get("group_index", defaults.group_index))
    except ValueError:
        t_ns, n_g = defaults.pulse_width_ns, defaults.group_index
    return pulse_spatial_width(
        AcquisitionConfig(pulse_width_ns=t_ns, group_index=n_g)
    )


@dataclass(frozen=True)
class _Geometry:
    left: np.ndarray  # offsets of the left window, all < 0
    right: np.ndarray  # offsets of the right window, all > spike_hi
    spike_hi: int  # spike window covers offsets 0..spike_hi
    w_left: np.ndarray
    w_right: np.ndarray

    @property
    def lo(self) -> int:
        return int(self.left[0])

    @property
    def hi(self) -> int:
        return int(self.right[-1])


def _extrapolation_weights(offsets: np.ndarray) -> np.ndarray:
    # value at offset 0 of the least-squares line through (offsets, y)
    u = offsets.astype(np.float64)
    ubar = u.mean()
    s = np.sum((u - ubar) ** 2)
    return 1.0 / u.size + (0.0 - ubar) * (u - ubar) / s


def _geometry(spacing_m: float, window_m: float, pulse_m: float) -> _Geometry:
    n_win = int(math.floor(window_m / spacing_m + _EPS))
    if n_win < 5:
        raise ValidationError("window_m must cover at least 5 samples")
    spike_hi = int(math.floor(pulse_m / spacing_m + _EPS))
    r_lo = int(math.floor(pulse_m / spacing_m + _EPS)) + 1
    r_hi = int(math.floor((pulse_m + window_m) / spacing_m + _EPS))
    left = np.arange(-n_win, 0)
    right = np.arange(r_lo, r_hi + 1)
    return _Geometry(left, right, spike_hi, _extrapolation_weights(left), _extrapolation_weights(right))


def _admissible(n: int, g: _Geometry) -> tuple[int, int]:
    return -g.lo, n - 1 - g.hi


def local_step_estimate(
    t: Trace, i: int, cfg: ThresholdConfig, pulse_m: Optional[float] = None
) -> tuple[float, float]:
    """Step loss and spike height at sample ``i``.

    Raises:
        ValueError: if either fit window would leave the trace.
    """
    w = trace_pulse_width_m(t) if pulse_m is None else pulse_m
    g = _geometry(t.spacing_m, cfg.window_m, w)
    first, last = _admissible(len(t), g)
    if not first <= i <= last:
        raise ValueError(f"index {i} too close to the trace boundary (admissible {first}..{last})")
    y = t.samples
    left_at = float(np.dot(g.w_left, y[i + g.left]))
    right_at = float(np.dot(g.w_right, y[i + g.right]))
    spike = float(np.max(y[i : i + g.spike_hi + 1])) - left_at
    return left_at - right_at, spike


def step_profile(
    t: Trace, cfg: ThresholdConfig, pulse_m: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(indices, loss_db, spike_db)`` for every admissible sample."""
    w = trace_pulse_width_m(t) if pulse_m is None else pulse_m
    g = _geometry(t.spacing_m, cfg.window_m, w)
    first, last = _admissible(len(t), g)
    if last < first:
        return np.arange(0), np.zeros(0), np.zeros(0)
    y = t.samples
    span = g.hi - g.lo + 1
    win = sliding_window_view(y, span)[: last - first + 1]
    kern_left = np.zeros(span)
    kern_left[g.left - g.lo] = g.w_left
    kern_right = np.zeros(span)
    kern_right[g.right - g.lo] = g.w_right
    left_at = win @ kern_left
    right_at = win @ kern_right
    spike_max = sliding_window_view(y, g.spike_hi + 1)[first : last + 1].max(axis=1)
    return np.arange(first, last + 1), left_at - right_at, spike_max - left_at


@dataclass(frozen=True)
class Candidate:
    index: int
    position_m: float
    loss_db: float
    spike_db: float


def find_candidates(
    t: Trace, cfg: ThresholdConfig, pulse_m: Optional[float] = None
) -> list[Candidate]:
    """Cutoff crossings after non-maximum suppression, strongest first.

    Strength is the step loss, plus the spike height when the spike crosses
    its own cutoff.  The spike term keeps a reflective event anchored at its
    onset: the left window of later samples overlaps the spike and inflates
    their loss estimate.  Ties go to the larger distance, which is the event
    position on a noiseless trace.
    """
    w = trace_pulse_width_m(t) if pulse_m is None else pulse_m
    idx, loss, spike = step_profile(t, cfg, w)
    hit = (loss > cfg.loss_cutoff_db) | (spike > cfg.spike_cutoff_db)
    if not np.any(hit):
        return []
    idx, loss, spike = idx[hit], loss[hit], spike[hit]
    strength = loss + np.where(spike > cfg.spike_cutoff_db, spike, 0.0)
    order = np.lexsort((-idx, -np.round(strength / _TIE_DB)))
    guard = cfg.guard_m if cfg.guard_m is not None else 2.0 * w
    guard_n = guard / t.spacing_m
    kept: list[Candidate] = []
    taken: list[int] = []
    for k in order:
        i = int(idx[k])
        if any(abs(i - j) <= guard_n for j in taken):
            continue
        taken.append(i)
        kept.append(Candidate(i, i * t.spacing_m, float(loss[k]), float(spike[k])))
    return kept


def detect_threshold(t: Trace, cfg: ThresholdConfig | None = None) -> Detection:
    """Classify and locate the strongest event with fixed dB cutoffs."""
    cfg = cfg or ThresholdConfig()
    n_win = int(math.floor(cfg.window_m / t.spacing_m + _EPS))
    if len(t) < 4 * n_win:
        raise ValueError(f"trace too short: {len(t)} samples, need {4 * n_win}")
    cands = find_candidates(t, cfg)
    if not cands:
        return Detection(FaultClass.NORMAL)
    c = cands[0]
    if c.spike_db > cfg.spike_cutoff_db:
        cls = FaultClass.CONNECTOR
        conf = min(1.0, c.spike_db / (2.0 * cfg.spike_cutoff_db))
    else:
        cls = FaultClass.BEND if c.loss_db >= cfg.bend_loss_cutoff_db else FaultClass.SPLICE
        conf = min(1.0, max(c.loss_db, 0.0) / cfg.bend_loss_cutoff_db)
    return Detection(cls, c.position_m, max(c.loss_db, 0.0), conf)
