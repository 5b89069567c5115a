"""Convolutional fault classifier: data sampling, training and inference.

Layer-by-layer lengths for the default 1024-sample input::

    input                     1 x 1024
    Conv1d(1->16, k=9)       16 x 1016
    ReLU, MaxPool1d(4)       16 x 254
    Conv1d(16->32, k=9)      32 x 246
    ReLU, MaxPool1d(4)       32 x 61     (remainder of 2 dropped)
    Conv1d(32->64, k=5)      64 x 57
    ReLU, MaxPool1d(4)       64 x 14     (remainder of 1 dropped)
    Dense(896->64), ReLU     64
    heads: Dense(64->4) class logits, Dense(64->1) normalized position

Positions are regressed as a fraction of the trace range.  At inference the
coarse network position is refined on the full-resolution trace inside a
window around it (see :func:`refine_position`).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import nn
from .baseline import ThresholdConfig, local_step_estimate, trace_pulse_width_m
from .plant import (
    FAULT_CLASSES,
    AcquisitionConfig,
    Detection,
    EventKind,
    FaultClass,
    FaultLabel,
    FiberEvent,
    FiberScenario,
    Trace,
    ValidationError,
    db_to_linear,
    linear_to_db,
)
from .seeding import mix_seed, normal_stream, rng_for
from .synth import noisy_trace

FORMAT_VERSION = 1
N_CLASSES = len(FAULT_CLASSES)


@dataclass(frozen=True)
class SamplerConfig:
    n_traces: int = 7500
    class_mix: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    position_range_m: tuple[float, float] = (500.0, 9500.0)
    splice_loss_db: tuple[float, float] = (0.1, 1.0)
    bend_loss_db: tuple[float, float] = (0.5, 3.0)
    bend_extent_m: tuple[float, float] = (1.0, 20.0)
    connector_loss_db: tuple[float, float] = (0.2, 1.5)
    connector_spike_db: tuple[float, float] = (2.0, 10.0)
    noise_sigma_range: tuple[float, float] = (0.5, 2.0)
    master_seed: int = 1

    def __post_init__(self) -> None:
        problems = []
        if int(self.n_traces) < 1:
            problems.append("n_traces must be positive")
        mix = tuple(float(x) for x in self.class_mix)
        if len(mix) != N_CLASSES or any(x < 0 for x in mix):
            problems.append("class_mix must hold 4 nonnegative weights")
        elif abs(sum(mix) - 1.0) > 1e-9:
            problems.append(f"class_mix must sum to 1 (got {sum(mix)!r})")
        for name in (
            "position_range_m",
            "splice_loss_db",
            "bend_loss_db",
            "bend_extent_m",
            "connector_loss_db",
            "connector_spike_db",
            "noise_sigma_range",
        ):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                problems.append(f"{name} must satisfy min <= max")
        if not 0 <= int(self.master_seed) < 2**64:
            problems.append("master_seed must be a 64-bit unsigned integer")
        if problems:
            raise ValidationError(problems)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SamplerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown sampler fields: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class CnnConfig:
    input_len: int = 1024
    lam: float = 1.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    init_seed: int = 7
    augment_prob: float = 0.5
    refine_radius_m: float = 10000.0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.input_len < 2:
            raise ValidationError("batch_size, epochs and input_len must be positive")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValidationError("augment_prob must lie in [0, 1]")
        nn.check_shapes(build_trunk(), (1, self.input_len))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CnnConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown cnn fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- sampling


def sample_scenario(cfg: SamplerConfig, acq: AcquisitionConfig, index: int) -> FiberScenario:
    """Scenario for dataset item ``index``; depends only on the configs and index."""
    seed = mix_seed(cfg.master_seed, index)
    rng = rng_for(seed)
    u_class, u_pos, u_noise, u_a, u_b = rng.random(5)
    cum = np.cumsum(cfg.class_mix)
    k = min(int(np.searchsorted(cum, u_class * cum[-1], side="right")), N_CLASSES - 1)
    fault = FAULT_CLASSES[k]

    def lerp(bounds: tuple[float, float], u: float) -> float:
        return float(bounds[0] + (bounds[1] - bounds[0]) * u)

    sigma = acq.noise_sigma_linear * lerp(cfg.noise_sigma_range, u_noise)
    item_acq = AcquisitionConfig(**{**acq.to_dict(), "noise_sigma_linear": sigma, "rng_seed": mix_seed(seed, 0)})
    pos = lerp(cfg.position_range_m, u_pos)
    if fault is FaultClass.NORMAL:
        events: tuple[FiberEvent, ...] = ()
        label = FaultLabel(FaultClass.NORMAL)
    else:
        if fault is FaultClass.SPLICE:
            ev = FiberEvent(EventKind.SPLICE, pos, loss_db=lerp(cfg.splice_loss_db, u_a))
        elif fault is FaultClass.BEND:
            ev = FiberEvent(
                EventKind.BEND,
                pos,
                loss_db=lerp(cfg.bend_loss_db, u_a),
                extent_m=lerp(cfg.bend_extent_m, u_b),
            )
        else:
            ev = FiberEvent(
                EventKind.CONNECTOR,
                pos,
                loss_db=lerp(cfg.connector_loss_db, u_a),
                reflectance_spike_db=lerp(cfg.connector_spike_db, u_b),
            )
        events = (ev,)
        label = FaultLabel(fault, pos)
    return FiberScenario(item_acq, events, label, name=f"item-{index:06d}")


def item_seed(cfg: SamplerConfig, index: int) -> int:
    return mix_seed(cfg.master_seed, index)


class SyntheticDataset(Sequence):
    """Lazily synthesized ``(Trace, FaultLabel)`` items.

    Item ``i`` is rebuilt from its own seed on every access, so the dataset
    never holds all traces in memory and access order does not matter.
    """

    def __init__(self, cfg: SamplerConfig, acq: AcquisitionConfig | None = None):
        self.cfg = cfg
        self.acq = acq or AcquisitionConfig()

    def __len__(self) -> int:
        return int(self.cfg.n_traces)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        s = sample_scenario(self.cfg, self.acq, i)
        return noisy_trace(s), s.label

    def scenario(self, i: int) -> FiberScenario:
        return sample_scenario(self.cfg, self.acq, i)


def sample_dataset(cfg: SamplerConfig, acq: AcquisitionConfig | None = None) -> list[tuple[Trace, FaultLabel]]:
    """Materialize every item of the synthetic dataset."""
    return list(SyntheticDataset(cfg, acq))


# ------------------------------------------------------------ augmentation


@dataclass(frozen=True)
class AugmentDraws:
    offset_db: float
    noise_multiplier: float
    shift_m: float


def draw_augmentation(seed: int) -> AugmentDraws:
    rng = rng_for(seed)
    u = rng.random(3)
    return AugmentDraws(
        offset_db=-2.0 + 4.0 * u[0],
        noise_multiplier=1.0 + 0.5 * u[1],
        shift_m=-50.0 + 100.0 * u[2],
    )


def augment(
    t: Trace,
    label: FaultLabel,
    seed: int,
    draws: AugmentDraws | None = None,
    base_sigma_linear: float | None = None,
) -> tuple[Trace, FaultLabel]:
    """Randomly offset, re-noise and shift a trace.

    The extra noise raises the trace's linear noise level from ``sigma`` to
    ``multiplier * sigma``; a multiplier of 1 adds none.  The shift moves the
    trace content by ``shift_m`` with edge padding, and moves the label with it.
    """
    d = draws or draw_augmentation(seed)
    if base_sigma_linear is None:
        base_sigma_linear = float(t.meta.get("noise_sigma_linear", 0.0) or 0.0)
    floor_db = float(t.meta.get("noise_floor_db", AcquisitionConfig().noise_floor_db))
    y = np.array(t.samples)

    extra = base_sigma_linear * math.sqrt(max(d.noise_multiplier**2 - 1.0, 0.0))
    if extra > 0:
        g = normal_stream(mix_seed(seed, 1), len(y))
        p = np.maximum(db_to_linear(y) + extra * g, db_to_linear(floor_db))
        y = linear_to_db(p)

    if d.shift_m != 0:
        z = t.distances()
        y = np.interp(z - d.shift_m, z, y)

    if d.offset_db != 0:
        y = y + d.offset_db

    new_label = label
    if label.position_m is not None and d.shift_m != 0:
        lo, hi = t.spacing_m, t.range_m - t.spacing_m
        new_label = FaultLabel(label.fault_class, float(np.clip(label.position_m + d.shift_m, lo, hi)))
    meta = dict(t.meta)
    meta["augment_seed"] = str(seed)
    return Trace(y, t.spacing_m, meta), new_label


# ------------------------------------------------------------ preprocessing


def resample(t: Trace, input_len: int) -> np.ndarray:
    if len(t) < 2:
        raise ValueError("trace needs at least 2 samples")
    grid = np.linspace(0.0, t.range_m, input_len)
    return np.interp(grid, t.distances(), t.samples)


def preprocess(t: Trace, input_len: int = 1024) -> np.ndarray:
    """Resample onto ``input_len`` points and standardize; shape ``(1, input_len)``."""
    x = resample(t, input_len)
    std = max(float(x.std()), 1e-6)
    return ((x - x.mean()) / std)[None, :]


# -------------------------------------------------------------------- model


def build_trunk() -> list[nn.Layer]:
    return [
        nn.Conv1d(1, 16, 9),
        nn.ReLU(),
        nn.MaxPool1d(4),
        nn.Conv1d(16, 32, 9),
        nn.ReLU(),
        nn.MaxPool1d(4),
        nn.Conv1d(32, 64, 5),
        nn.ReLU(),
        nn.MaxPool1d(4),
        nn.Dense(64 * 14, 64),
        nn.ReLU(),
    ]


class CnnModel:
    """Trunk plus classification and position heads; this is the weights file."""

    def __init__(self, input_len: int = 1024, trunk: list[nn.Layer] | None = None,
                 class_head: nn.Dense | None = None, pos_head: nn.Dense | None = None,
                 meta: Mapping[str, Any] | None = None):
        self.input_len = input_len
        self.trunk = trunk if trunk is not None else build_trunk()
        if trunk is None and input_len != 1024:
            flat = nn.check_shapes(self.trunk[:-2], (1, input_len))[-1]
            self.trunk[-2] = nn.Dense(int(np.prod(flat)), 64)
        shapes = nn.check_shapes(self.trunk, (1, input_len))
        width = shapes[-1][0]
        self.class_head = class_head or nn.Dense(width, N_CLASSES)
        self.pos_head = pos_head or nn.Dense(width, 1)
        self.meta = dict(meta or {})

    @classmethod
    def initialized(cls, cfg: CnnConfig, zero_heads: bool = False) -> "CnnModel":
        model = cls(cfg.input_len)
        nn.he_init(model.layers, rng_for(cfg.init_seed))
        if zero_heads:
            for head in (model.class_head, model.pos_head):
                head.params["weight"][:] = 0.0
                head.params["bias"][:] = 0.0
        return model

    @property
    def layers(self) -> list[nn.Layer]:
        return [*self.trunk, self.class_head, self.pos_head]

    def parameters(self) -> list[np.ndarray]:
        return nn.parameters(self.layers)

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        nn.assign_parameters(self.layers, values)

    def forward(self, x: np.ndarray):
        """``x`` is ``(batch, 1, input_len)``; returns logits, raw positions and a cache."""
        h, trunk_cache = nn.forward(self.trunk, x)
        logits, c_cache = self.class_head.forward(h)
        pos, p_cache = self.pos_head.forward(h)
        return logits, pos[:, 0], (trunk_cache, c_cache, p_cache)

    def backward(self, cache, g_logits: np.ndarray, g_pos: np.ndarray) -> list[np.ndarray]:
        trunk_cache, c_cache, p_cache = cache
        gc, gh1 = self.class_head.backward(c_cache, g_logits)
        gp, gh2 = self.pos_head.backward(p_cache, g_pos[:, None])
        g_trunk, _ = nn.backward(self.trunk, trunk_cache, gh1 + gh2)
        return nn.flat_grads(self.layers, [*g_trunk, gc, gp])

    def to_dict(self) -> dict[str, Any]:
        layers = [nn.layer_to_dict(layer) for layer in self.trunk]
        layers.append({**nn.layer_to_dict(self.class_head), "head": "class"})
        layers.append({**nn.layer_to_dict(self.pos_head), "head": "position"})
        return {
            "format_version": FORMAT_VERSION,
            "input_len": self.input_len,
            "classes": [c.value for c in FAULT_CLASSES],
            "meta": self.meta,
            "layers": layers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CnnModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported weights format_version {d.get('format_version')!r}")
        layers = d.get("layers") or []
        heads = {ld.get("head"): nn.layer_from_dict(ld) for ld in layers if ld.get("head")}
        trunk = [nn.layer_from_dict(ld) for ld in layers if not ld.get("head")]
        if set(heads) != {"class", "position"}:
            raise ValidationError("weights need exactly one class head and one position head")
        try:
            return cls(int(d["input_len"]), trunk, heads["class"], heads["position"], d.get("meta"))
        except nn.ShapeError as exc:
            raise ValidationError(f"weights do not compose: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "CnnModel":
        return cls.from_dict(json.loads(text))


def predict_batch(model: CnnModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits, pos, _ = model.forward(x)
    return nn.softmax(logits), pos


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


def is_validation(index: int, split_seed: int = 0) -> bool:
    """Roughly one item in five goes to validation, chosen by index hash."""
    return mix_seed(split_seed, index) % 5 == 0


def split_indices(n: int, split_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    val = np.array([is_validation(i, split_seed) for i in range(n)], dtype=bool)
    return np.flatnonzero(~val), np.flatnonzero(val)


def _targets(label: FaultLabel, range_m: float) -> tuple[int, float]:
    pos = np.nan if label.position_m is None else label.position_m / range_m
    return label.fault_class.index, pos


def _prepare(
    dataset: Sequence[tuple[Trace, FaultLabel]], input_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(dataset)
    x = np.empty((n, 1, input_len))
    y = np.empty(n, dtype=np.int64)
    p = np.empty(n)
    for i in range(n):
        t, label = dataset[i]
        x[i] = preprocess(t, input_len)
        y[i], p[i] = _targets(label, t.range_m)
    return x, y, p


def evaluate_loss(model: CnnModel, x, y, p, lam: float, batch: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy over a prepared set."""
    if len(x) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for s in range(0, len(x), batch):
        xb, yb, pb = x[s : s + batch], y[s : s + batch], p[s : s + batch]
        logits, pos, _ = model.forward(xb)
        loss, _, _ = nn.batch_loss(logits, yb, pos, pb, lam)
        total += loss * len(xb)
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return total / len(x), correct / len(x)


def train(
    dataset: Sequence[tuple[Trace, FaultLabel]],
    cfg: CnnConfig | None = None,
    split_seed: int = 0,
    progress: Callable[[EpochLog], None] | None = None,
    train_indices: Sequence[int] | None = None,
    val_indices: Sequence[int] | None = None,
) -> tuple[CnnModel, list[EpochLog]]:
    """Fit the classifier and return the best-validation-accuracy weights.

    Items are split 80/20 by index hash unless explicit index lists are
    given.  Each epoch reshuffles the training items with a seeded generator
    and replaces a seeded fraction of them by augmented copies.
    """
    cfg = cfg or CnnConfig()
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if train_indices is None or val_indices is None:
        tr, va = split_indices(n, split_seed)
    else:
        tr, va = np.asarray(train_indices, dtype=np.int64), np.asarray(val_indices, dtype=np.int64)
    if len(tr) == 0:
        raise ValueError("training split is empty")

    x, y, p = _prepare(dataset, cfg.input_len)
    model = CnnModel.initialized(cfg)
    state = nn.OptimizerState(lr=cfg.lr)
    params = model.parameters()
    best: tuple[float, list[np.ndarray]] | None = None
    log: list[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        rng = rng_for(mix_seed(cfg.init_seed, epoch))
        order = tr[rng.permutation(len(tr))]
        aug_mask = rng.random(len(order)) < cfg.augment_prob
        running, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb, pb = x[idx].copy(), p[idx].copy()
            for j in np.flatnonzero(aug_mask[s : s + cfg.batch_size]):
                i = int(idx[j])
                t, label = dataset[i]
                t2, l2 = augment(t, label, mix_seed(mix_seed(cfg.init_seed, epoch), i))
                xb[j] = preprocess(t2, cfg.input_len)
                pb[j] = _targets(l2, t2.range_m)[1]
            yb = y[idx]
            logits, pos, cache = model.forward(xb)
            loss, g_logits, g_pos = nn.batch_loss(logits, yb, pos, pb, cfg.lam)
            grads = model.backward(cache, g_logits, g_pos)
            params, state = nn.adam_step(params, grads, state)
            model.set_parameters(params)
            running += loss * len(idx)
            seen += len(idx)
        val_loss, val_acc = evaluate_loss(model, x[va], y[va], p[va], cfg.lam)
        entry = EpochLog(epoch, running / seen, val_loss, val_acc)
        log.append(entry)
        if progress:
            progress(entry)
        score = -1.0 if math.isnan(val_acc) else val_acc
        if best is None or score > best[0]:
            best = (score, [a.copy() for a in params])
    assert best is not None
    model.set_parameters(best[1])
    model.meta = {"cnn": cfg.to_dict(), "split_seed": split_seed, "n_items": n}
    return model, log


def training_log_csv(log: Sequence[EpochLog]) -> str:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    lines += [f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.val_acc!r}" for e in log]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- inference


def _ramp_basis(z: np.ndarray, starts: np.ndarray, extent: float, spacing: float) -> np.ndarray:
    width = max(extent, spacing)
    return np.clip((z[None, :] - starts[:, None]) / width, 0.0, 1.0)


def local_variance(y: np.ndarray, half: int = 100) -> np.ndarray:
    """Per-sample noise variance from first differences in a sliding window."""
    d = np.diff(y, prepend=y[0])
    cs = np.concatenate([[0.0], np.cumsum(d * d)])
    n = len(y)
    i = np.arange(n)
    lo = np.clip(i - half, 0, n)
    hi = np.clip(i + half + 1, 0, n)
    return (cs[hi] - cs[lo]) / (hi - lo) / 2.0 + 1e-12


def step_scan(y: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares gain of a downward step at each onset.

    The null model is one line through the whole segment; the gain at ``k``
    is the drop in weighted residual sum of squares when a step starting at
    ``z[k]`` is added.  Upward steps and the first onset score ``-inf``.
    """

    def suffix(a: np.ndarray) -> np.ndarray:
        return np.cumsum(a[::-1])[::-1]

    sw, swz, swy = suffix(w), suffix(w * z), suffix(w * y)
    gram = np.array([[sw[0], swz[0]], [swz[0], float(np.sum(w * z * z))]])
    v = np.array([swy[0], float(np.sum(w * z * y))])
    gi = np.linalg.inv(gram)
    hx = np.stack([sw, swz], axis=1)
    num = swy - hx @ (gi @ v)
    den = sw - np.einsum("ij,jk,ik->i", hx, gi, hx)
    ok = (num < 0) & (den > 1e-9 * sw[0])
    gain = np.where(ok, num * num / np.maximum(den, 1e-300), -np.inf)
    gain[0] = -np.inf
    return gain


def _connector_onset(y: np.ndarray, dz: float, w: float, lo: int, hi: int) -> int | None:
    m = max(1, int(math.floor(w / dz)))
    tpl = 1.0 - np.arange(m + 1) * dz / w
    lead = max(5, m)
    starts = np.arange(max(lo, lead), min(hi, len(y) - m - 1) + 1)
    if len(starts) == 0:
        return None
    cums = np.concatenate([[0.0], np.cumsum(y)])
    level = (cums[starts] - cums[starts - lead]) / lead
    idx = starts[:, None] + np.arange(m + 1)[None, :]
    score = (y[idx] - level[:, None]) @ tpl
    return int(starts[np.argmax(score)])


def _ramp_onset(y: np.ndarray, dz: float, fault: FaultClass, lo: int, hi: int, margin: int) -> float:
    a, b = max(0, lo - margin), min(len(y), hi + margin + 1)
    z = np.arange(a, b) * dz
    yy = y[a:b]
    basis = np.stack([np.ones_like(z), (z - z.mean()) / (z.std() + 1e-12)], axis=1)
    q, _ = np.linalg.qr(basis)
    y_perp = yy - q @ (q.T @ yy)
    extents = [0.0] if fault is FaultClass.SPLICE else [0.0, *np.arange(2.0, 25.0, 2.0)]
    starts = np.arange(lo, hi + 1) * dz
    best_pos, best_gain = float(starts[len(starts) // 2]), -np.inf
    for e in extents:
        if e == 0.0:
            ramps = (z[None, :] >= starts[:, None]).astype(np.float64)
        else:
            ramps = _ramp_basis(z, starts, e, dz)
        r_perp = ramps - (ramps @ q) @ q.T
        num = -(r_perp @ y_perp)  # loss is a downward step
        den = np.einsum("ij,ij->i", r_perp, r_perp)
        gain = np.where((num > 0) & (den > 1e-12), num * num / np.maximum(den, 1e-12), -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain, best_pos = float(gain[k]), float(starts[k])
    return best_pos


def refine_position(
    t: Trace,
    fault: FaultClass,
    coarse_m: float,
    radius_m: float,
    fine_m: float = 30.0,
    fit_margin_m: float = 100.0,
) -> float:
    """Sharpen a coarse fault position on the full-resolution trace.

    Only onsets within ``radius_m`` of ``coarse_m`` are considered.
    Reflective faults: the start of the triangular spike template that best
    matches the trace above its local level.  Loss faults: the best onset of
    a noise-weighted line-plus-step fit over the search window, then a local
    line-plus-ramp fit (ramp widths up to 24 m for bends, a pure step for
    splices) within ``fine_m`` of it.
    """
    y = t.samples
    dz = t.spacing_m
    n = len(y)
    c = int(round(coarse_m / dz))
    r = max(1, int(round(radius_m / dz)))
    lo, hi = max(1, c - r), min(n - 2, c + r)
    if hi < lo:
        return float(np.clip(coarse_m, 0.0, t.range_m))

    if fault is FaultClass.CONNECTOR:
        best = _connector_onset(y, dz, trace_pulse_width_m(t), lo, hi)
        return float((c if best is None else best) * dz)

    w = 1.0 / local_variance(y)
    gain = step_scan(y[lo : hi + 1], np.arange(lo, hi + 1) * dz, w[lo : hi + 1])
    k = lo + int(np.argmax(gain)) if np.isfinite(gain).any() else c
    f = max(1, int(round(fine_m / dz)))
    return _ramp_onset(y, dz, fault, max(lo, k - f), min(hi, k + f), int(round(fit_margin_m / dz)))


@dataclass(frozen=True)
class Inference:
    detection: Detection
    probabilities: np.ndarray
    coarse_position_m: float
    latency_s: float


def infer_full(
    model: CnnModel,
    t: Trace,
    refine_radius_m: float | None = None,
    threshold: ThresholdConfig | None = None,
) -> Inference:
    """Network inference with diagnostics; ``refine_radius_m=0`` disables refinement."""
    start = time.perf_counter()
    x = preprocess(t, model.input_len)
    probs, pos = predict_batch(model, x[None])
    latency = time.perf_counter() - start
    probs, raw = probs[0], float(pos[0])
    k = int(np.argmax(probs))
    fault = FaultClass.from_index(k)
    coarse = float(np.clip(raw, 0.0, 1.0)) * t.range_m
    if fault is FaultClass.NORMAL:
        det = Detection(fault, None, 0.0, float(probs[k]))
        return Inference(det, probs, coarse, latency)

    if refine_radius_m is None:
        refine_radius_m = float(model.meta.get("cnn", {}).get("refine_radius_m", CnnConfig().refine_radius_m))
    position = coarse
    if refine_radius_m > 0:
        position = refine_position(t, fault, coarse, refine_radius_m)
    position = float(np.clip(position, 0.0, t.range_m))
    try:
        loss, _ = local_step_estimate(t, int(round(position / t.spacing_m)), threshold or ThresholdConfig())
        loss = max(loss, 0.0)
    except ValueError:
        loss = 0.0
    det = Detection(fault, position, loss, float(np.clip(probs[k], 0.0, 1.0)))
    return Inference(det, probs, coarse, latency)


def infer(model: CnnModel, t: Trace, refine_radius_m: float | None = None) -> Detection:
    """Classify and locate the fault in ``t``.

    Ties between equal class probabilities go to the lowest class index, so a
    model with zeroed heads always answers Normal.
    """
    return infer_full(model, t, refine_radius_m).detection


def activation_map(model: CnnModel, t: Trace, layer_index: int) -> np.ndarray:
    """Post-activation tensor of trunk layer ``layer_index`` (0 is the input).

    Convolutional stages return ``(channels, length)``; dense stages return a
    single row.
    """
    if not 0 <= layer_index <= len(model.trunk):
        raise IndexError(f"layer_index must lie in 0..{len(model.trunk)}")
    x = preprocess(t, model.input_len)
    if layer_index == 0:
        return x
    h, _ = nn.forward(model.trunk[:layer_index], x)
    return h if h.ndim == 2 else h[None, :]


def fault_cell(model: CnnModel, t: Trace, layer_index: int) -> tuple[int, int]:
    """``(argmax cell, number of cells)`` of the channel-max activation profile."""
    act = activation_map(model, t, layer_index)
    profile = act.max(axis=0)
    return int(np.argmax(profile)), profile.shape[0]
