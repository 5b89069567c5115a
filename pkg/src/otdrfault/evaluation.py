"""Metrics and the thresholding-versus-CNN benchmark harness."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .baseline import ThresholdConfig, detect_threshold
from .classifier import CnnModel, SamplerConfig, SyntheticDataset, infer_full
from .plant import FAULT_CLASSES, AcquisitionConfig, Detection, FaultClass, FaultLabel

TABLE_ROWS = (
    "Detection Accuracy",
    "False Positive Rate",
    "Average Localization Error",
    "Average Fault Detection Time",
)
METHOD_TITLES = {"baseline": "Traditional Thresholding", "cnn": "Proposed AI Model"}
ACCURACY_NOTE = (
    "Detection Accuracy is 4-class accuracy (Normal/Splice/Bend/Connector) and is not gated on "
    "position; localization error is averaged over faulty traces whose class was predicted "
    "correctly; detection time is per-trace inference only."
)


class SeedCollisionError(ValueError):
    pass


@dataclass
class MethodReport:
    detection_accuracy: float
    false_positive_rate: Optional[float]
    mean_localization_error_m: Optional[float]
    mean_latency_s: Optional[float]
    confusion: list[list[int]]
    n_traces: int
    n_normal: int
    n_localized: int
    within_tolerance: Optional[float]
    position_tolerance_m: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def score(
    detections: Sequence[Detection],
    labels: Sequence[FaultLabel],
    position_tolerance_m: float = 5.0,
    latencies_s: Sequence[float] | None = None,
) -> MethodReport:
    """Table-style metrics for one method.

    The false positive rate counts only true-Normal traces; localization
    error counts only faulty traces whose class was predicted correctly.
    Either is ``None`` when its denominator is empty.
    """
    if len(detections) != len(labels):
        raise ValueError(f"{len(detections)} detections for {len(labels)} labels")
    k = len(FAULT_CLASSES)
    confusion = np.zeros((k, k), dtype=np.int64)
    errors = []
    normal_total = normal_flagged = 0
    for det, lab in zip(detections, labels):
        confusion[lab.fault_class.index, det.fault_class.index] += 1
        if lab.fault_class is FaultClass.NORMAL:
            normal_total += 1
            normal_flagged += det.fault_class is not FaultClass.NORMAL
        elif det.fault_class is lab.fault_class:
            errors.append(abs(float(det.position_m) - float(lab.position_m)))
    n = len(labels)
    errs = np.array(errors)
    return MethodReport(
        detection_accuracy=float(np.trace(confusion) / n) if n else 0.0,
        false_positive_rate=normal_flagged / normal_total if normal_total else None,
        mean_localization_error_m=float(errs.mean()) if errs.size else None,
        mean_latency_s=float(np.mean(latencies_s)) if latencies_s is not None and len(latencies_s) else None,
        confusion=confusion.tolist(),
        n_traces=n,
        n_normal=normal_total,
        n_localized=int(errs.size),
        within_tolerance=float(np.mean(errs <= position_tolerance_m)) if errs.size else None,
        position_tolerance_m=position_tolerance_m,
    )


@dataclass
class BenchmarkReport:
    methods: dict[str, MethodReport]
    dataset: dict[str, Any]
    seeds: dict[str, Any]
    environment: dict[str, str] = field(default_factory=dict)
    notes: str = ACCURACY_NOTE

    def to_dict(self) -> dict[str, Any]:
        return {
            "methods": {k: v.to_dict() for k, v in self.methods.items()},
            "dataset": self.dataset,
            "seeds": self.seeds,
            "environment": self.environment,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        return format_table(self.methods)


def without_latency(report: dict[str, Any]) -> dict[str, Any]:
    """Copy of a report dict with the timing fields removed."""
    out = json.loads(json.dumps(report))
    for m in out.get("methods", {}).values():
        m.pop("mean_latency_s", None)
    return out


def _pct(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{100.0 * x:.1f}%"


def _meters(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{x:.2f} meters"


def _ms(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{1000.0 * x:.2f} ms"


def format_table(methods: dict[str, MethodReport]) -> str:
    keys = [k for k in ("baseline", "cnn") if k in methods] + [
        k for k in methods if k not in ("baseline", "cnn")
    ]
    cols = [METHOD_TITLES.get(k, k) for k in keys]
    rows = [
        [TABLE_ROWS[0], *(_pct(methods[k].detection_accuracy) for k in keys)],
        [TABLE_ROWS[1], *(_pct(methods[k].false_positive_rate) for k in keys)],
        [TABLE_ROWS[2], *(_meters(methods[k].mean_localization_error_m) for k in keys)],
        [TABLE_ROWS[3], *(_ms(methods[k].mean_latency_s) for k in keys)],
    ]
    header = ["Metric", *cols]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"


def run_benchmark(
    test_cfg: SamplerConfig,
    model: CnnModel,
    threshold_cfg: ThresholdConfig | None = None,
    acq: AcquisitionConfig | None = None,
    train_master_seed: int | None = None,
    position_tolerance_m: float = 5.0,
) -> BenchmarkReport:
    """Synthesize a held-out set and score both detectors on identical traces.

    Raises:
        SeedCollisionError: if the test master seed equals the training one.
    """
    threshold_cfg = threshold_cfg or ThresholdConfig()
    acq = acq or AcquisitionConfig()
    if train_master_seed is None:
        train_master_seed = model.meta.get("train_master_seed")
    if train_master_seed is not None and int(train_master_seed) == int(test_cfg.master_seed):
        raise SeedCollisionError(
            f"test master_seed {test_cfg.master_seed} equals the training master_seed"
        )
    data = SyntheticDataset(test_cfg, acq)
    labels, base_dets, cnn_dets, base_t, cnn_t = [], [], [], [], []
    for i in range(len(data)):
        trace, label = data[i]
        labels.append(label)
        t0 = time.perf_counter()
        base_dets.append(detect_threshold(trace, threshold_cfg))
        base_t.append(time.perf_counter() - t0)
        res = infer_full(model, trace, threshold=threshold_cfg)
        cnn_dets.append(res.detection)
        cnn_t.append(res.latency_s)
    methods = {
        "baseline": score(base_dets, labels, position_tolerance_m, base_t),
        "cnn": score(cnn_dets, labels, position_tolerance_m, cnn_t),
    }
    return BenchmarkReport(
        methods=methods,
        dataset={"sampler": test_cfg.to_dict(), "acquisition": acq.to_dict(), "threshold": threshold_cfg.to_dict()},
        seeds={
            "test_master_seed": int(test_cfg.master_seed),
            "train_master_seed": None if train_master_seed is None else int(train_master_seed),
            "cnn_init_seed": model.meta.get("cnn", {}).get("init_seed"),
        },
        environment={
            "python": platform.python_version(),
            "numpy": np.__version__,
            "machine": platform.machine(),
            "note": "latency is wall-clock on this machine and is not reproducible",
        },
    )
