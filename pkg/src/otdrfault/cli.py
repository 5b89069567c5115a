"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import files
from .baseline import ThresholdConfig, detect_threshold
from .classifier import CnnConfig, CnnModel, SamplerConfig, SyntheticDataset, infer, train, training_log_csv
from .evaluation import SeedCollisionError, run_benchmark
from .geolocate import locate_fault, route_from_dict
from .plant import (
    AcquisitionConfig,
    FaultClass,
    FaultLabel,
    FiberScenario,
    ValidationError,
    validate_scenario,
)
from .synth import clean_trace, noisy_trace, reference_scenarios

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        raise UsageError(f"{self.prog}: {message}")


def _say(msg: str) -> None:
    print(msg, flush=True)


# ------------------------------------------------------------------ helpers


def _load_json(path: str) -> Any:
    try:
        return files.load_json(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None


def _threshold_from_args(args: argparse.Namespace) -> ThresholdConfig:
    base: dict[str, Any] = {}
    if getattr(args, "threshold", None):
        base = dict(_load_json(args.threshold))
    for flag, key in (
        ("window_m", "window_m"),
        ("loss_cutoff_db", "loss_cutoff_db"),
        ("spike_cutoff_db", "spike_cutoff_db"),
        ("bend_loss_cutoff_db", "bend_loss_cutoff_db"),
        ("guard_m", "guard_m"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    return ThresholdConfig.from_dict(base)


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", help="ThresholdConfig JSON file")
    p.add_argument("--window-m", dest="window_m", type=float, help="fit window length (m)")
    p.add_argument("--loss-cutoff-db", dest="loss_cutoff_db", type=float, help="step-loss cutoff (dB)")
    p.add_argument("--spike-cutoff-db", dest="spike_cutoff_db", type=float, help="reflectance cutoff (dB)")
    p.add_argument("--bend-loss-cutoff-db", dest="bend_loss_cutoff_db", type=float, help="bend cutoff (dB)")
    p.add_argument("--guard-m", dest="guard_m", type=float, help="suppression radius (m)")


def _sampler_and_acq(path: str) -> tuple[SamplerConfig, AcquisitionConfig]:
    doc = dict(_load_json(path))
    acq = AcquisitionConfig.from_dict(doc.pop("acquisition", {}))
    return SamplerConfig.from_dict(doc), acq


def _load_model(path: str) -> CnnModel:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: weights file not found")
    return CnnModel.from_dict(files.load_json(p))


def _load_route(path: str):
    return route_from_dict(_load_json(path))


# ------------------------------------------------------------- subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    if (args.scenario is None) == (args.reference is None):
        raise UsageError("synth: give exactly one of SCENARIO or --reference")
    if args.reference is not None:
        if not 0 <= args.reference <= 3:
            raise UsageError("synth: --reference must be 0..3")
        scenario = reference_scenarios()[args.reference]
    else:
        doc = _load_json(args.scenario)
        if not isinstance(doc, dict):
            raise InputError(f"{args.scenario}: scenario must be a JSON object")
        scenario = FiberScenario.from_dict(doc, name=Path(args.scenario).stem)
    if args.seed is not None:
        scenario = FiberScenario(scenario.config.with_seed(args.seed), scenario.events, scenario.label, scenario.name)
    problems = validate_scenario(scenario)
    if problems:
        raise ValidationError(problems)
    trace = clean_trace(scenario) if args.clean else noisy_trace(scenario)
    files.write_trace(args.out, trace)
    _say(f"rng_seed={scenario.config.rng_seed}")
    _say(f"wrote {len(trace)} samples to {args.out}")
    return EXIT_OK


def cmd_dataset(args: argparse.Namespace) -> int:
    sampler, acq = _sampler_and_acq(args.config)
    if args.n is not None:
        sampler = SamplerConfig.from_dict({**sampler.to_dict(), "n_traces": args.n})
    out = Path(args.out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create {out}: {exc}") from exc
    data = SyntheticDataset(sampler, acq)
    entries = []
    for i in range(len(data)):
        scen = data.scenario(i)
        trace = noisy_trace(scen)
        rel = f"traces/{scen.name}.csv"
        files.write_trace(out / rel, trace)
        entry: dict[str, Any] = {"trace": rel, "class": scen.label.fault_class.value, "seed": scen.config.rng_seed}
        if scen.label.position_m is not None:
            entry["position_m"] = scen.label.position_m
        entries.append(entry)
    files.atomic_write_text(out / "manifest.jsonl", files.manifest_lines(entries))
    files.atomic_write_text(
        out / "dataset.json",
        files.dump_json({"sampler": sampler.to_dict(), "acquisition": acq.to_dict()}),
    )
    _say(f"master_seed={sampler.master_seed}")
    _say(f"wrote {len(entries)} traces and manifest to {out}")
    return EXIT_OK


class _ManifestDataset:
    def __init__(self, root: Path, entries: list[dict[str, Any]]):
        self.root, self.entries = root, entries
        self._cache: dict[int, Any] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int):
        if i not in self._cache:
            e = self.entries[i]
            path = self.root / e["trace"]
            if not path.is_file():
                raise InputError(f"manifest references missing trace file {path}")
            trace = files.read_trace(path)
            label = FaultLabel(FaultClass(e["class"]), e.get("position_m"))
            self._cache[i] = (trace, label)
        return self._cache[i]


def cmd_train(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise InputError(f"{manifest}: manifest not found")
    entries = files.read_manifest(manifest)
    if not entries:
        raise InputError(f"{manifest}: manifest is empty")
    cfg_doc: dict[str, Any] = dict(_load_json(args.config)) if args.config else {}
    for key in ("epochs", "batch_size", "lr", "init_seed"):
        val = getattr(args, key)
        if val is not None:
            cfg_doc[key] = val
    cfg = CnnConfig.from_dict(cfg_doc)
    data = _ManifestDataset(manifest.parent, entries)
    for i in range(len(data)):
        data[i]  # surface missing or malformed traces before training
    _say(f"init_seed={cfg.init_seed} split_seed={args.split_seed}")
    model, log = train(
        data,
        cfg,
        split_seed=args.split_seed,
        progress=lambda e: _say(
            f"epoch {e.epoch}: train_loss={e.train_loss:.4f} val_loss={e.val_loss:.4f} val_acc={e.val_acc:.4f}"
        ),
    )
    meta_path = manifest.parent / "dataset.json"
    if meta_path.is_file():
        desc = files.load_json(meta_path)
        model.meta["train_master_seed"] = int(desc["sampler"]["master_seed"])
        _say(f"train_master_seed={model.meta['train_master_seed']}")
    files.atomic_write_text(args.out, model.to_json() + "\n")
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    files.atomic_write_text(log_path, training_log_csv(log))
    best = max(e.val_acc for e in log)
    _say(f"best validation accuracy: {best:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    sampler, acq = _sampler_and_acq(args.config)
    model = _load_model(args.weights)
    thr = _threshold_from_args(args)
    try:
        report = run_benchmark(sampler, model, thr, acq, train_master_seed=args.train_seed)
    except SeedCollisionError as exc:
        raise InputError(str(exc)) from None
    _say(f"test_master_seed={sampler.master_seed} train_master_seed={report.seeds['train_master_seed']}")
    out = Path(args.out)
    files.atomic_write_text(out.with_suffix(".json"), report.to_json())
    files.atomic_write_text(out.with_suffix(".txt"), report.table())
    _say(report.table().rstrip())
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    try:
        trace = files.read_trace(args.trace)
    except FileNotFoundError:
        raise InputError(f"{args.trace}: no such file") from None
    model = _load_model(args.weights)
    thr = _threshold_from_args(args)
    route = _load_route(args.route) if args.route else None
    _say(f"rng_seed={trace.meta.get('rng_seed', 'n/a')}")
    results = [("threshold", detect_threshold(trace, thr)), ("cnn", infer(model, trace))]
    for name, det in results:
        if det.fault_class is FaultClass.NORMAL:
            _say(f"{name}: no fault (confidence {det.confidence:.3f})")
            continue
        line = (
            f"{name}: {det.fault_class.value} at {det.position_m:.1f} m, "
            f"loss {det.loss_db_est:.2f} dB, confidence {det.confidence:.3f}"
        )
        if route is not None:
            try:
                lat, lon = locate_fault(route, det.position_m)
            except ValueError as exc:
                raise InputError(str(exc)) from None
            line += f", lat {lat:.6f}, lon {lon:.6f}"
        _say(line)
    return EXIT_OK


def cmd_locate(args: argparse.Namespace) -> int:
    route = _load_route(args.route)
    try:
        lat, lon = locate_fault(route, args.distance)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _say(f"{lat:.9f},{lon:.9f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="otdrfault", description="OTDR fault synthesis, detection and benchmarking.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize one trace to CSV")
    s.add_argument("scenario", nargs="?", help="scenario JSON file")
    s.add_argument("--reference", type=int, help="reference archetype 0-3 (normal, splice, bend, connector)")
    s.add_argument("--out", required=True, help="output trace CSV")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--clean", action="store_true", help="noiseless trace")
    mode.add_argument("--noisy", action="store_true", help="noisy trace (default)")
    s.add_argument("--seed", type=int, help="override the noise seed")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("dataset", help="write a synthetic dataset and manifest")
    d.add_argument("--config", required=True, help="sampler JSON (may embed an 'acquisition' object)")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--n", type=int, help="override n_traces")
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train the CNN on a manifest")
    t.add_argument("--manifest", required=True, help="manifest.jsonl from the dataset command")
    t.add_argument("--config", help="CnnConfig JSON")
    t.add_argument("--out", required=True, help="output weights JSON")
    t.add_argument("--log", help="training log CSV (default: next to the weights)")
    t.add_argument("--epochs", type=int, help="override epochs")
    t.add_argument("--batch-size", dest="batch_size", type=int, help="override batch size")
    t.add_argument("--lr", type=float, help="override learning rate")
    t.add_argument("--init-seed", dest="init_seed", type=int, help="override init/shuffle seed")
    t.add_argument("--split-seed", dest="split_seed", type=int, default=0, help="train/validation split seed")
    t.set_defaults(func=cmd_train)

    for name in ("eval", "bench"):
        e = sub.add_parser(name, help="benchmark thresholding against the CNN")
        e.add_argument("--config", required=True, help="test sampler JSON")
        e.add_argument("--weights", required=True, help="weights JSON")
        e.add_argument("--out", required=True, help="report path stem (.json and .txt are written)")
        e.add_argument("--train-seed", dest="train_seed", type=int, help="training master seed, if not in weights")
        _add_threshold_flags(e)
        e.set_defaults(func=cmd_eval)

    g = sub.add_parser("diagnose", help="run both detectors on one trace")
    g.add_argument("trace", help="trace CSV")
    g.add_argument("--weights", required=True, help="weights JSON")
    g.add_argument("--route", help="route JSON for coordinates")
    _add_threshold_flags(g)
    g.set_defaults(func=cmd_diagnose)

    loc = sub.add_parser("locate", help="coordinates of a fiber distance on a route")
    loc.add_argument("--route", required=True, help="route JSON")
    loc.add_argument("--distance", required=True, type=float, help="fiber distance (m)")
    loc.set_defaults(func=cmd_locate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ValidationError, files.FormatError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
