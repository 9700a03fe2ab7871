"""Command-line entry point: ``ectnet <command> ...`` or ``python -m ectnet``.

Precedence for training options: built-in defaults < ``--config`` JSON file
< explicit flags. Flag names mirror the ``TrainConfig`` field names.

Exit codes: 0 success, 2 usage, 3 data/checkpoint error, 4 numeric error
(non-finite values, diverged sweep), 5 configuration error, 1 anything else.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import (
    ARCHITECTURE_NAMES,
    build_network,
    discrepancy_report,
    flop_report,
    format_table,
    get_spec,
    load_checkpoint,
    parameter_report,
    save_checkpoint,
    table_rows,
)
from .data import (
    CLASS_NAMES,
    NormStats,
    SynthConfig,
    apply_znorm,
    decimate,
    export_complex_plane,
    label_index,
    load_mddect,
    save_mddect,
    synth_generate,
)
from .errors import ConfigError, DataError, DivergenceError, ECTError, NonFiniteError, ResumeError
from .evaluation import compute_cam, evaluate, export_cam, export_misclassified
from .numerics import Rng, threads
from .pipeline import BENCHMARK_SYNTH, prepare
from .training import TrainConfig, lr_range_find, resume, train

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3, 4, 5
DATA_ENV = "ECTNET_DATA_DIR"
DEFAULT_DATA_NAME = "mddect.bin"

log = logging.getLogger("ectnet")


@dataclass
class RunManifest:
    """Everything needed to repeat a run bit-for-bit in single-thread mode."""

    command: str
    arch: str
    config: dict
    seeds: dict
    dataset: dict
    split: dict
    version: str = __version__
    created: str = field(default_factory=lambda: _dt.datetime.now().isoformat(timespec="seconds"))
    extra: dict = field(default_factory=dict)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# -- helpers ----------------------------------------------------------------------

def default_data_path() -> Path:
    return Path(os.environ.get(DATA_ENV, ".")) / DEFAULT_DATA_NAME


def _run_dir(root, seed: int, name: str | None = None) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    path = Path(root) / (name or f"{stamp}-seed{seed}")
    path.mkdir(parents=True, exist_ok=False)
    return path


def _load_dataset(args):
    """``--synthetic`` builds the benchmark set in memory; otherwise read ``--data``."""
    if getattr(args, "synthetic", False):
        ds = synth_generate(BENCHMARK_SYNTH, rng=args.synth_seed)
        return ds, {"source": "synthetic", "synth_seed": args.synth_seed, "config": BENCHMARK_SYNTH.to_dict(),
                    "fingerprint": ds.fingerprint()}
    path = Path(args.data) if args.data else default_data_path()
    ds = load_mddect(path)
    return ds, {"source": str(path), "fingerprint": ds.fingerprint()}


def _ids(text: str | None):
    if text is None:
        return None
    return [int(v) for v in text.split(",") if v.strip()]


def _schedule(text: str):
    """``"5000:4e-6,7500:4e-7"`` -> ((5000, 4e-6), (7500, 4e-7)); ``""`` -> no steps."""
    steps = []
    for part in text.split(","):
        if part.strip():
            try:
                e, r = part.split(":")
                steps.append((int(e), float(r)))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad schedule step {part!r}; expected EPOCH:RATE") from None
    return tuple(steps)


def _train_config(args) -> TrainConfig:
    base = TrainConfig.load(args.config).to_dict() if args.config else TrainConfig().to_dict()
    for name in base:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return TrainConfig.from_dict(base)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training options (override --config)")
    g.add_argument("--config", help="JSON file of training options")
    g.add_argument("--batch-size", "--batch", dest="batch_size", type=int, help="mini-batch size (default 128)")
    g.add_argument("--epochs", type=int, help="number of epochs (default 10000)")
    g.add_argument("--lr-initial", "--lr", dest="lr_initial", type=float, help="initial learning rate (default 4e-5)")
    g.add_argument("--lr-schedule", type=_schedule,
                   help='step schedule "EPOCH:RATE,..." (default "5000:4e-6,7500:4e-7"; "" for none)')
    g.add_argument("--beta1", type=float, help="Adam beta1 (default 0.9)")
    g.add_argument("--beta2", type=float, help="Adam beta2 (default 0.999)")
    g.add_argument("--epsilon", type=float, help="Adam epsilon (default 1e-8)")
    g.add_argument("--seed", type=int, help="run seed for init, shuffling and crops (default 0)")
    g.add_argument("--checkpoint-every", type=int, help="epochs between state checkpoints, 0 = only at end")
    g.add_argument("--crop-length", type=int, help="random crop length (default 224)")
    g.add_argument("--n-crops", type=int, help="crops averaged at validation/test (default 10)")
    g.add_argument("--val-every", type=int, help="epochs between validations (default 1)")
    g.add_argument("--average", choices=("prob", "logit"), help="multi-crop averaging (default prob)")
    g.add_argument("--weight-decay", type=float, help="L2 coefficient (default 0, off)")
    g.add_argument("--label-smoothing", type=float, help="label smoothing (default 0, off)")
    g.add_argument("--grad-clip", type=float, help="global gradient-norm clip (default 0, off)")


def _add_data_flags(p: argparse.ArgumentParser, split: str | None = "full") -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help=f"dataset container (default ${DATA_ENV}/{DEFAULT_DATA_NAME})")
    g.add_argument("--synthetic", action="store_true", help="use the seeded synthetic benchmark set instead")
    g.add_argument("--synth-seed", type=int, default=7, help="seed of the synthetic set (default 7)")
    if split == "test":
        g.add_argument("--test-ids", help="comma-separated test volunteers (default: the run's split)")
    elif split:
        g.add_argument("--test-ids", default="0,1,2", help="comma-separated test volunteers (default 0,1,2)")
        g.add_argument("--val-ids", help="comma-separated validation volunteers (default: 3 drawn by seed)")
        g.add_argument("--decimation", type=int, default=5, help="temporal decimation factor (default 5)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None, help="BLAS threads; 1 = reproducible reference mode")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


# -- commands ---------------------------------------------------------------------

def cmd_dataset_gen(args) -> int:
    cfg = SynthConfig(n_volunteers=args.volunteers, n_angles=args.angles, n_directions=args.directions,
                      n_repeats=args.repeats, length=args.length, noise=args.noise)
    ds = synth_generate(cfg, rng=args.seed)
    path = save_mddect(ds, args.out)
    print(f"wrote {len(ds)} segments of length {ds.length} to {path} (fingerprint {ds.fingerprint()[:16]})")
    return EXIT_OK


def cmd_dataset_inspect(args) -> int:
    ds, info = _load_dataset(args)
    print(f"source: {info['source']}")
    print(f"segments: {len(ds)}  length: {ds.length}  channels: 2")
    print(f"volunteers: {ds.volunteer_ids()}")
    print(f"fingerprint: {info['fingerprint']}")
    counts = ds.class_counts()
    for name, c in zip(CLASS_NAMES, counts):
        print(f"  {name:<8}{c:>7}")
    return EXIT_OK


def cmd_dataset_export(args) -> int:
    ds, _ = _load_dataset(args)
    idx = np.arange(len(ds))
    if args.label is not None:
        idx = idx[ds.labels == label_index(args.label)]
    if args.limit is not None:
        idx = idx[: args.limit]
    path = export_complex_plane(ds.subset(idx), args.out, sample_ids=idx, delimiter=args.delimiter)
    print(f"wrote {idx.size} segments to {path}")
    return EXIT_OK


def _prepared(args, seed: int):
    ds, info = _load_dataset(args)
    data = prepare(ds, _ids(args.test_ids), _ids(args.val_ids), args.decimation, rng=seed)
    return data, info


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data, info = _prepared(args, cfg.seed)
    out = _run_dir(args.runs_dir, cfg.seed, args.name)
    manifest = RunManifest("train", args.arch, cfg.to_dict(), {"run": cfg.seed, "synth": info.get("synth_seed")},
                           info, data.split_ids, extra={"decimation": args.decimation, "dtype": args.dtype,
                                                        "norm": data.stats.to_dict()})
    manifest.save(out / "manifest.json")
    cfg.save(out / "config.json")
    progress = (lambda r: log.info("epoch %d loss %.4f acc %.4f val %s", r["epoch"], r["train_loss"],
                                   r["train_accuracy"], r["val_accuracy"])) if args.verbose else None
    if args.resume:
        result = resume(args.resume, data.train, data.val, cfg, out_dir=out, on_epoch=progress)
    else:
        net = build_network(args.arch, rng=cfg.seed, dtype=np.dtype(args.dtype))
        result = train(net, data.train, data.val, cfg, out_dir=out, on_epoch=progress)
    best = result.best_network()
    save_checkpoint(best, out / "model.ckpt", extra={"norm": data.stats.to_dict(), "decimation": args.decimation,
                                                     "split": data.split_ids, "best_epoch": result.best_epoch})
    report = evaluate(best, data.test, rng=Rng(cfg.seed).stream("test"), n_crops=cfg.n_crops,
                      average=cfg.average)
    report.save(out / "eval_test.json")
    report.save_confusion(out / "confusion_test.csv")
    print(f"run directory: {out}")
    print(f"best epoch {result.best_epoch}  validation top-1 {result.best_val_accuracy}")
    print(f"test top-1 {report.top1_accuracy:.4f}  +-0.1mm {report.tolerance_accuracy:.4f}")
    return EXIT_OK


def cmd_lr_find(args) -> int:
    cfg = _train_config(args)
    data, _ = _prepared(args, cfg.seed)
    net = build_network(args.arch, rng=cfg.seed, dtype=np.dtype(args.dtype))
    res = lr_range_find(net, data.train, args.lr_min, args.lr_max, args.epochs_per_step, args.growth,
                        args.smooth_window, config=cfg)
    print(f"{'lr':>12}{'loss':>12}{'smoothed':>12}")
    for lr, raw, sm in zip(res.lrs, res.losses, res.smoothed):
        print(f"{lr:>12.3e}{raw:>12.5f}{sm:>12.5f}")
    if res.diverged:
        print("sweep stopped early: loss exceeded 4x its initial value")
    print(f"suggested lr: {res.suggested_lr:.3e}")
    if args.out:
        Path(args.out).write_text(json.dumps({"lrs": res.lrs.tolist(), "losses": res.losses.tolist(),
                                              "smoothed": res.smoothed.tolist(),
                                              "suggested_lr": res.suggested_lr,
                                              "smooth_window": res.smooth_window}, indent=1))
    return EXIT_OK


def _checkpoint_with_norm(path):
    net, extra, _ = load_checkpoint(path, return_extra=True)
    if "norm" not in extra:
        raise DataError(f"{path}: no normalisation statistics; use the model.ckpt written by `train`")
    return net, extra


def _test_split(args, extra: dict):
    """Test volunteers of the stored split, decimated and normalised as in training."""
    ds, _ = _load_dataset(args)
    factor = int(extra.get("decimation", 5))
    if factor > 1:
        ds = decimate(ds, factor)
    test_ids = _ids(args.test_ids) or extra.get("split", {}).get("test_ids")
    if not test_ids:
        raise DataError("no test volunteers: pass --test-ids")
    test = ds.subset(np.flatnonzero(np.isin(ds.volunteers, test_ids)), "test")
    if len(test) == 0:
        raise DataError(f"no segments from volunteers {test_ids}")
    return apply_znorm(test, NormStats.from_dict(extra["norm"]))


def cmd_evaluate(args) -> int:
    net, extra = _checkpoint_with_norm(args.checkpoint)
    test = _test_split(args, extra)
    report = evaluate(net, test, rng=Rng(args.seed).stream("test"), n_crops=args.n_crops, average=args.average)
    print(f"samples: {len(test)}")
    print(f"top-1 {report.top1_accuracy:.4f}  +-0.1mm {report.tolerance_accuracy:.4f}")
    if args.out:
        out = report.save(args.out)
        report.save_confusion(out.with_name(out.stem + "_confusion.csv"))
        print(f"report: {out}")
        if args.misclassified:
            path = export_misclassified(report, test, args.misclassified,
                                        out.with_name(out.stem + f"_predicted_{args.misclassified}.csv"))
            print(f"predicted-as-{args.misclassified} export: {path}")
    elif args.misclassified:
        raise ConfigError("--misclassified needs --out")
    return EXIT_OK


def cmd_cam(args) -> int:
    net, extra = _checkpoint_with_norm(args.checkpoint)
    test = _test_split(args, extra)
    label = label_index(args.label)
    idx = np.flatnonzero(test.labels == label)[: args.limit]
    if idx.size == 0:
        raise DataError(f"no test samples of class {args.label}")
    cls = label if args.class_index is None else args.class_index
    cams = [compute_cam(net, test[int(i)], cls) for i in idx]
    path = export_cam(cams, args.out, align_peaks=args.align_peaks)
    worst = max(c.mean_identity_error for c in cams)
    print(f"wrote {len(cams)} maps for class {CLASS_NAMES[cls]} to {path} (max identity error {worst:.2e})")
    return EXIT_OK


def cmd_count(args) -> int:
    if args.all or not args.arch:
        rows = table_rows(args.length)
        print(format_table(rows))
        notes = discrepancy_report(rows)
        if notes:
            print()
            print("discrepancies:")
            for n in notes:
                print(f"  - {n}")
        return EXIT_OK
    net = build_network(get_spec(args.arch))
    print(parameter_report(net).format())
    print()
    print(flop_report(net, args.length, flops_per_mac=args.flops_per_mac).format())
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ectnet", description="1-d residual networks for eddy-current scan classification.")
    p.add_argument("--version", action="version", version=f"ectnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ds = sub.add_parser("dataset", help="generate, inspect or export scan datasets")
    dsub = ds.add_subparsers(dest="dataset_command", required=True, parser_class=_Parser)
    gen = dsub.add_parser("gen", help="write a synthetic dataset container")
    gen.add_argument("--out", required=True, help="output container path")
    gen.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    gen.add_argument("--volunteers", type=int, default=3, help="operators (default 3)")
    gen.add_argument("--angles", type=int, default=8, help="probe angles (default 8)")
    gen.add_argument("--directions", type=int, default=2, help="scan directions (default 2)")
    gen.add_argument("--repeats", type=int, default=5, help="repeats (default 5)")
    gen.add_argument("--length", type=int, default=1250, help="samples per scan (default 1250)")
    gen.add_argument("--noise", type=float, default=0.05, help="noise level (default 0.05)")
    _add_common(gen)
    gen.set_defaults(func=cmd_dataset_gen)
    ins = dsub.add_parser("inspect", help="summarise a dataset")
    _add_data_flags(ins, split=None)
    _add_common(ins)
    ins.set_defaults(func=cmd_dataset_inspect)
    exp = dsub.add_parser("export-plane", help="export I/Q traces for complex-plane plots")
    _add_data_flags(exp, split=None)
    exp.add_argument("--out", required=True, help="output CSV path")
    exp.add_argument("--label", help='only this class, e.g. "1.4mm", "LiftOff"')
    exp.add_argument("--limit", type=int, help="at most this many segments")
    exp.add_argument("--delimiter", default=",", help="field delimiter (default ,)")
    _add_common(exp)
    exp.set_defaults(func=cmd_dataset_export)

    tr = sub.add_parser("train", help="train a network; writes a run directory")
    tr.add_argument("--arch", default="ResNeXt1D-14", choices=ARCHITECTURE_NAMES, help="architecture")
    tr.add_argument("--dtype", default="float32", choices=("float32", "float64"), help="parameter precision")
    tr.add_argument("--runs-dir", default="runs", help="parent of run directories (default ./runs)")
    tr.add_argument("--name", help="run directory name (default TIMESTAMP-seedSEED)")
    tr.add_argument("--resume", help="state.ckpt of an earlier run to continue")
    _add_data_flags(tr)
    _add_config_flags(tr)
    _add_common(tr)
    tr.set_defaults(func=cmd_train)

    lf = sub.add_parser("lr-find", help="geometric learning-rate range test")
    lf.add_argument("--arch", default="ResNeXt1D-14", choices=ARCHITECTURE_NAMES, help="architecture")
    lf.add_argument("--dtype", default="float32", choices=("float32", "float64"), help="parameter precision")
    lf.add_argument("--lr-min", type=float, default=1e-7, help="first rate (default 1e-7)")
    lf.add_argument("--lr-max", type=float, default=1e-1, help="last rate (default 1e-1)")
    lf.add_argument("--growth", type=float, default=2.0, help="rate multiplier per step (default 2)")
    lf.add_argument("--epochs-per-step", type=int, default=1, help="epochs at each rate (default 1)")
    lf.add_argument("--smooth-window", type=int, default=3, help="moving-average window (default 3)")
    lf.add_argument("--out", help="write the curve as JSON")
    _add_data_flags(lf)
    _add_config_flags(lf)
    _add_common(lf)
    lf.set_defaults(func=cmd_lr_find)

    ev = sub.add_parser("evaluate", help="multi-crop test of a trained model")
    ev.add_argument("--checkpoint", required=True, help="model.ckpt from a train run")
    ev.add_argument("--out", help="report JSON path (confusion CSV written alongside)")
    ev.add_argument("--seed", type=int, default=0, help="crop seed (default 0)")
    ev.add_argument("--n-crops", type=int, default=10, help="crops per sample (default 10)")
    ev.add_argument("--average", choices=("prob", "logit"), default="prob", help="averaging (default prob)")
    ev.add_argument("--misclassified", help='also export samples predicted as this class, e.g. "1.4mm"')
    _add_data_flags(ev, split="test")
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    cam = sub.add_parser("cam", help="class activation maps for test samples")
    cam.add_argument("--checkpoint", required=True, help="model.ckpt from a train run")
    cam.add_argument("--label", default="2.0mm", help='class whose samples are mapped (default "2.0mm")')
    cam.add_argument("--class-index", type=int, help="class to explain (default: the sample label)")
    cam.add_argument("--limit", type=int, default=20, help="at most this many samples (default 20)")
    cam.add_argument("--align-peaks", action="store_true", help="shift time so each trace starts at its first peak")
    cam.add_argument("--out", required=True, help="output CSV path")
    _add_data_flags(cam, split="test")
    _add_common(cam)
    cam.set_defaults(func=cmd_cam)

    ct = sub.add_parser("count", help="parameter and FLOP counts")
    ct.add_argument("--all", action="store_true", help="table for every architecture (default)")
    ct.add_argument("--arch", choices=ARCHITECTURE_NAMES, help="per-layer breakdown for one architecture")
    ct.add_argument("--length", type=int, default=224, help="input length (default 224)")
    ct.add_argument("--flops-per-mac", type=int, default=2, help="FLOPs per multiply-accumulate (default 2)")
    _add_common(ct)
    ct.set_defaults(func=cmd_count)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        with threads(args.threads or 1):
            return args.func(args)
    except (NonFiniteError, DivergenceError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ResumeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ECTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())
