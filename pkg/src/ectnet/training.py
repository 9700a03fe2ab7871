"""Adam, step learning-rate schedule, learning-rate range test and the epoch loop.

Randomness comes from three named child streams of the run seed: ``shuffle``
(epoch permutations), ``crop`` (train-time window offsets) and ``eval``
(validation crop offsets, redrawn identically at every validation so that
successive accuracies are compared on the same windows).
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .architectures import Network, load_checkpoint, save_checkpoint
from .data import Dataset, crop_at
from .errors import ConfigError, DataError, DivergenceError, NonFiniteError, ResumeError, ShapeError
from .evaluation import evaluate
from .numerics import Rng, Tensor, backward, softmax_cross_entropy, threads

log = logging.getLogger(__name__)

PUBLISHED_SCHEDULE = ((5000, 4.0e-6), (7500, 4.0e-7))


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 10000
    lr_initial: float = 4.0e-5
    lr_schedule: tuple[tuple[int, float], ...] = PUBLISHED_SCHEDULE
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 100
    crop_length: int = 224
    n_crops: int = 10
    val_every: int = 1
    average: str = "prob"
    # off unless asked for
    weight_decay: float = 0.0
    label_smoothing: float = 0.0
    grad_clip: float = 0.0
    threads: int = 1

    def __post_init__(self):
        self.lr_schedule = tuple((int(e), float(r)) for e, r in self.lr_schedule)
        self.validate()

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "crop_length", "n_crops", "val_every", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs and checkpoint_every must be non-negative")
        if self.lr_initial < 0:
            raise ConfigError("lr_initial must be non-negative")
        epochs = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError(f"schedule epochs must be strictly increasing: {epochs}")
        if any(e < 0 for e in epochs) or any(r <= 0 for _, r in self.lr_schedule):
            raise ConfigError("schedule epochs must be >= 0 and rates positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigError("Adam needs 0 <= beta < 1 and epsilon > 0")
        if self.average not in ("prob", "logit"):
            raise ConfigError("average must be 'prob' or 'logit'")
        if self.weight_decay < 0 or self.grad_clip < 0 or not 0 <= self.label_smoothing < 1:
            raise ConfigError("weight_decay, grad_clip must be >= 0 and label_smoothing in [0, 1)")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = [list(s) for s in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Piecewise-constant rate: ``lr_initial`` until the first step, then each step's value."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    lr = config.lr_initial
    for start, rate in config.lr_schedule:
        if epoch >= start:
            lr = rate
    return lr


# -- Adam -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.t)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied to ``params`` in place; ``state.t`` advances by one."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError(f"parameter {p.name or ''} {p.shape} vs grad {np.shape(g)} / moment {m.shape}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i]
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)
    return state


# -- TrainLog ---------------------------------------------------------------------

LOG_FIELDS = ("epoch", "lr", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "wall_clock")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epochs must increase monotonically")
        self.records.append({k: record.get(k) for k in LOG_FIELDS})

    def __len__(self) -> int:
        return len(self.records)

    def comparable(self) -> list[dict]:
        """Records without wall-clock time, for run-to-run comparison."""
        return [{k: v for k, v in r.items() if k != "wall_clock"} for r in self.records]

    def column(self, name: str) -> list:
        return [r[name] for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())
        return path

    @classmethod
    def load(cls, path) -> "TrainLog":
        out = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out


# -- one epoch --------------------------------------------------------------------

def _global_clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if norm <= max_norm or norm == 0:
        return grads
    return [g * (max_norm / norm) for g in grads]


def _run_epoch(net: Network, adam: AdamState, ds: Dataset, cfg: TrainConfig, lr: float, epoch: int,
               shuffle: Rng, crop: Rng) -> tuple[float, float]:
    n = len(ds)
    order = shuffle.permutation(n)
    offsets = crop.integers(0, ds.length - cfg.crop_length + 1, size=n)
    params = net.parameters()
    net.train()
    total_loss = 0.0
    correct = 0
    for b, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        x = crop_at(ds.samples[idx], offsets[idx], cfg.crop_length).astype(net.dtype, copy=False)
        y = ds.labels[idx]
        net.zero_grad()
        try:
            loss, probs = softmax_cross_entropy(net.forward(Tensor(x)), y, cfg.label_smoothing)
            backward(loss)
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"non-finite value in epoch {epoch}, batch {b} (samples {idx[:8].tolist()}"
                f"{'...' if idx.size > 8 else ''}): {exc}"
            ) from exc
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        if cfg.weight_decay:
            grads = [g + cfg.weight_decay * p.data for g, p in zip(grads, params)]
        if cfg.grad_clip:
            grads = _global_clip(grads, cfg.grad_clip)
        adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.epsilon)
        total_loss += float(loss.data) * idx.size
        correct += int((np.argmax(probs, axis=1) == y).sum())
    net.zero_grad()
    return total_loss / n, correct / n


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    net: Network
    log: TrainLog
    best_state: dict
    best_epoch: int
    best_val_accuracy: float | None
    adam: AdamState
    epochs_done: int
    best_path: Path | None = None
    state_path: Path | None = None

    def best_network(self) -> Network:
        net = self.net.copy()
        net.load_state_dict(self.best_state)
        return net.eval()


@dataclass
class _Run:
    """Everything the epoch loop mutates; exactly what a state checkpoint stores."""

    net: Network
    adam: AdamState
    shuffle: Rng
    crop: Rng
    log: TrainLog
    epoch: int = 0
    best_state: dict | None = None
    best_epoch: int = -1
    best_val: float | None = None


def _validate_inputs(train_ds: Dataset, val_ds: Dataset | None, cfg: TrainConfig, net: Network):
    if len(train_ds) == 0:
        raise DataError("training set is empty")
    if val_ds is not None and len(val_ds) == 0:
        raise DataError("validation set is empty")
    for ds in (train_ds, val_ds):
        if ds is not None and ds.length < cfg.crop_length:
            raise DataError(f"segments of length {ds.length} are shorter than crop_length {cfg.crop_length}")
    if cfg.crop_length != net.spec.input_length:
        raise ConfigError(f"crop_length {cfg.crop_length} != network input length {net.spec.input_length}")
    if train_ds.labels.max() >= net.spec.num_classes:
        raise DataError("labels exceed the network's class count")


_RESUME_KEYS = ("batch_size", "seed", "crop_length", "n_crops", "val_every", "average", "beta1", "beta2",
                "epsilon", "weight_decay", "label_smoothing", "grad_clip")


def save_state(run: _Run, cfg: TrainConfig, path) -> Path:
    params = run.net.parameter_dict()
    arrays = {}
    for i, name in enumerate(params):
        arrays[f"adam.m.{name}"] = run.adam.m[i]
        arrays[f"adam.v.{name}"] = run.adam.v[i]
    if run.best_state is not None:
        arrays.update({f"best.{k}": v for k, v in run.best_state.items()})
    extra = {
        "kind": "train_state",
        "config": cfg.to_dict(),
        "epoch": run.epoch,
        "adam_t": run.adam.t,
        "rng": {"shuffle": run.shuffle.get_state(), "crop": run.crop.get_state()},
        "best_epoch": run.best_epoch,
        "best_val": run.best_val,
        "log": run.log.records,
    }
    return save_checkpoint(run.net, path, extra=extra, extra_arrays=arrays)


def _load_state(path, cfg: TrainConfig, net: Network | None) -> _Run:
    loaded, extra, arrays = load_checkpoint(path, into=net, return_extra=True)
    if extra.get("kind") != "train_state" or "adam_t" not in extra:
        raise ResumeError(f"{path}: no optimizer state (not a training state checkpoint)")
    saved = TrainConfig.from_dict(extra["config"])
    for key in _RESUME_KEYS:
        if getattr(saved, key) != getattr(cfg, key):
            raise ResumeError(f"config mismatch on {key}: checkpoint has {getattr(saved, key)!r}, "
                              f"requested {getattr(cfg, key)!r}")
    names = list(loaded.parameter_dict())
    try:
        m = [arrays[f"adam.m.{n}"] for n in names]
        v = [arrays[f"adam.v.{n}"] for n in names]
    except KeyError as exc:
        raise ResumeError(f"{path}: optimizer moments missing for {exc}") from exc
    best = {k[5:]: a for k, a in arrays.items() if k.startswith("best.")} or None
    root = Rng(cfg.seed)
    shuffle, crop = root.stream("shuffle"), root.stream("crop")
    shuffle.set_state(extra["rng"]["shuffle"])
    crop.set_state(extra["rng"]["crop"])
    log_ = TrainLog()
    for r in extra["log"]:
        log_.append(r)
    loaded.train()
    return _Run(loaded, AdamState(m, v, int(extra["adam_t"])), shuffle, crop, log_, int(extra["epoch"]),
                best, int(extra["best_epoch"]), extra["best_val"])


def _loop(run: _Run, train_ds: Dataset, val_ds: Dataset | None, cfg: TrainConfig,
          out_dir: Path | None, on_epoch: Callable[[dict], None] | None) -> TrainResult:
    best_path = state_path = None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        best_path, state_path, log_path = out_dir / "best.ckpt", out_dir / "state.ckpt", out_dir / "trainlog.jsonl"
        run.log.save(log_path)
    with threads(cfg.threads):
        while run.epoch < cfg.epochs:
            epoch = run.epoch
            t0 = time.perf_counter()
            lr = lr_schedule(epoch, cfg)
            loss, acc = _run_epoch(run.net, run.adam, train_ds, cfg, lr, epoch, run.shuffle, run.crop)
            val_loss = val_acc = None
            last = epoch + 1 == cfg.epochs
            if val_ds is not None and ((epoch + 1) % cfg.val_every == 0 or last):
                rep = evaluate(run.net, val_ds, Rng(cfg.seed).stream("eval"), cfg.n_crops, cfg.crop_length,
                               cfg.average)
                val_loss, val_acc = rep.loss, rep.top1_accuracy
                if run.best_val is None or val_acc > run.best_val:
                    run.best_val, run.best_epoch = val_acc, epoch
                    run.best_state = run.net.state_dict()
                    if best_path is not None:
                        save_checkpoint(run.net, best_path, extra={"kind": "best", "epoch": epoch,
                                                                   "val_accuracy": val_acc})
            run.net.train()
            record = {"epoch": epoch, "lr": lr, "train_loss": loss, "train_accuracy": acc,
                      "val_loss": val_loss, "val_accuracy": val_acc,
                      "wall_clock": time.perf_counter() - t0}
            run.log.append(record)
            run.epoch += 1
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(run.log.records[-1]) + "\n")
            if state_path is not None and cfg.checkpoint_every and run.epoch % cfg.checkpoint_every == 0:
                save_state(run, cfg, state_path)
            if on_epoch is not None:
                on_epoch(record)
    if state_path is not None:
        save_state(run, cfg, state_path)
    if run.best_state is None:
        # no validation set: the final weights are the selection
        run.best_state, run.best_epoch = run.net.state_dict(), run.epoch - 1
    return TrainResult(run.net, run.log, run.best_state, run.best_epoch, run.best_val, run.adam, run.epoch,
                       best_path, state_path)


def train(net: Network, train_ds: Dataset, val_ds: Dataset | None, config: TrainConfig,
          out_dir=None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train ``net`` in place on normalised data.

    With ``out_dir`` set, writes ``trainlog.jsonl`` (appended per epoch),
    ``best.ckpt`` (on strict validation improvement) and ``state.ckpt``
    (every ``checkpoint_every`` epochs and at the end) for :func:`resume`.
    """
    config.validate()
    _validate_inputs(train_ds, val_ds, config, net)
    root = Rng(config.seed)
    run = _Run(net, AdamState.zeros_like(net.parameters()), root.stream("shuffle"), root.stream("crop"),
               TrainLog())
    return _loop(run, train_ds, val_ds, config, Path(out_dir) if out_dir is not None else None, on_epoch)


def resume(state_path, train_ds: Dataset, val_ds: Dataset | None, config: TrainConfig, out_dir=None,
           net: Network | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Continue a run from ``state.ckpt``; ``config.epochs`` may exceed the original target."""
    config.validate()
    run = _load_state(state_path, config, net)
    _validate_inputs(train_ds, val_ds, config, run.net)
    if run.epoch >= config.epochs:
        msg = f"run already finished {run.epoch} epoch(s) (target {config.epochs}); nothing to do"
        warnings.warn(msg, stacklevel=2)
        log.info(msg)
        if run.best_state is None:
            run.best_state, run.best_epoch = run.net.state_dict(), run.epoch - 1
        return TrainResult(run.net, run.log, run.best_state, run.best_epoch, run.best_val, run.adam,
                           run.epoch, None, Path(state_path))
    return _loop(run, train_ds, val_ds, config, Path(out_dir) if out_dir is not None else None, on_epoch)


# -- learning-rate range test -----------------------------------------------------

@dataclass
class RangeTestResult:
    lrs: np.ndarray
    losses: np.ndarray
    smoothed: np.ndarray
    suggested_lr: float
    diverged: bool
    smooth_window: int

    @property
    def curve(self) -> list[tuple[float, float]]:
        return list(zip(self.lrs.tolist(), self.smoothed.tolist()))


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks symmetrically at the ends."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or values.size < 2:
        return values.copy()
    half = window // 2
    out = np.empty_like(values)
    for i in range(values.size):
        h = min(half, i, values.size - 1 - i)
        out[i] = values[i - h : i + h + 1].mean()
    return out


def range_test(step: Callable[[float], float], lr_min: float, lr_max: float, growth: float = 2.0,
               smooth_window: int = 3, divergence: float = 4.0) -> RangeTestResult:
    """Geometric learning-rate sweep.

    ``step(lr)`` trains for one sweep step at ``lr`` and returns its mean loss.
    The sweep stops once a loss exceeds ``divergence`` times the first loss
    (or is non-finite). The suggestion is the rate at which the smoothed loss
    falls fastest against log(lr).
    """
    if not lr_min > 0:
        raise ConfigError("lr_min must be positive")
    if not lr_min < lr_max:
        raise ConfigError(f"lr_min ({lr_min}) must be below lr_max ({lr_max})")
    if not growth > 1:
        raise ConfigError("growth must exceed 1")
    lrs, losses = [], []
    diverged = False
    lr = lr_min
    while lr <= lr_max * (1 + 1e-12):
        try:
            loss = float(step(lr))
        except NonFiniteError:
            loss = float("inf")
        if not np.isfinite(loss) or (losses and loss > divergence * losses[0]):
            diverged = True
            break
        lrs.append(lr)
        losses.append(loss)
        lr *= growth
    if len(losses) < 2:
        raise DivergenceError(f"sweep diverged after {len(losses)} step(s); no usable curve")
    lrs_a, losses_a = np.array(lrs), np.array(losses)
    smoothed = moving_average(losses_a, smooth_window)
    slope = np.gradient(smoothed, np.log(lrs_a))
    return RangeTestResult(lrs_a, losses_a, smoothed, float(lrs_a[int(np.argmin(slope))]), diverged,
                           smooth_window)


def lr_range_find(net: Network, train_ds: Dataset, lr_min: float = 1e-7, lr_max: float = 1e-1,
                  epochs_per_step: int = 1, growth: float = 2.0, smooth_window: int = 3,
                  config: TrainConfig | None = None) -> RangeTestResult:
    """Train a fresh copy of ``net`` while raising the rate geometrically each step."""
    cfg = config or TrainConfig(epochs=0, lr_schedule=())
    _validate_inputs(train_ds, None, cfg, net)
    if epochs_per_step < 1:
        raise ConfigError("epochs_per_step must be >= 1")
    work = net.copy()
    adam = AdamState.zeros_like(work.parameters())
    root = Rng(cfg.seed)
    shuffle, crop = root.stream("shuffle"), root.stream("crop")
    counter = [0]

    def step(lr: float) -> float:
        total = 0.0
        for _ in range(epochs_per_step):
            loss, _ = _run_epoch(work, adam, train_ds, cfg, lr, counter[0], shuffle, crop)
            counter[0] += 1
            total += loss
        return total / epochs_per_step

    with threads(cfg.threads):
        return range_test(step, lr_min, lr_max, growth, smooth_window)
