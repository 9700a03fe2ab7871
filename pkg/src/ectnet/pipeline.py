"""Full pipeline glue: decimate, split by volunteer, z-normalise, train, 10-crop test."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .architectures import build_network
from .data import Dataset, NormStats, SynthConfig, apply_znorm, compute_norm_stats, decimate, split_by_volunteer, synth_generate
from .evaluation import EvalReport, evaluate
from .numerics import Rng
from .training import TrainConfig, TrainResult, train

# 18 operators x 4 angles x 1 direction x 5 repeats = 360 scans per class,
# split 12 / 3 / 3 volunteers -> 240 train, 60 validation, 60 test per class.
BENCHMARK_SYNTH = SynthConfig(n_volunteers=18, n_angles=4, n_directions=1, n_repeats=5, length=1250)
BENCHMARK_TEST_IDS = (15, 16, 17)
BENCHMARK_VAL_IDS = (12, 13, 14)
BENCHMARK_ARCH = "ResNeXt1D-14"


def benchmark_train_config(seed: int = 7, epochs: int = 40) -> TrainConfig:
    lr = 3e-3
    return TrainConfig(batch_size=128, epochs=epochs, lr_initial=lr,
                       lr_schedule=((int(epochs * 0.6), lr / 10), (int(epochs * 0.85), lr / 100)),
                       seed=seed, val_every=5, checkpoint_every=0)


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    stats: NormStats

    @property
    def split_ids(self) -> dict:
        return {"val_ids": self.train.info.get("val_ids"), "test_ids": self.train.info.get("test_ids")}


def prepare(ds: Dataset, test_ids, val_ids=None, decimation: int = 5, rng: Rng | int | None = 0,
            n_val: int = 3) -> PreparedData:
    """Decimate, split by volunteer and normalise every split with training statistics."""
    if decimation > 1:
        ds = decimate(ds, decimation)
    tr, va, te = split_by_volunteer(ds, test_ids, val_ids, rng=rng, n_val=n_val)
    stats = compute_norm_stats(tr)
    return PreparedData(apply_znorm(tr, stats), apply_znorm(va, stats), apply_znorm(te, stats), stats)


def run_benchmark(seed: int = 7, epochs: int = 40, arch: str = BENCHMARK_ARCH, out_dir=None,
                  dtype=np.float32, on_epoch=None) -> tuple[TrainResult, EvalReport, PreparedData]:
    """Seeded 20-class synthetic run through the whole pipeline; returns the test report."""
    data = prepare(synth_generate(BENCHMARK_SYNTH, rng=seed), BENCHMARK_TEST_IDS, BENCHMARK_VAL_IDS)
    net = build_network(arch, rng=seed, dtype=dtype)
    result = train(net, data.train, data.val, benchmark_train_config(seed, epochs), out_dir=out_dir,
                   on_epoch=on_epoch)
    report = evaluate(result.best_network(), data.test, rng=Rng(seed).stream("test"))
    return result, report, data
