"""Desk-scale synthetic stand-in for the eddy-current scan dataset.

A differential two-coil probe passing over a slot produces a pulse pair in
the impedance plane: a Gaussian-windowed positive lobe followed by a negative
one. Here the lobe amplitude and the I/Q phase angle both grow with depth.
Lift-off taps are larger single-sign bumps at a distinct phase, and normal
scans carry only noise and a slow drift.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..numerics import Rng, as_rng
from .dataset import Dataset
from .labels import DEFECT_DEPTHS_MM, LIFTOFF, NORMAL, NUM_CLASSES


@dataclass(frozen=True)
class SynthConfig:
    n_volunteers: int = 3
    n_angles: int = 8
    n_directions: int = 2
    n_repeats: int = 5
    length: int = 250
    n_classes: int = NUM_CLASSES
    noise: float = 0.05
    # phase sweep (degrees) across the 0.3..2.0 mm depth range; larger = easier
    phase_span_deg: float = 90.0
    # relative amplitude growth across the depth range
    amplitude_span: float = 1.0
    liftoff_gain: float = 3.0
    liftoff_phase_deg: float = -75.0
    # jitter knobs: zero them all together with noise for noise-free classes
    time_jitter: float = 0.08
    width_jitter: float = 0.15
    amplitude_jitter: float = 0.1
    phase_jitter_deg: float = 0.75
    volunteer_variation: float = 0.1
    pulse_width: float = 0.035
    pulse_gap: float = 0.06

    def __post_init__(self):
        for name in ("n_volunteers", "n_angles", "n_directions", "n_repeats", "length", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 2 <= self.n_classes <= NUM_CLASSES:
            raise ConfigError(f"n_classes must lie in [2, {NUM_CLASSES}]")
        if self.n_angles > 8 or self.n_directions > 2 or self.n_repeats > 5 or self.n_volunteers > 30:
            raise ConfigError("metadata extents exceed the dataset layout (30, 8, 2, 5)")
        for name in ("noise", "time_jitter", "width_jitter", "amplitude_jitter", "phase_jitter_deg",
                     "volunteer_variation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.pulse_width <= 0:
            raise ConfigError("pulse_width must be positive")

    @property
    def samples_per_class(self) -> int:
        return self.n_volunteers * self.n_angles * self.n_directions * self.n_repeats

    def to_dict(self) -> dict:
        return asdict(self)


def class_indices(n_classes: int) -> np.ndarray:
    """Classes used for an n-way synthetic set: Normal, LiftOff, then evenly spread depths."""
    if n_classes >= NUM_CLASSES:
        return np.arange(NUM_CLASSES)
    if n_classes == 2:
        return np.array([NORMAL, LIFTOFF])
    defects = np.round(np.linspace(2, NUM_CLASSES - 1, n_classes - 2)).astype(int)
    return np.concatenate([[NORMAL, LIFTOFF], defects])


def _gauss(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _segment(cls: int, t: np.ndarray, cfg: SynthConfig, vol: dict, direction: int, angle: int,
             g: np.random.Generator) -> np.ndarray:
    jit = lambda s: g.normal(0.0, s) if s > 0 else 0.0  # noqa: E731
    center = 0.5 + vol["shift"] + jit(cfg.time_jitter / 2)
    width = cfg.pulse_width * vol["speed"] * (1.0 + jit(cfg.width_jitter))
    width = max(width, 1e-3)
    gap = cfg.pulse_gap * vol["speed"]
    if cls == NORMAL:
        z = np.zeros_like(t, dtype=complex)
        drift = 0.05 * (1 + jit(cfg.amplitude_jitter))
        z += drift * np.exp(1j * (0.3 * np.pi + jit(np.deg2rad(cfg.phase_jitter_deg) * 5))) * (t - 0.5)
    elif cls == LIFTOFF:
        amp = cfg.liftoff_gain * vol["gain"] * (1.0 + jit(cfg.amplitude_jitter))
        phase = np.deg2rad(cfg.liftoff_phase_deg + jit(cfg.phase_jitter_deg * 3))
        n_taps = 1 + (int(g.integers(0, 3)) if cfg.time_jitter > 0 else 1)
        bump = np.zeros_like(t)
        for k in range(n_taps):
            c = center + (k - (n_taps - 1) / 2) * 2.5 * gap + jit(cfg.time_jitter / 4)
            bump += _gauss(t, c, 1.5 * width)
        z = amp * np.exp(1j * phase) * bump
    else:
        depth = DEFECT_DEPTHS_MM[cls - 2]
        frac = (depth - DEFECT_DEPTHS_MM[0]) / (DEFECT_DEPTHS_MM[-1] - DEFECT_DEPTHS_MM[0])
        # probe orientation weakens the response a little, never flips it
        orient = 1.0 - 0.15 * abs(np.sin(np.pi * angle / 8))
        amp = (1.0 + cfg.amplitude_span * frac) * vol["gain"] * orient * (1.0 + jit(cfg.amplitude_jitter))
        phase = np.deg2rad(20.0 + cfg.phase_span_deg * frac + jit(cfg.phase_jitter_deg))
        sign = 1.0 if direction == 0 else -1.0
        lobe = _gauss(t, center - sign * gap / 2, width) - _gauss(t, center + sign * gap / 2, width)
        # a weak quadrature opening makes the trace a thin figure-eight rather than a line
        opening = 0.15 * (_gauss(t, center, 1.3 * width) - 0.5 * _gauss(t, center, 2.6 * width))
        z = amp * np.exp(1j * phase) * (lobe + 1j * opening)
    if cfg.noise > 0:
        z = z + cfg.noise * (g.standard_normal(t.size) + 1j * g.standard_normal(t.size))
    return np.stack([z.real, z.imag], axis=1)


def synth_generate(config: SynthConfig | None = None, rng: Rng | int | None = 0,
                   dtype=np.float32) -> Dataset:
    """Generate a complete (volunteer, angle, direction, repeat, class) grid of segments."""
    cfg = config or SynthConfig()
    rng = as_rng(rng)
    classes = class_indices(cfg.n_classes)
    vol_rng = rng.stream("volunteers").generator
    vv = cfg.volunteer_variation
    vols = [
        {
            "speed": float(np.exp(vol_rng.normal(0.0, vv))) if vv > 0 else 1.0,
            "gain": float(np.exp(vol_rng.normal(0.0, vv))) if vv > 0 else 1.0,
            "shift": float(vol_rng.normal(0.0, vv / 2)) * cfg.time_jitter if vv > 0 else 0.0,
        }
        for _ in range(cfg.n_volunteers)
    ]
    g = rng.stream("segments").generator
    t = np.arange(cfg.length) / cfg.length
    n = cfg.samples_per_class * classes.size
    samples = np.empty((n, cfg.length, 2), dtype=dtype)
    labels = np.empty(n, dtype=np.int64)
    meta = np.empty((n, 4), dtype=np.int64)
    i = 0
    for v in range(cfg.n_volunteers):
        for a in range(cfg.n_angles):
            for d in range(cfg.n_directions):
                for r in range(cfg.n_repeats):
                    for cls in classes:
                        samples[i] = _segment(int(cls), t, cfg, vols[v], d, a, g)
                        labels[i] = cls
                        meta[i] = (v, a, d, r)
                        i += 1
    return Dataset(samples, labels, meta, info={"source": "synthetic", "config": cfg.to_dict(),
                                                "seed": rng.seed})
