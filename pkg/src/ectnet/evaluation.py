"""Multi-crop inference, accuracy metrics, confusion matrices and CAM."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .architectures import Network
from .data import CLASS_NAMES, NUM_CLASSES, Dataset, ScanSegment, crop_at, crop_offsets, export_complex_plane
from .data.labels import label_index, within_tolerance
from .errors import DataError, ShapeError
from .numerics import Rng, Tensor, as_rng, no_grad, softmax

CENTER_OFFSET = 13


def _inference_logits(net: Network, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    was = net.training
    net.eval()
    try:
        with no_grad():
            out = [net.forward(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
    finally:
        net.train(was)
    return np.concatenate(out, axis=0)


def predict_crops(net: Network, x: np.ndarray, n_crops: int = 10, rng: Rng | int | None = None,
                  crop_length: int | None = None, offsets: np.ndarray | None = None,
                  average: str = "prob", batch_size: int = 1024) -> np.ndarray:
    """Average class probabilities over ``n_crops`` random windows per sample.

    ``x`` is (n, T, 2); ``offsets`` (n, n_crops) overrides the random draw.
    ``average="logit"`` averages logits before the softmax instead.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    n, length, _ = x.shape
    crop_length = net.spec.input_length if crop_length is None else crop_length
    if crop_length > length:
        raise DataError(f"segment length {length} shorter than crop length {crop_length}")
    if offsets is None:
        offsets = crop_offsets(n * n_crops, length, crop_length, rng).reshape(n, n_crops)
    offsets = np.asarray(offsets).reshape(n, -1)
    n_crops = offsets.shape[1]
    probs = np.empty((n, net.spec.num_classes), dtype=np.float64)
    chunk = max(1, batch_size // n_crops)
    for i in range(0, n, chunk):
        xs = x[i : i + chunk]
        rep = np.repeat(xs, n_crops, axis=0)
        crops = crop_at(rep, offsets[i : i + chunk].reshape(-1), crop_length).astype(net.dtype, copy=False)
        logits = _inference_logits(net, crops, batch_size).reshape(len(xs), n_crops, -1).astype(np.float64)
        if average == "logit":
            probs[i : i + chunk] = softmax(logits.mean(axis=1))
        elif average == "prob":
            probs[i : i + chunk] = softmax(logits).mean(axis=1)
        else:
            raise ValueError(f"average must be 'prob' or 'logit', got {average!r}")
    return probs


def predict_10crop(net: Network, seg: ScanSegment | np.ndarray, n_crops: int = 10,
                   rng: Rng | int | None = None, offsets=None, average: str = "prob") -> np.ndarray:
    samples = seg.samples if isinstance(seg, ScanSegment) else np.asarray(seg)
    if offsets is not None:
        offsets = np.asarray(offsets).reshape(1, -1)
    return predict_crops(net, samples[None], n_crops, rng, offsets=offsets, average=average)[0]


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; numpy already resolves ties to the lowest index."""
    return np.argmax(probs, axis=-1)


def _as_indices(labels) -> np.ndarray:
    return np.array([label_index(v) for v in labels], dtype=np.int64)


def tolerance_accuracy(truths, preds) -> float:
    """Share of predictions that are exact or one 0.1 mm depth step off (defects only)."""
    t, p = _as_indices(truths), _as_indices(preds)
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} truths vs {p.size} predictions")
    if t.size == 0:
        raise DataError("no predictions to score")
    return float(np.mean([within_tolerance(a, b) for a, b in zip(t, p)]))


def top1_accuracy(truths, preds) -> float:
    t, p = _as_indices(truths), _as_indices(preds)
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} truths vs {p.size} predictions")
    if t.size == 0:
        raise DataError("no predictions to score")
    return float(np.mean(t == p))


def confusion_matrix(truths, preds, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions, ordered Normal, LiftOff, 0.3 ... 2.0 mm."""
    t, p = _as_indices(truths), _as_indices(preds)
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} truths vs {p.size} predictions")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class EvalReport:
    truths: np.ndarray
    preds: np.ndarray
    probs: np.ndarray
    top1_accuracy: float
    tolerance_accuracy: float
    confusion: np.ndarray

    @property
    def per_sample(self) -> list[tuple[int, int, np.ndarray]]:
        return list(zip(self.truths.tolist(), self.preds.tolist(), self.probs))

    @property
    def loss(self) -> float:
        """Cross-entropy of the averaged probabilities."""
        p = self.probs[np.arange(len(self.truths)), self.truths]
        return float(-np.log(np.maximum(p, 1e-300)).mean())

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "top1_accuracy": self.top1_accuracy,
            "tolerance_accuracy": self.tolerance_accuracy,
            "n_samples": int(self.truths.size),
            "class_names": list(CLASS_NAMES),
            "confusion": self.confusion.tolist(),
        }
        if include_samples:
            d["per_sample"] = [
                {"true": int(t), "pred": int(p), "probs": [float(v) for v in pr]}
                for t, p, pr in self.per_sample
            ]
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    def save_confusion(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *CLASS_NAMES])
            for name, row in zip(CLASS_NAMES, self.confusion):
                w.writerow([name, *row.tolist()])
        return path


def report_from_probs(truths, probs: np.ndarray) -> EvalReport:
    truths = _as_indices(truths)
    preds = argmax_lowest(probs)
    return EvalReport(
        truths=truths,
        preds=preds,
        probs=probs,
        top1_accuracy=top1_accuracy(truths, preds),
        tolerance_accuracy=tolerance_accuracy(truths, preds),
        confusion=confusion_matrix(truths, preds, probs.shape[1]),
    )


def evaluate(net: Network, ds: Dataset, rng: Rng | int | None = 0, n_crops: int = 10,
             crop_length: int | None = None, average: str = "prob") -> EvalReport:
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    probs = predict_crops(net, ds.samples, n_crops, as_rng(rng), crop_length, average=average)
    return report_from_probs(ds.labels, probs)


# -- class activation mapping ------------------------------------------------------

@dataclass
class CamResult:
    activation: np.ndarray  # raw map over the final feature length
    upsampled: np.ndarray  # linear interpolation to the input length
    class_index: int
    logit: float
    bias: float
    offset: int
    crop: np.ndarray

    @property
    def mean_identity_error(self) -> float:
        return abs(float(self.activation.mean()) - (self.logit - self.bias))


def cam_from_features(features: np.ndarray, fc_weight: np.ndarray, class_index: int) -> np.ndarray:
    """CAM_c(t) = sum_k w[k, c] * f_k(t) for features (L, K) and fc weight (K, classes)."""
    return features @ fc_weight[:, class_index]


def upsample_linear(values: np.ndarray, length: int) -> np.ndarray:
    src = (np.arange(values.size) + 0.5) * length / values.size
    return np.interp(np.arange(length) + 0.5, src, values)


def compute_cam(net: Network, seg: ScanSegment | np.ndarray, class_index: int,
                offset: int = CENTER_OFFSET) -> CamResult:
    k = net.spec.num_classes
    if not 0 <= class_index < k:
        raise ShapeError(f"class_index {class_index} outside [0, {k})")
    samples = seg.samples if isinstance(seg, ScanSegment) else np.asarray(seg)
    L = net.spec.input_length
    if offset + L > samples.shape[0]:
        offset = max(0, (samples.shape[0] - L) // 2)
    crop = samples[offset : offset + L].astype(net.dtype)
    was = net.training
    net.eval()
    try:
        with no_grad():
            logits, feats = net.forward(Tensor(crop[None]), return_features=True)
    finally:
        net.train(was)
    w = net.fc.weight.data
    b = net.fc.bias.data
    act = cam_from_features(feats.data[0].astype(np.float64), w.astype(np.float64), class_index)
    return CamResult(
        activation=act,
        upsampled=upsample_linear(act, L),
        class_index=class_index,
        logit=float(logits.data[0, class_index]),
        bias=float(b[class_index]),
        offset=int(offset),
        crop=crop,
    )


def first_peak(trace: np.ndarray, threshold: float = 0.5) -> int:
    """Index of the first sample whose magnitude reaches ``threshold`` x the maximum."""
    mag = np.abs(trace) if trace.ndim == 1 else np.linalg.norm(trace, axis=-1)
    if mag.max() == 0:
        return 0
    return int(np.argmax(mag >= threshold * mag.max()))


def export_cam(cams: list[CamResult], path, align_peaks: bool = False) -> Path:
    """Rows of (sample, time index, aligned time, in-phase, quadrature, activation)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "time_index", "aligned_time", "in_phase", "quadrature", "activation"])
        for i, cam in enumerate(cams):
            shift = first_peak(cam.crop) if align_peaks else 0
            for t in range(cam.crop.shape[0]):
                w.writerow([i, t, t - shift, repr(float(cam.crop[t, 0])), repr(float(cam.crop[t, 1])),
                            repr(float(cam.upsampled[t]))])
    return path


def export_misclassified(report: EvalReport, ds: Dataset, predicted_class, path) -> Path:
    """Complex-plane export of every sample predicted as ``predicted_class``."""
    cls = label_index(predicted_class)
    idx = np.flatnonzero(report.preds == cls)
    flags = ["true" if report.truths[i] == cls else "misclassified" for i in idx]
    return export_complex_plane(ds.subset(idx), path, predicted=report.preds[idx], flags=flags,
                                sample_ids=idx)
