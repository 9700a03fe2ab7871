import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ectnet.architectures import build_network
from ectnet.data import Dataset, ScanSegment, SynthConfig, synth_generate
from ectnet.errors import DataError, ShapeError
from ectnet.evaluation import (
    CENTER_OFFSET,
    argmax_lowest,
    cam_from_features,
    compute_cam,
    confusion_matrix,
    evaluate,
    export_cam,
    export_misclassified,
    first_peak,
    predict_10crop,
    predict_crops,
    report_from_probs,
    tolerance_accuracy,
    top1_accuracy,
    upsample_linear,
)
from ectnet.numerics import Rng, softmax


@pytest.fixture(scope="module")
def net():
    return build_network("ResNet1Dv1-14", rng=4, dtype=np.float64)


@pytest.fixture(scope="module")
def ds():
    cfg = SynthConfig(n_volunteers=1, n_angles=1, n_directions=1, n_repeats=1, length=250)
    return synth_generate(cfg, rng=2)


# -- multi-crop inference -------------------------------------------------------------

def test_crop_probabilities_are_distributions(net, ds):
    probs = predict_crops(net, ds.samples[:4], n_crops=10, rng=Rng(0))
    assert probs.shape == (4, 20)
    assert (probs >= 0).all()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_single_crop_at_zero_is_one_forward_pass(net, ds):
    seg = ScanSegment(ds.samples[3], 3, 0, 0, 0, 0)
    got = predict_10crop(net, seg, offsets=[0])
    net.eval()
    ref = softmax(net.forward(ds.samples[3][None, :224]).data)[0]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-14)


def test_zero_head_gives_uniform_probabilities(ds):
    zero = build_network("ResNet1Dv2-14", rng=1, dtype=np.float64)
    zero.fc.weight.data[:] = 0
    zero.fc.bias.data[:] = 0
    probs = predict_10crop(zero, ds.samples[0], rng=Rng(3))
    np.testing.assert_allclose(probs, 0.05, rtol=0, atol=1e-15)


def test_forced_offsets_are_reproducible(net, ds):
    offsets = np.array([0, 5, 26, 13, 13, 2, 7, 9, 1, 20])
    a = predict_10crop(net, ds.samples[5], offsets=offsets)
    b = predict_10crop(net, ds.samples[5], offsets=offsets)
    np.testing.assert_array_equal(a, b)
    same = predict_10crop(net, ds.samples[5], offsets=[CENTER_OFFSET] * 10)
    np.testing.assert_allclose(same, predict_10crop(net, ds.samples[5], offsets=[CENTER_OFFSET]), atol=1e-15)


def test_seeded_crops_are_reproducible_and_logit_mode(net, ds):
    a = predict_crops(net, ds.samples[:3], rng=Rng(8))
    np.testing.assert_array_equal(a, predict_crops(net, ds.samples[:3], rng=Rng(8)))
    lg = predict_crops(net, ds.samples[:3], rng=Rng(8), average="logit")
    np.testing.assert_allclose(lg.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        predict_crops(net, ds.samples[:3], rng=Rng(8), average="median")
    with pytest.raises(DataError):
        predict_crops(net, ds.samples[:3, :200], rng=Rng(8))


# -- metrics -------------------------------------------------------------------------

def test_tolerance_examples():
    assert tolerance_accuracy(["1.5mm"], ["1.4mm"]) == 1.0
    assert tolerance_accuracy(["0.3mm"], ["LiftOff"]) == 0.0
    assert tolerance_accuracy(["1.5mm"], ["1.3mm"]) == 0.0
    assert tolerance_accuracy(["Normal", "LiftOff"], ["Normal", "LiftOff"]) == 1.0


def test_metric_errors():
    with pytest.raises(ShapeError):
        top1_accuracy([0, 1], [0])
    with pytest.raises(ShapeError):
        tolerance_accuracy([0, 1], [0])
    with pytest.raises(DataError):
        top1_accuracy([], [])


def test_perfect_predictor_confusion():
    truths = np.repeat(np.arange(20), 240)
    cm = confusion_matrix(truths, truths)
    np.testing.assert_array_equal(cm, 240 * np.eye(20, dtype=np.int64))
    assert top1_accuracy(truths, truths) == tolerance_accuracy(truths, truths) == 1.0


def test_chance_level_predictor():
    rng = np.random.default_rng(0)
    truths = np.repeat(np.arange(20), 1000)
    preds = rng.integers(0, 20, truths.size)
    assert abs(top1_accuracy(truths, preds) - 0.05) < 0.01
    assert confusion_matrix(truths, preds).sum() == truths.size


@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=1, max_size=60))
def test_tolerance_dominates_top1(pairs):
    t, p = zip(*pairs)
    assert tolerance_accuracy(t, p) >= top1_accuracy(t, p)


@given(arrays(np.int64, (5, 20), elements=st.integers(1, 10**6)))
def test_argmax_invariant_under_monotone_maps(grid):
    # values on a 1e-6 grid so both maps stay strictly monotone in float64;
    # arbitrary floats can collapse under 3p + 1 and turn into ties
    probs = grid / 1e6
    ref = argmax_lowest(probs)
    np.testing.assert_array_equal(argmax_lowest(np.log(probs)), ref)
    np.testing.assert_array_equal(argmax_lowest(3.0 * probs + 1.0), ref)


def test_argmax_ties_go_to_lowest_index():
    p = np.full((2, 20), 0.05)
    p[1, [4, 9]] = 0.3
    np.testing.assert_array_equal(argmax_lowest(p), [0, 4])


def test_report_serialisation(tmp_path):
    probs = np.eye(20)[[0, 1, 5, 5]] * 0.9 + 0.005
    rep = report_from_probs([0, 1, 5, 6], probs)
    assert rep.top1_accuracy == 0.75 and rep.tolerance_accuracy == 1.0
    d = json.loads(rep.save(tmp_path / "r.json").read_text())
    assert d["confusion"][6][5] == 1 and len(d["per_sample"]) == 4
    rows = list(csv.reader(open(rep.save_confusion(tmp_path / "c.csv"))))
    assert rows[0][1:3] == ["Normal", "LiftOff"] and len(rows) == 21
    assert rep.loss == pytest.approx(-np.log([0.905, 0.905, 0.905, 0.005]).mean())


def test_evaluate_end_to_end(net, ds):
    rep = evaluate(net, ds, rng=0, n_crops=3)
    assert rep.confusion.sum() == len(ds)
    np.testing.assert_array_equal(rep.probs, evaluate(net, ds, rng=0, n_crops=3).probs)
    with pytest.raises(DataError):
        evaluate(net, ds.subset([]))


# -- CAM -----------------------------------------------------------------------------

def test_cam_hand_example():
    features = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]])  # two maps of length 3
    w = np.array([[0.5, -1.0], [2.0, 1.0]])
    np.testing.assert_allclose(cam_from_features(features, w, 0), [0.5, 3.0, 6.0])
    np.testing.assert_allclose(cam_from_features(features, w, 1), [-1.0, -1.0, 3.0])


def test_cam_of_constant_features_is_constant():
    cam = cam_from_features(np.ones((14, 4)) * 2.0, np.arange(8.0).reshape(4, 2), 1)
    np.testing.assert_allclose(cam, 2.0 * (1 + 3 + 5 + 7))
    np.testing.assert_allclose(upsample_linear(cam, 224), cam[0])


def test_cam_mean_identity(net, ds):
    for c in (0, 7, 19):
        cam = compute_cam(net, ds.samples[c], c)
        assert cam.activation.shape == (14,) and cam.upsampled.shape == (224,)
        assert cam.mean_identity_error < 1e-10
        assert cam.offset == CENTER_OFFSET
    with pytest.raises(ShapeError):
        compute_cam(net, ds.samples[0], 20)


def test_first_peak():
    trace = np.zeros((10, 2))
    trace[6] = [3.0, 4.0]
    trace[3] = [2.0, 1.5]
    assert first_peak(trace) == 3
    assert first_peak(np.zeros(5)) == 0


def test_export_cam(net, ds, tmp_path):
    cams = [compute_cam(net, ds.samples[i], 19) for i in range(2)]
    rows = list(csv.DictReader(open(export_cam(cams, tmp_path / "cam.csv", align_peaks=True))))
    assert len(rows) == 2 * 224
    shift = first_peak(cams[0].crop)
    assert int(rows[shift]["aligned_time"]) == 0
    assert float(rows[10]["activation"]) == cams[0].upsampled[10]


# -- misclassification export --------------------------------------------------------

def _ds(n, length=6):
    x = np.arange(n * length * 2, dtype=np.float64).reshape(n, length, 2)
    return Dataset(x, np.arange(n) % 20, np.zeros((n, 4), dtype=np.int64))


def test_misclassified_export_empty(tmp_path):
    rep = report_from_probs([0, 1], np.eye(20)[[0, 1]])
    rows = list(csv.reader(open(export_misclassified(rep, _ds(2), "2.0mm", tmp_path / "m.csv"))))
    assert len(rows) == 1 and rows[0][-1] == "status"


def test_misclassified_export_all_class_zero(tmp_path):
    ds = _ds(4)
    rep = report_from_probs(ds.labels, np.tile(np.eye(20)[0], (4, 1)))
    rows = list(csv.DictReader(open(export_misclassified(rep, ds, "Normal", tmp_path / "m.csv"))))
    assert len(rows) == 4 * 6
    assert {r["status"] for r in rows if r["sample_id"] == "0"} == {"true"}
    assert {r["status"] for r in rows if r["sample_id"] != "0"} == {"misclassified"}


def test_misclassified_export_enumerates_hits(tmp_path):
    ds = _ds(5)
    preds = [7, 3, 7, 7, 1]
    rep = report_from_probs(ds.labels, np.eye(20)[preds])
    rows = list(csv.DictReader(open(export_misclassified(rep, ds, 7, tmp_path / "m.csv"))))
    assert sorted({int(r["sample_id"]) for r in rows}) == [0, 2, 3]
    assert all(r["predicted"] == "0.8mm" for r in rows)
    first = [r for r in rows if r["sample_id"] == "2"][0]
    assert float(first["in_phase"]) == ds.samples[2, 0, 0]
