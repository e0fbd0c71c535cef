import numpy as np
import pytest
from oracles import depth_metrics

from metricdepth.errors import EmptyOverlap, SizeMismatch
from metricdepth.metrics import eval_depth, eval_sequence, format_table
from metricdepth.render import DepthFrame


def random_pair(rng, shape=(32, 32)):
    gt = DepthFrame(rng.uniform(0.05, 120.0, shape), rng.random(shape) < 0.7)
    noise = rng.lognormal(0.0, rng.uniform(0.05, 0.6), shape)
    pred = DepthFrame(gt.depth * noise + (gt.depth == 0) * rng.uniform(1, 50, shape), rng.random(shape) < 0.8)
    return pred, gt


def _close(report, ref, tol=1e-12):
    abs_rel, rmse, d1, d2, n = ref
    assert report.n_pixels == n
    for got, want in ((report.abs_rel, abs_rel), (report.rmse, rmse), (report.delta1, d1), (report.delta2, d2)):
        assert abs(got - want) <= tol * max(1.0, abs(want))


def test_identity():
    gt = DepthFrame(np.linspace(1, 90, 64).reshape(8, 8))
    for scaling in ("none", "median"):
        r = eval_depth(gt, gt, scaling=scaling)
        assert (r.abs_rel, r.rmse, r.delta1, r.delta2, r.scale_factor) == (0.0, 0.0, 1.0, 1.0, 1.0)


def test_twice_gt():
    gt = DepthFrame(np.linspace(1, 40, 64).reshape(8, 8))
    pred = DepthFrame(2.0 * gt.depth)
    r = eval_depth(pred, gt)
    assert r.abs_rel == 1.0 and r.delta1 == 0.0 and r.delta2 == 0.0
    r = eval_depth(pred, gt, scaling="median")
    assert r.scale_factor == 0.5
    assert (r.abs_rel, r.rmse, r.delta1, r.delta2) == (0.0, 0.0, 1.0, 1.0)


def test_matches_bruteforce(rng):
    for _ in range(100):
        pred, gt = random_pair(rng)
        for scaling in ("none", "median"):
            r = eval_depth(pred, gt, scaling=scaling)
            _close(r, depth_metrics(pred.depth, gt.depth, median=scaling == "median"))


@pytest.mark.parametrize("c", [0.1, 3.0, 17.0])
def test_median_scaling_invariance(rng, c):
    for _ in range(20):
        pred, gt = random_pair(rng)
        # bare rasters so the scaled prediction is not clipped by a depth range
        p = np.where(pred.valid, pred.depth.astype(np.float64), 0.0)
        a = eval_depth(p, gt, scaling="median")
        b = eval_depth(c * p, gt, scaling="median")
        for attr in ("abs_rel", "rmse", "delta1", "delta2"):
            assert abs(getattr(a, attr) - getattr(b, attr)) <= 1e-12 * max(1.0, getattr(a, attr))


def test_range_is_open_below_closed_above():
    gt = np.array([[0.1, 0.2, 100.0, 100.5]])
    pred = np.array([[1.0, 1.0, 1.0, 1.0]])
    assert eval_depth(pred, gt).n_pixels == 2


def test_errors():
    with pytest.raises(EmptyOverlap):
        eval_depth(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(SizeMismatch):
        eval_depth(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        eval_depth(np.ones((2, 2)), np.ones((2, 2)), scaling="mean")


def test_sequence_pooling(rng):
    pred, gt = random_pair(rng)
    single = eval_depth(pred, gt)
    agg, per = eval_sequence([pred], [gt])
    assert agg == single and per == [single]
    agg2, _ = eval_sequence([pred, pred], [gt, gt])
    for attr in ("abs_rel", "rmse", "delta1", "delta2"):
        assert abs(getattr(agg2, attr) - getattr(single, attr)) <= 1e-12


def test_sequence_pooled_is_pixel_weighted(rng):
    p1, g1 = random_pair(rng, (16, 16))
    p2, g2 = random_pair(rng, (24, 20))
    agg, (r1, r2) = eval_sequence([p1, p2], [g1, g2])
    w = (r1.abs_rel * r1.n_pixels + r2.abs_rel * r2.n_pixels) / (r1.n_pixels + r2.n_pixels)
    assert abs(agg.abs_rel - w) <= 1e-12
    # brute force over the concatenated pixel lists
    pp = np.concatenate([p1.depth.ravel(), p2.depth.ravel()])
    gg = np.concatenate([g1.depth.ravel(), g2.depth.ravel()])
    _close(agg, depth_metrics(pp, gg))
    mean_agg, _ = eval_sequence([p1, p2], [g1, g2], average="frame")
    assert abs(mean_agg.abs_rel - 0.5 * (r1.abs_rel + r2.abs_rel)) <= 1e-15


def test_format_table():
    gt = DepthFrame(np.full((2, 2), 5.0))
    r = eval_depth(gt, gt)
    text = format_table({"oracle": (r, r), "none": (None, r)})
    assert "Abs.Rel" in text and "0.000 / 0.000" in text and "- / 0.000" in text
