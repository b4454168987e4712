import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaint_nerf.evaluation import (
    EmptyMaskError,
    EvalReport,
    FrameMetrics,
    ablation_subsets,
    evaluate,
    masked_depth_error,
    masked_psnr,
    masked_ssim,
    scene_average,
)
from inpaint_nerf.scene import Frame, SceneDataset

from oracles import masked_ssim_loop


def _box_mask(h=16, w=20):
    m = np.zeros((h, w), bool)
    m[4:12, 5:15] = True
    return m


def test_psnr_examples():
    gt = np.full((4, 4, 3), 0.5)
    m = np.ones((4, 4), bool)
    assert masked_psnr(gt, gt, m) == 99.0
    assert masked_psnr(gt + 0.1, gt, m) == pytest.approx(20.0, abs=1e-9)
    assert masked_psnr(np.ones((4, 4, 3)), np.zeros((4, 4, 3)), m) == pytest.approx(0.0, abs=1e-12)


def test_psnr_reads_only_masked_pixels():
    gt = np.zeros((4, 4, 3))
    pred = gt.copy()
    pred[0, 0] = 1.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert masked_psnr(pred, gt, m) == 99.0


def test_ssim_identical_is_one(rng):
    x = rng.uniform(size=(16, 20, 3))
    assert masked_ssim(x, x, _box_mask()) == 1.0


def test_ssim_inverted_checkerboard_negative():
    r, c = np.indices((16, 20))
    x = ((r + c) % 2).astype(float)
    assert masked_ssim(x, 1.0 - x, _box_mask()) < 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ssim_bounded(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(size=(2, 12, 14))
    m = rng.uniform(size=(12, 14)) < 0.5
    m[3, 3] = True
    assert -1.0 <= masked_ssim(x, y, m) <= 1.0


def test_ssim_matches_window_loop(rng):
    x, y = rng.uniform(size=(2, 13, 17))
    m = rng.uniform(size=(13, 17)) < 0.6
    assert masked_ssim(x, y, m) == pytest.approx(masked_ssim_loop(x, y, m), abs=1e-10)


def test_depth_error_examples():
    gt = np.full((4, 4), 2.0)
    m = np.ones((4, 4), bool)
    assert masked_depth_error(gt, gt, m) == (0.0, 0.0)
    l1, l2 = masked_depth_error(gt + 0.1, gt, m)
    assert l1 == pytest.approx(0.1) and l2 == pytest.approx(0.01)
    pred = gt.copy()
    pred[:2] += 0.2
    l1, l2 = masked_depth_error(pred, gt, m)
    assert l1 == pytest.approx(0.1) and l2 == pytest.approx(0.02)


def test_depth_error_skips_invalid_ground_truth():
    gt = np.array([[2.0, 0.0]])
    pred = np.array([[2.0, 5.0]])
    assert masked_depth_error(pred, gt, np.ones((1, 2), bool)) == (0.0, 0.0)
    with pytest.raises(EmptyMaskError):
        masked_depth_error(pred, np.zeros((1, 2)), np.ones((1, 2), bool))


def test_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        masked_psnr(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2), bool))


def test_scene_mean():
    rep = EvalReport([FrameMetrics(0, 20.0, 0.5, 0.1, 0.01), FrameMetrics(1, 30.0, 0.7, 0.3, 0.09)])
    assert rep.scene["psnr"] == 25.0
    assert rep.scene["ssim"] == pytest.approx(0.6)
    other = EvalReport([FrameMetrics(0, 35.0, 1.0, 0.0, 0.0)])
    assert scene_average([rep, other])["psnr"] == 30.0


def test_report_serialization(tmp_path):
    rep = EvalReport([FrameMetrics(3, 20.0, 0.5, 0.1, 0.01)], skipped=[4])
    rep.write(tmp_path)
    assert (tmp_path / "eval.json").read_text() == rep.to_json()
    lines = (tmp_path / "eval.csv").read_text().splitlines()
    assert lines[0] == "frame,psnr,ssim,depth_l1,depth_l2" and lines[1].startswith("3,") and lines[-1].startswith("scene,")


def _toy_dataset(rng, n=3, h=16, w=20):
    frames = []
    for i in range(n):
        m = _box_mask(h, w) if i != 1 else np.zeros((h, w), bool)
        frames.append(Frame(i, rng.uniform(size=(h, w, 3)), rng.uniform(1, 3, (h, w)), np.eye(4), m,
                            gt_rgb=rng.uniform(size=(h, w, 3)), gt_depth=rng.uniform(1, 3, (h, w))))
    K = np.array([[20.0, 0, w / 2], [0, 20.0, h / 2], [0, 0, 1]])
    return SceneDataset(frames, K, split={"train": [], "test": list(range(n))})


def test_evaluate_skips_empty_masks_and_uses_ground_truth(rng):
    ds = _toy_dataset(rng)
    rep = evaluate(None, ds, renderer=lambda f: (f.gt_rgb, f.gt_depth))
    assert rep.skipped == [1]
    assert [f.frame for f in rep.frames] == [0, 2]
    assert rep.scene["psnr"] == 99.0 and rep.scene["depth_l1"] == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_fuzz_outside_mask_is_exactly_invariant(seed):
    rng = np.random.default_rng(seed)
    h, w = 16, 20
    m = rng.uniform(size=(h, w)) < 0.4
    m[8, 8] = True
    pred, gt = rng.uniform(size=(2, h, w, 3))
    dp, dg = rng.uniform(0.5, 4, (2, h, w))
    base = (masked_psnr(pred, gt, m), masked_ssim(pred, gt, m), masked_depth_error(dp, dg, m))
    out = ~m
    pred2, gt2, dp2, dg2 = pred.copy(), gt.copy(), dp.copy(), dg.copy()
    pred2[out] = rng.uniform(size=(out.sum(), 3))
    gt2[out] = rng.uniform(size=(out.sum(), 3))
    dp2[out] = rng.uniform(0, 10, out.sum())
    dg2[out] = rng.uniform(0, 10, out.sum())
    after = (masked_psnr(pred2, gt2, m), masked_ssim(pred2, gt2, m), masked_depth_error(dp2, dg2, m))
    assert after == base


def test_ablation_subsets_on_100_frames():
    class DS:
        def __len__(self):
            return 100

    assert ablation_subsets(DS(), "tenth").sorted() == list(range(0, 100, 10))
    assert ablation_subsets(DS(), "fiftieth").sorted() == [0, 50]
    assert ablation_subsets(DS(), "single").sorted() == [50]
    assert len(ablation_subsets(DS(), "all")) == 100
