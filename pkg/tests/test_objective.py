import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaint_nerf import autodiff as ad
from inpaint_nerf.autodiff import Tensor, backward, grad_check
from inpaint_nerf.objective import (
    ActiveSet,
    ContractError,
    LossWeights,
    PixelBatch,
    depth_loss,
    dist_loss,
    objective,
    reg_loss,
    rgb_loss,
    total_loss,
)


def batch(frame, masked, rgb, depth, weight=None):
    frame = np.asarray(frame)
    return PixelBatch(frame=frame, masked=np.asarray(masked, dtype=bool), target_rgb=np.asarray(rgb, dtype=float),
                      target_depth=np.asarray(depth, dtype=float), depth_valid=np.asarray(depth) > 0,
                      weight=np.ones(len(frame)) if weight is None else np.asarray(weight, dtype=float))


def conf_of(u):
    return np.exp(-np.asarray(u, dtype=float))


def test_rgb_examples():
    b = batch([0], [True], [[0.2, 0.0, 0.0]], [1.0])
    pred = np.zeros((1, 3))
    active = ActiveSet({0})
    assert rgb_loss(b, pred, conf_of([0.0]), active).item() == pytest.approx(0.04)
    assert rgb_loss(b, pred, conf_of([math.log(4.0)]), active).item() == pytest.approx(0.01)
    assert rgb_loss(b, b.target_rgb, conf_of([0.0]), active).item() == 0.0


def test_depth_examples():
    b = batch([0], [True], [[0, 0, 0]], [1.2])
    active = ActiveSet({0})
    assert depth_loss(b, np.array([1.0]), conf_of([0.0]), active).item() == pytest.approx(0.2)
    assert depth_loss(b, np.array([1.0]), conf_of([math.log(2.0)]), active).item() == pytest.approx(0.1)
    assert depth_loss(b, np.array([1.2]), conf_of([0.0]), active).item() == 0.0


def test_invalid_depth_skipped():
    b = batch([0, 0], [False, False], np.zeros((2, 3)), [0.0, 2.0])
    assert depth_loss(b, np.array([5.0, 2.5]), conf_of([0.0]), ActiveSet({0})).item() == pytest.approx(0.5)


def test_unmasked_pixels_ignore_confidence():
    b = batch([0], [False], [[0.2, 0.0, 0.0]], [1.0])
    assert rgb_loss(b, np.zeros((1, 3)), conf_of([5.0]), ActiveSet()).item() == pytest.approx(0.04)


def test_masked_pixel_of_inactive_frame_is_contract_violation():
    b = batch([1], [True], [[0, 0, 0]], [1.0])
    with pytest.raises(ContractError):
        rgb_loss(b, np.zeros((1, 3)), conf_of([0, 0]), ActiveSet({0}))
    with pytest.raises(ContractError):
        depth_loss(b, np.zeros(1), conf_of([0, 0]), ActiveSet({0}))


def test_reg_examples():
    assert reg_loss(np.zeros(3), ActiveSet({0, 1, 2})).item() == 0.0
    assert reg_loss(np.array([0.5, 1.5]), ActiveSet({0, 1})).item() == 2.0
    assert reg_loss(np.array([0.5, 1.5, 9.0]), ActiveSet({0, 1})).item() == 2.0


def test_dist_examples():
    b = batch([0, 0], [False, False], np.zeros((2, 3)), [1, 1])
    assert dist_loss(b, np.zeros(2)).item() == 0.0
    assert dist_loss(b, np.array([0.1, 0.2])).item() == pytest.approx(0.3)


def test_total_examples():
    parts = {"rgb": 1.0, "rgb_mv": 1.0, "depth": 2.0, "reg": 10.0, "dist": 0.5}
    assert total_loss(parts).item() == pytest.approx(4.55)
    assert total_loss({k: 0.0 for k in parts}).item() == 0.0
    doubled = total_loss(parts, LossWeights(reg=0.01)).item()
    assert doubled - total_loss(parts).item() == pytest.approx(0.05)


def test_default_weights():
    w = LossWeights()
    assert (w.rgb, w.depth, w.reg, w.dist) == (1.0, 1.0, 0.005, 1.0)
    with pytest.raises(ValueError):
        LossWeights(reg=-1.0)


def _random_case(rng, n_pix=12, n_frames=3):
    frame = rng.integers(0, n_frames, n_pix)
    masked = rng.uniform(size=n_pix) < 0.5
    b = batch(frame, masked, rng.uniform(size=(n_pix, 3)), rng.uniform(0.5, 3.0, n_pix))
    rendered = {
        "rgb": Tensor(rng.uniform(size=(n_pix, 3))),
        "rgb_mv": Tensor(rng.uniform(size=(n_pix, 3))),
        "depth": Tensor(rng.uniform(0.5, 3.0, n_pix)),
        "dist": Tensor(rng.uniform(0, 0.1, n_pix)),
    }
    return b, rendered


def test_uncertainty_gradient_formula(rng):
    """d total / d u_n = -exp(-u_n) * (masked residuals of n) + lambda_reg."""
    b, rendered = _random_case(rng)
    active = ActiveSet({0, 1, 2})
    u0 = np.array([0.3, 0.0, 1.2])
    u = Tensor(u0, requires_grad=True)
    g = backward(objective(b, rendered, u, active)["total"], wrt=[u])[u]
    for n in range(3):
        sel = (b.frame == n) & b.masked
        r = (np.sum((b.target_rgb[sel] - rendered["rgb"].data[sel]) ** 2)
             + np.sum((b.target_rgb[sel] - rendered["rgb_mv"].data[sel]) ** 2)
             + np.sum(np.abs(b.target_depth[sel] - rendered["depth"].data[sel])))
        assert g[n] == pytest.approx(-math.exp(-u0[n]) * r + 0.005, abs=1e-12)


def test_frame_without_masked_residual_gets_exactly_lambda_reg(rng):
    b, rendered = _random_case(rng)
    b.masked[b.frame == 2] = False
    u = Tensor(np.array([0.0, 0.4, 0.0]), requires_grad=True)
    g = backward(objective(b, rendered, u, ActiveSet({0, 1, 2}))["total"], wrt=[u])[u]
    assert g[2] == 0.005
    # and the finite-difference check agrees on every coordinate
    def f(raw):
        return objective(b, rendered, raw, ActiveSet({0, 1, 2}))["total"]

    assert grad_check(f, np.array([0.2, 0.4, 0.1]), eps=1e-5) < 1e-6


def test_pruning_changes_only_that_frames_terms(rng):
    b, rendered = _random_case(rng)
    u = Tensor(np.array([0.1, 0.2, 0.3]))
    full = objective(b, rendered, u, ActiveSet({0, 1, 2}))
    keep = ~((b.frame == 2) & b.masked)
    sub = b.subset(keep)
    sub_rendered = {k: Tensor(v.data[keep]) for k, v in rendered.items()}
    pruned = objective(sub, sub_rendered, u, ActiveSet({0, 1}))
    sel = (b.frame == 2) & b.masked
    c2 = math.exp(-0.3)
    drop = (c2 * np.sum((b.target_rgb[sel] - rendered["rgb"].data[sel]) ** 2)
            + c2 * np.sum((b.target_rgb[sel] - rendered["rgb_mv"].data[sel]) ** 2)
            + c2 * np.sum(np.abs(b.target_depth[sel] - rendered["depth"].data[sel]))
            + np.sum(rendered["dist"].data[sel]) + 0.005 * 0.3)
    assert full["total"].item() - pruned["total"].item() == pytest.approx(drop, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 11))
def test_batch_partition_equals_whole(seed, cut):
    r = np.random.default_rng(seed)
    b, rendered = _random_case(r)
    u = Tensor(r.uniform(0, 2, 3))
    active = ActiveSet({0, 1, 2})
    whole = objective(b, rendered, u, active)
    idx = r.permutation(len(b))
    parts = []
    for sel in (idx[:cut], idx[cut:]):
        parts.append(objective(b.subset(sel), {k: Tensor(v.data[sel]) for k, v in rendered.items()}, u, active))
    for k in ("rgb", "rgb_mv", "depth", "dist"):
        assert parts[0][k].item() + parts[1][k].item() == pytest.approx(whole[k].item(), rel=1e-13, abs=1e-15)
        assert whole[k].item() >= 0


def test_confidence_weighting_off(rng):
    b, rendered = _random_case(rng)
    u = Tensor(np.array([2.0, 2.0, 2.0]), requires_grad=True)
    parts = objective(b, rendered, u, ActiveSet({0, 1, 2}), use_confidence=False)
    ref = objective(b, rendered, Tensor(np.zeros(3)), ActiveSet({0, 1, 2}))
    assert parts["rgb"].item() == ref["rgb"].item()
    assert parts["reg"].item() == 0.0
