#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""差异损失、预算投影与目标函数"""

import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from modules.boxes import Box3D
from modules.errors import ConfigError, ShapeMismatchError
from modules.geometry import Pose6D, PointCloud
from modules.losses import (
    GroundTruthHeatmap,
    ObjectiveWeights,
    PerturbationBudget,
    appearance_discrepancy,
    appearance_discrepancy_and_grad,
    clip_delta,
    detection_loss,
    detection_loss_and_grad,
    median_bandwidth,
    mmd_squared,
    mmd_squared_and_grad,
    objective,
    pose_delta,
    project_to_budget,
    rasterize_boxes,
    within_budget,
)
from modules.perception import FeatureGrid, GridSpec

SPEC = GridSpec((-4.0, 4.0), (-3.0, 3.0), 1.0)


def _random_grids(rng, count, scale=1.0):
    return [FeatureGrid(SPEC, rng.normal(size=(2,) + SPEC.shape) * scale) for _ in range(count)]


def test_appearance_identical_is_zero():
    p = PointCloud.from_xyz(np.arange(12, dtype=float).reshape(4, 3))
    assert appearance_discrepancy(p, p) == 0.0


def test_appearance_uniform_shift():
    xyz = np.zeros((5, 3))
    a = PointCloud.from_xyz(xyz)
    b = PointCloud.from_xyz(xyz + [1.0, 2.0, 2.0])
    assert appearance_discrepancy(a, b) == pytest.approx(3.0)


def test_appearance_pools_over_cavs():
    ori = [np.zeros((2, 3)), np.zeros((1, 3))]
    adv = [np.ones((2, 3)), np.full((1, 3), 2.0)]
    value, grads = appearance_discrepancy_and_grad(ori, adv)
    assert value == pytest.approx((6 * 1.0 + 3 * 4.0) / 9.0)
    assert_allclose(grads[0], 2.0 * np.ones((2, 3)) / 9.0)
    assert appearance_discrepancy_and_grad([np.zeros((0, 3))], [np.zeros((0, 3))])[0] == 0.0


def test_appearance_length_mismatch():
    with pytest.raises(ShapeMismatchError):
        appearance_discrepancy(PointCloud.from_xyz(np.zeros((2, 3))), PointCloud.from_xyz(np.zeros((3, 3))))


def test_mmd_identical_sets_exact_zero():
    grids = _random_grids(np.random.default_rng(0), 3)
    value, grads = mmd_squared_and_grad(grids, grids)
    assert value == 0.0
    assert all(not np.any(g) for g in grads)


def test_mmd_symmetric_and_non_negative():
    rng = np.random.default_rng(1)
    a = _random_grids(rng, 3)
    b = _random_grids(rng, 3, scale=2.0)
    assert mmd_squared(a, b) == mmd_squared(b, a)
    assert mmd_squared(a, b) > 0.0


def test_mmd_grows_with_separation():
    rng = np.random.default_rng(2)
    a = _random_grids(rng, 3)
    near = [FeatureGrid(SPEC, g.data + 0.1) for g in a]
    far = [FeatureGrid(SPEC, g.data + 1.0) for g in a]
    gamma = median_bandwidth(np.stack([g.data.ravel() for g in a]))
    assert mmd_squared(a, near, gamma) < mmd_squared(a, far, gamma)


def test_mmd_shape_mismatch():
    other = FeatureGrid(GridSpec((-2.0, 2.0), (-2.0, 2.0), 1.0), np.zeros((2, 4, 4)))
    with pytest.raises(ShapeMismatchError):
        mmd_squared([FeatureGrid.zeros(SPEC)], [other])


@pytest.mark.parametrize("bandwidth", [None, 3.0])
def test_mmd_gradient_matches_finite_differences(bandwidth):
    rng = np.random.default_rng(5)
    ori = _random_grids(rng, 3)
    adv = [FeatureGrid(SPEC, g.data + rng.normal(scale=0.5, size=g.data.shape)) for g in ori]
    _, grads = mmd_squared_and_grad(ori, adv, bandwidth)
    h = 1e-6
    for k in range(len(adv)):
        flat = adv[k].data.ravel()
        for idx in rng.choice(flat.size, size=8, replace=False):
            plus = flat.copy()
            minus = flat.copy()
            plus[idx] += h
            minus[idx] -= h
            set_plus = list(adv)
            set_minus = list(adv)
            set_plus[k] = FeatureGrid(SPEC, plus.reshape(adv[k].data.shape))
            set_minus[k] = FeatureGrid(SPEC, minus.reshape(adv[k].data.shape))
            fd = (mmd_squared(ori, set_plus, bandwidth) - mmd_squared(ori, set_minus, bandwidth)) / (2 * h)
            assert grads[k].ravel()[idx] == pytest.approx(fd, rel=1e-3, abs=1e-7)


def test_median_bandwidth_floor():
    z = np.zeros((3, 4))
    assert median_bandwidth(z) == pytest.approx(1e-6)
    assert median_bandwidth(np.zeros((1, 4))) == 1.0


def test_rasterize_boxes_marks_cells_inside():
    heat = rasterize_boxes([Box3D((0.0, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0)], SPEC)
    assert heat.values.sum() == 4.0
    assert heat.values[3, 4] == 1.0


def test_heatmap_must_be_binary():
    with pytest.raises(ValueError):
        GroundTruthHeatmap(np.full(SPEC.shape, 0.5), SPEC)


def test_detection_loss_perfect_prediction_near_zero():
    heat = rasterize_boxes([Box3D((0.0, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0)], SPEC)
    assert detection_loss(heat.values.copy(), heat) == pytest.approx(0.0, abs=1e-5)
    assert detection_loss(1.0 - heat.values, heat) > 10.0


def test_detection_loss_gradient():
    heat = rasterize_boxes([Box3D((1.0, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0)], SPEC)
    s = np.random.default_rng(6).uniform(0.05, 0.95, size=SPEC.shape)
    _, grad = detection_loss_and_grad(s, heat)
    h = 1e-7
    for idx in [(0, 0), (3, 5), (2, 4), (5, 7)]:
        plus, minus = s.copy(), s.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = (detection_loss(plus, heat) - detection_loss(minus, heat)) / (2 * h)
        assert grad[idx] == pytest.approx(fd, rel=1e-5)


def test_detection_loss_zero_gradient_when_clamped():
    heat = GroundTruthHeatmap(np.zeros(SPEC.shape), SPEC)
    _, grad = detection_loss_and_grad(np.zeros(SPEC.shape), heat)
    assert not np.any(grad)
    with pytest.raises(ShapeMismatchError):
        detection_loss(np.zeros((2, 2)), heat)


def test_objective_weighted_sum():
    assert objective(1.0, 2.0, 3.0, ObjectiveWeights(1.0, 0.5, 2.0)) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        objective(float("nan"), 0.0, 0.0, ObjectiveWeights())


def test_weights_and_budget_validation():
    with pytest.raises(ConfigError) as e:
        ObjectiveWeights(-1.0, 1.0, 1.0)
    assert e.value.field == "weights.lambda"
    with pytest.raises(ConfigError) as e:
        PerturbationBudget(eps_xy="wide")
    assert e.value.field == "budget.eps_xy"
    with pytest.raises(ConfigError) as e:
        PerturbationBudget.from_dict({"eps_w": 1.0})
    assert e.value.field == "budget.eps_w"


def test_clip_delta_and_within_budget():
    b = PerturbationBudget(1.0, 2.0, 0.5)
    clipped = clip_delta(np.array([3.0, -3.0, 1.0, 1.0, -0.1, 0.6]), b)
    assert clipped.tolist() == [1.0, -1.0, 1.0, 0.5, -0.1, 0.5]
    assert within_budget(clipped, b) == [True] * 6
    assert within_budget(np.array([1.5, 0, 0, 0, 0, 0]), b)[0] is False


def test_project_to_budget_keeps_in_budget_components():
    b = PerturbationBudget(1.0, 1.0, 0.1)
    g = Pose6D(10.0, 5.0, 1.9, 0.0, 0.0, 30.0)
    cand = Pose6D(10.3, 9.0, 1.9, 0.05, -2.0, 30.0)
    out = project_to_budget(g, cand, b)
    assert out.x == 10.3
    assert out.y == 6.0
    assert out.theta_x == 0.05
    assert out.theta_y == pytest.approx(-0.1)
    assert project_to_budget(g, out, b) == out


def test_project_to_budget_wraps_angles():
    b = PerturbationBudget(1.0, 1.0, 0.5)
    g = Pose6D(0, 0, 0, 0, 0, 179.9)
    cand = Pose6D(0, 0, 0, 0, 0, -179.9)
    assert pose_delta(g, cand)[5] == pytest.approx(0.2)
    assert project_to_budget(g, cand, b) == cand


@pytest.mark.parametrize("bandwidth", [2.5, 7.0])
def test_mmd_singletons_closed_form(bandwidth):
    rng = np.random.default_rng(13)
    a, b = _random_grids(rng, 2)
    d2 = float(np.sum((a.data - b.data) ** 2))
    expected = 2.0 - 2.0 * np.exp(-d2 / (2.0 * bandwidth ** 2))
    assert mmd_squared([a], [b], bandwidth=bandwidth) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_mmd_singletons_adaptive_bandwidth():
    # 只有一对距离，中位数带宽等于两者距离
    a, b = _random_grids(np.random.default_rng(14), 2)
    assert mmd_squared([a], [b]) == pytest.approx(2.0 - 2.0 * np.exp(-0.5), rel=1e-12)


@pytest.mark.parametrize("n_boxes", [1, 3])
def test_detection_loss_uninformative_score(n_boxes):
    boxes = [Box3D((-2.0 + 2.5 * k, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0) for k in range(n_boxes)]
    heat = rasterize_boxes(boxes, SPEC)
    assert heat.values.sum() > 0
    assert detection_loss(np.full(SPEC.shape, 0.5), heat) == pytest.approx(2.0 * np.log(2.0), rel=1e-9)
