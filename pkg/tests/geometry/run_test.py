#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""位姿几何：旋转约定、齐次变换、投影与雅可比"""

import math
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from modules.errors import GeometryError, ShapeMismatchError
from modules.geometry import (
    HomTransform,
    Pose6D,
    PointCloud,
    check_gimbal_margin,
    htm_extract,
    invert,
    pose_to_matrix,
    rotation_matrix,
    transform_cloud,
    transform_jacobian,
    transform_points,
    wrap_angle,
)


def test_wrap_angle_range():
    assert wrap_angle(180.0) == 180.0
    assert wrap_angle(-180.0) == 180.0
    assert wrap_angle(190.0) == pytest.approx(-170.0)
    assert wrap_angle(-190.0) == pytest.approx(170.0)
    assert wrap_angle(720.5) == pytest.approx(0.5)
    assert wrap_angle(12.25) == 12.25


def test_pose_rejects_non_finite():
    with pytest.raises(GeometryError):
        Pose6D(float("nan"), 0, 0, 0, 0, 0)
    with pytest.raises(ShapeMismatchError):
        Pose6D.from_array([1, 2, 3])


def test_yaw_only_rotation():
    r = rotation_matrix(Pose6D(0, 0, 0, 0, 0, 90))
    assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)


def test_intrinsic_zyx_order():
    pose = Pose6D(0, 0, 0, 30.0, 20.0, 10.0)
    a = [math.radians(v) for v in (30.0, 20.0, 10.0)]
    rx = np.array([[1, 0, 0], [0, math.cos(a[0]), -math.sin(a[0])], [0, math.sin(a[0]), math.cos(a[0])]])
    ry = np.array([[math.cos(a[1]), 0, math.sin(a[1])], [0, 1, 0], [-math.sin(a[1]), 0, math.cos(a[1])]])
    rz = np.array([[math.cos(a[2]), -math.sin(a[2]), 0], [math.sin(a[2]), math.cos(a[2]), 0], [0, 0, 1]])
    assert_allclose(rotation_matrix(pose), rz @ ry @ rx, atol=1e-12)


def test_pose_to_matrix_is_rigid():
    t = pose_to_matrix(Pose6D(1.0, -2.0, 0.5, 3.0, -4.0, 170.0))
    r = t.rotation
    assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    assert_allclose(t.matrix[3], [0, 0, 0, 1])


def test_hom_transform_validation():
    bad = np.eye(4)
    bad[3, 0] = 1.0
    with pytest.raises(GeometryError):
        HomTransform(bad)
    skew = np.eye(4)
    skew[0, 1] = 0.5
    with pytest.raises(GeometryError):
        HomTransform(skew)
    with pytest.raises(ShapeMismatchError):
        HomTransform(np.eye(3))


def test_invert_round_trip():
    t = pose_to_matrix(Pose6D(5.0, 3.0, 1.0, 1.0, 2.0, 33.0))
    assert_allclose((invert(t) @ t).matrix, np.eye(4), atol=1e-12)


def test_htm_extract_identity_for_equal_poses():
    g = Pose6D(10.0, -4.0, 1.9, 0.5, 0.2, 45.0)
    assert_allclose(htm_extract(g, g).matrix, np.eye(4), atol=1e-12)


def test_htm_extract_pure_translation():
    ego = Pose6D(0, 0, 0, 0, 0, 0)
    cav = Pose6D(10.0, 0, 0, 0, 0, 0)
    q = transform_points(htm_extract(ego, cav), np.array([[1.0, 2.0, 3.0]]))
    assert_allclose(q, [[11.0, 2.0, 3.0]], atol=1e-12)


def test_projection_preserves_distances():
    rng = np.random.default_rng(0)
    xyz = rng.normal(size=(50, 3)) * 10
    t = htm_extract(Pose6D(1, 2, 1.9, 0, 0, 20), Pose6D(-30, 8, 1.9, 1, -1, 200))
    q = transform_points(t, xyz)
    assert_allclose(np.linalg.norm(q[1:] - q[:-1], axis=1), np.linalg.norm(xyz[1:] - xyz[:-1], axis=1), rtol=1e-12)


def test_point_cloud_checks_homogeneous_column():
    with pytest.raises(GeometryError):
        PointCloud(np.array([[0.0, 0.0, 0.0, 2.0]]))
    with pytest.raises(ShapeMismatchError):
        PointCloud(np.zeros((3, 3)))
    assert len(PointCloud.from_xyz(np.zeros((0, 3)))) == 0


def test_transform_cloud_keeps_agent():
    p = PointCloud.from_xyz(np.ones((4, 3)), "cav1")
    out = transform_cloud(HomTransform.identity(), p)
    assert out.agent_id == "cav1"
    assert_allclose(out.xyz, p.xyz)


@pytest.mark.parametrize("cav", [
    Pose6D(12.0, -3.0, 1.9, 0.0, 0.0, 30.0),
    Pose6D(-8.0, 5.0, 2.1, 2.0, -3.0, -120.0),
    Pose6D(1.0, 1.0, 1.9, 10.0, 40.0, 179.0),
])
def test_jacobian_matches_finite_differences(cav):
    ego = Pose6D(0.7, -0.4, 1.9, 0.1, -0.2, 15.0)
    rng = np.random.default_rng(1)
    p = PointCloud.from_xyz(rng.uniform(-20, 20, size=(25, 3)))
    jac = transform_jacobian(ego, cav, p)
    h = 1e-6
    for j in range(6):
        step = np.zeros(6)
        step[j] = h
        plus = transform_points(htm_extract(ego, cav.offset(step)), p.xyz)
        minus = transform_points(htm_extract(ego, cav.offset(-step)), p.xyz)
        assert_allclose(jac[:, :, j], (plus - minus) / (2 * h), rtol=1e-5, atol=1e-7)


def test_gimbal_margin():
    check_gimbal_margin(Pose6D(0, 0, 0, 0, 88.5, 0))
    with pytest.raises(GeometryError):
        check_gimbal_margin(Pose6D(0, 0, 0, 0, 89.5, 0))


def _random_pose(rng):
    xyz = rng.uniform(-60.0, 60.0, size=3)
    angles = [rng.uniform(-180.0, 180.0), rng.uniform(-80.0, 80.0), rng.uniform(-180.0, 180.0)]
    return Pose6D(*xyz, angles[0], angles[1], angles[2])


def test_htm_extract_pairs_are_mutual_inverses():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        a, b = _random_pose(rng), _random_pose(rng)
        product = (htm_extract(a, b) @ htm_extract(b, a)).matrix
        assert_allclose(product, np.eye(4), atol=1e-9)


def test_htm_extract_yaw_ninety_example():
    ego = Pose6D(0.0, 0.0, 0.0, 0.0, 0.0, 90.0)
    cav = Pose6D(10.0, 0.0, 0.0, 0.0, 0.0, 90.0)
    t = htm_extract(ego, cav)
    assert_allclose(t.rotation, np.eye(3), atol=1e-12)
    assert_allclose(t.translation, [0.0, -10.0, 0.0], atol=1e-12)
    assert_allclose(transform_points(t, np.zeros((1, 3))), [[0.0, -10.0, 0.0]], atol=1e-12)


def test_jacobian_matches_finite_differences_random_pairs():
    rng = np.random.default_rng(77)
    h = 1e-5
    for _ in range(100):
        ego, cav = _random_pose(rng), _random_pose(rng)
        p = PointCloud.from_xyz(rng.uniform(-30.0, 30.0, size=(8, 3)))
        jac = transform_jacobian(ego, cav, p)
        for j in range(6):
            step = np.zeros(6)
            step[j] = h
            plus = transform_points(htm_extract(ego, cav.offset(step)), p.xyz)
            minus = transform_points(htm_extract(ego, cav.offset(-step)), p.xyz)
            assert_allclose(jac[:, :, j], (plus - minus) / (2 * h), rtol=1e-5, atol=1e-6)
