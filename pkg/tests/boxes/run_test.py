#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from modules.boxes import (
    Box3D,
    box_to_frame,
    clip_convex,
    footprint,
    footprint_intersection_area,
    points_in_footprint,
    polygon_area,
)
from modules.geometry import Pose6D, pose_to_matrix


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), (0.0, 2.0, 1.5), 0.0)


def test_footprint_is_counter_clockwise():
    poly = footprint(Box3D((1, 2, 0), (4.0, 2.0, 1.5), 30.0))
    assert polygon_area(poly) == pytest.approx(8.0)


def test_overlap_of_offset_squares():
    a = Box3D((0, 0, 0), (2.0, 2.0, 1.0), 0.0)
    b = Box3D((1, 0, 0), (2.0, 2.0, 1.0), 0.0)
    assert footprint_intersection_area(a, b) == pytest.approx(2.0, abs=1e-12)


def test_rotated_square_inside_larger_square():
    inner = Box3D((0, 0, 0), (1.0, 1.0, 1.0), 45.0)
    outer = Box3D((0, 0, 0), (4.0, 4.0, 1.0), 0.0)
    assert footprint_intersection_area(inner, outer) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_clip_is_empty():
    a = footprint(Box3D((0, 0, 0), (2.0, 2.0, 1.0), 0.0))
    b = footprint(Box3D((10, 0, 0), (2.0, 2.0, 1.0), 0.0))
    assert clip_convex(a, b) == []


def test_margin_grows_footprint():
    a = Box3D((0, 0, 0), (2.0, 2.0, 1.0), 0.0)
    b = Box3D((2.5, 0, 0), (2.0, 2.0, 1.0), 0.0)
    assert footprint_intersection_area(a, b) == 0.0
    assert footprint_intersection_area(a, b, margin=0.5) > 0.0


def test_points_in_footprint_rotated():
    box = Box3D((0, 0, 0), (4.0, 1.0, 1.0), 90.0)
    xy = np.array([[0.0, 1.9], [1.9, 0.0], [0.0, 0.0]])
    assert points_in_footprint(box, xy).tolist() == [True, False, True]


def test_box_to_frame_adds_heading():
    box = Box3D((1.0, 0.0, 0.0), (4.5, 2.0, 1.5), 10.0)
    out = box_to_frame(box, pose_to_matrix(Pose6D(0, 0, 0, 0, 0, 90)))
    assert out.center[0] == pytest.approx(0.0, abs=1e-12)
    assert out.center[1] == pytest.approx(1.0)
    assert out.yaw == pytest.approx(100.0)


def test_box_dict_round_trip_keeps_fields():
    box = Box3D((1.0, 2.0, -1.0), (4.5, 2.0, 1.5), 200.0)
    assert box.yaw == pytest.approx(-160.0)
    assert Box3D.from_dict(box.to_dict()) == box
