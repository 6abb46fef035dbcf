# -*- coding: utf-8 -*-
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.geometry import Pose6D, PointCloud
from modules.perception import PerceptionVariant
from modules.scene import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def small_scene_config():
    return SceneConfig(n_scenes=2, n_vehicles=(3, 5), n_cavs=(2, 3), seed=7)


@pytest.fixture(scope="session")
def scenes(small_scene_config):
    return [generate_scene(small_scene_config, i) for i in range(small_scene_config.n_scenes)]


@pytest.fixture(scope="session")
def small_variant():
    """40 m x 20 m 的小网格，梯度有限差分检查用"""
    return PerceptionVariant("S", cell_size=1.0, sigma=0.75, fusion="sum", alpha=1.0,
                             x_range=(-20.0, 20.0), y_range=(-10.0, 10.0))


@pytest.fixture(scope="session")
def small_softmax_variant():
    return PerceptionVariant("T", cell_size=1.0, sigma=0.9, fusion="softmax", alpha=0.5,
                             x_range=(-20.0, 20.0), y_range=(-10.0, 10.0))


@pytest.fixture
def toy_clouds():
    """自车与两辆CAV的小点云，全部落在小网格内部且远离边界"""
    rng = np.random.default_rng(3)
    ego = PointCloud.from_xyz(np.column_stack([
        rng.uniform(-6.0, 6.0, 40), rng.uniform(-4.0, 4.0, 40), rng.uniform(-1.5, -0.5, 40)]), "ego")
    cavs = []
    for k in range(2):
        xyz = np.column_stack([rng.uniform(-4.0, 4.0, 30), rng.uniform(-3.0, 3.0, 30), rng.uniform(-1.6, -0.4, 30)])
        cavs.append(PointCloud.from_xyz(xyz, f"cav{k}"))
    ego_pose = Pose6D(0.5, -0.3, 1.9, 0.0, 0.0, 4.0)
    cav_poses = [Pose6D(3.0, 1.0, 1.9, 0.3, -0.2, 12.0), Pose6D(-4.0, -1.5, 1.9, -0.1, 0.4, -7.0)]
    return ego, cavs, ego_pose, cav_poses
