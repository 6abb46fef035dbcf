# -*- coding: utf-8 -*-
"""
位姿几何
GPS位姿 [x, y, z, θx, θy, θz] 与齐次变换矩阵之间的转换、点云投影以及
投影点对CAV位姿六个参数的解析雅可比

约定：
- 角度接口一律使用度，仅在三角函数内部转换为弧度
- 旋转顺序为内旋 Z-Y-X：r = Rz(θz) @ Ry(θy) @ Rx(θx)
- T_dst_src 把点从 src 坐标系变换到 dst 坐标系
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GeometryError, ShapeMismatchError

DEG = math.pi / 180.0
POSE_FIELDS = ("x", "y", "z", "theta_x", "theta_y", "theta_z")


def wrap_angle(deg: float) -> float:
    """把角度归一化到 (-180, 180]，区间内的值原样返回"""
    if -180.0 < deg <= 180.0:
        return float(deg)
    wrapped = math.fmod(deg + 180.0, 360.0)
    if wrapped <= 0.0:
        wrapped += 360.0
    return wrapped - 180.0


@dataclass(frozen=True)
class Pose6D:
    x: float
    y: float
    z: float
    theta_x: float
    theta_y: float
    theta_z: float

    def __post_init__(self):
        for name in POSE_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise GeometryError(f"位姿字段 {name} 非有限值: {value}")
            if name.startswith("theta"):
                value = wrap_angle(value)
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose6D":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape != (6,):
            raise ShapeMismatchError(f"位姿需要6个元素，实际 {arr.shape}")
        return cls(*(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in POSE_FIELDS], dtype=np.float64)

    def offset(self, delta: Sequence[float]) -> "Pose6D":
        return Pose6D.from_array(self.as_array() + np.asarray(delta, dtype=np.float64))

    def to_list(self) -> list:
        return [getattr(self, name) for name in POSE_FIELDS]


@dataclass(frozen=True)
class HomTransform:
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ShapeMismatchError(f"齐次变换需要 4x4，实际 {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("齐次变换含非有限值")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise GeometryError(f"齐次变换最后一行必须为 [0,0,0,1]，实际 {m[3]}")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise GeometryError("旋转块不正交")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("旋转块行列式不为1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "HomTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, r: np.ndarray, t: Sequence[float]) -> "HomTransform":
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = np.asarray(t, dtype=np.float64).reshape(3)
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def __matmul__(self, other: "HomTransform") -> "HomTransform":
        m = self.matrix @ other.matrix
        m[3] = (0.0, 0.0, 0.0, 1.0)
        return HomTransform(m)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(repr=False)
    agent_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeMismatchError(f"点云需要 m x 4 齐次坐标，实际 {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("点云含非有限坐标")
        if not np.all(pts[:, 3] == 1.0):
            raise GeometryError("点云齐次分量必须为1")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_xyz(cls, xyz: np.ndarray, agent_id: str = "") -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return cls(np.hstack([xyz, np.ones((xyz.shape[0], 1))]), agent_id)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def __len__(self) -> int:
        return self.points.shape[0]


def _rx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def rotation_matrix(pose: Pose6D) -> np.ndarray:
    return _rz(pose.theta_z * DEG) @ _ry(pose.theta_y * DEG) @ _rx(pose.theta_x * DEG)


def rotation_partials(pose: Pose6D) -> np.ndarray:
    """返回 (3, 3, 3)：依次为 ∂r/∂θx, ∂r/∂θy, ∂r/∂θz（按弧度）"""
    ax, ay, az = pose.theta_x * DEG, pose.theta_y * DEG, pose.theta_z * DEG
    rx, ry, rz = _rx(ax), _ry(ay), _rz(az)
    return np.stack([
        rz @ ry @ _drx(ax),
        rz @ _dry(ay) @ rx,
        _drz(az) @ ry @ rx,
    ])


def pose_to_matrix(pose: Pose6D) -> HomTransform:
    """T_world_agent"""
    return HomTransform.from_rt(rotation_matrix(pose), [pose.x, pose.y, pose.z])


def invert(t: HomTransform) -> HomTransform:
    r = t.rotation
    return HomTransform.from_rt(r.T, -r.T @ t.translation)


def htm_extract(g_ego: Pose6D, g_cav: Pose6D) -> HomTransform:
    """T_ego_cav = T_world_ego^-1 @ T_world_cav"""
    return invert(pose_to_matrix(g_ego)) @ pose_to_matrix(g_cav)


def transform_points(t: HomTransform, xyz: np.ndarray) -> np.ndarray:
    return xyz @ t.rotation.T + t.translation


def transform_cloud(t: HomTransform, p: PointCloud) -> PointCloud:
    return PointCloud.from_xyz(transform_points(t, p.xyz), p.agent_id)


def transform_jacobian(g_ego: Pose6D, g_cav: Pose6D, p: PointCloud) -> np.ndarray:
    """
    投影点对CAV位姿的雅可比 (m, 3, 6)

    q = r_e^T (r_c p + t_c - t_e)，平移列为 r_e^T，角度列为 r_e^T ∂r_c/∂θ p，按度计
    """
    return _jacobian_xyz(g_ego, g_cav, p.xyz)


def _jacobian_xyz(g_ego: Pose6D, g_cav: Pose6D, xyz: np.ndarray) -> np.ndarray:
    m = xyz.shape[0]
    re_t = rotation_matrix(g_ego).T
    jac = np.empty((m, 3, 6), dtype=np.float64)
    jac[:, :, :3] = re_t
    partials = rotation_partials(g_cav)
    for k in range(3):
        jac[:, :, 3 + k] = (xyz @ (re_t @ partials[k]).T) * DEG
    return jac


def check_gimbal_margin(pose: Pose6D, margin_deg: float = 1.0):
    if abs(abs(pose.theta_y) - 90.0) < margin_deg:
        raise GeometryError(f"俯仰角 {pose.theta_y} 距万向锁不足 {margin_deg} 度")
