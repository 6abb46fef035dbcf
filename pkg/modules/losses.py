# -*- coding: utf-8 -*-
"""
攻击目标的三个差异项与预算约束

- 外观差异：投影点坐标的均方误差（按索引对齐）
- 分布差异：CAV特征网格集合之间的有偏 RBF 核 MMD²
- 任务差异：对真值热图的类别平衡二元交叉熵

每一项都有 *_and_grad 版本，返回对对抗侧输入的解析梯度，供 perception.backward 使用
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .boxes import Box3D, points_in_footprint
from .errors import ConfigError, ShapeMismatchError
from .geometry import Pose6D, PointCloud, wrap_angle
from .perception import FeatureGrid, GridSpec

SCORE_EPS = 1e-7
BANDWIDTH_FLOOR = 1e-6


def _as_float(value, field_name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(field_name, f"不是数值: {value!r}")


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_: float = 1.0
    omega: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        for key, name in (("lambda_", "lambda"), ("omega", "omega"), ("xi", "xi")):
            value = _as_float(getattr(self, key), f"weights.{name}")
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"weights.{name}", f"必须为非负有限值，实际 {value}")
            object.__setattr__(self, key, value)

    def to_dict(self) -> Dict[str, float]:
        return {"lambda": self.lambda_, "omega": self.omega, "xi": self.xi}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "ObjectiveWeights":
        return cls(data.get("lambda", 1.0), data.get("omega", 1.0), data.get("xi", 1.0))


@dataclass(frozen=True)
class PerturbationBudget:
    eps_xy: float = 1.118
    eps_z: float = 1.395
    eps_theta: float = 0.141

    def __post_init__(self):
        for name in ("eps_xy", "eps_z", "eps_theta"):
            value = _as_float(getattr(self, name), f"budget.{name}")
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"budget.{name}", f"必须为正，实际 {value}")
            object.__setattr__(self, name, value)

    def as_vector(self) -> np.ndarray:
        return np.array([self.eps_xy, self.eps_xy, self.eps_z,
                         self.eps_theta, self.eps_theta, self.eps_theta])

    def scaled(self, factor: float) -> "PerturbationBudget":
        return PerturbationBudget(self.eps_xy * factor, self.eps_z * factor, self.eps_theta * factor)

    def to_dict(self) -> Dict[str, float]:
        return {"eps_xy": self.eps_xy, "eps_z": self.eps_z, "eps_theta": self.eps_theta}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "PerturbationBudget":
        unknown = set(data) - {"eps_xy", "eps_z", "eps_theta"}
        if unknown:
            raise ConfigError(f"budget.{sorted(unknown)[0]}", "未知字段")
        return cls(**data)


@dataclass(frozen=True)
class GroundTruthHeatmap:
    values: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ShapeMismatchError(f"真值热图形状 {self.values.shape} 与 {self.spec.shape} 不符")
        if not np.all((self.values == 0.0) | (self.values == 1.0)):
            raise ValueError("真值热图只能取 0 或 1")


def rasterize_boxes(boxes: Sequence[Box3D], spec: GridSpec) -> GroundTruthHeatmap:
    """单元中心落在任一真值框BEV投影内则为1"""
    centers = spec.cell_centers()
    mask = np.zeros(centers.shape[0], dtype=bool)
    for box in boxes:
        mask |= points_in_footprint(box, centers)
    return GroundTruthHeatmap(mask.reshape(spec.shape).astype(np.float64), spec)


def appearance_discrepancy(p_ori: PointCloud, p_adv: PointCloud) -> float:
    value, _ = appearance_discrepancy_and_grad([p_ori.xyz], [p_adv.xyz])
    return value


def appearance_discrepancy_and_grad(ori: Sequence[np.ndarray], adv: Sequence[np.ndarray]) -> Tuple[float, List[np.ndarray]]:
    """
    多个CAV的投影点合并后计算 MSE

    Returns:
        (D_app, 对每个CAV对抗投影点的梯度列表)
    """
    if len(ori) != len(adv):
        raise ShapeMismatchError(f"点云数量不一致: {len(ori)} vs {len(adv)}")
    for a, b in zip(ori, adv):
        if a.shape != b.shape:
            raise ShapeMismatchError(f"点云长度不一致: {a.shape} vs {b.shape}")
    total = sum(a.shape[0] for a in ori)
    if total == 0:
        return 0.0, [np.zeros_like(b) for b in adv]
    diffs = [b - a for a, b in zip(ori, adv)]
    value = float(sum(np.sum(d * d) for d in diffs) / (3.0 * total))
    grads = [2.0 * d / (3.0 * total) for d in diffs]
    return value, grads


def _flatten_set(grids: Sequence[FeatureGrid]) -> np.ndarray:
    return np.stack([g.data.reshape(-1) for g in grids])


def median_bandwidth(z: np.ndarray) -> float:
    if z.shape[0] < 2:
        return 1.0
    return max(float(np.median(pdist(z))), BANDWIDTH_FLOOR)


def mmd_squared(set_ori: Sequence[FeatureGrid], set_adv: Sequence[FeatureGrid], bandwidth: Optional[float] = None) -> float:
    value, _ = mmd_squared_and_grad(set_ori, set_adv, bandwidth)
    return value


def mmd_squared_and_grad(set_ori: Sequence[FeatureGrid], set_adv: Sequence[FeatureGrid],
                         bandwidth: Optional[float] = None) -> Tuple[float, List[np.ndarray]]:
    """
    有偏 MMD² 估计及其对 set_adv 各网格的梯度

    核函数 k(a, b) = exp(-‖a-b‖² / 2γ²)；bandwidth 为 None 时 γ 取合并集合两两距离的中位数，
    梯度同时穿过中位数（偶数个距离时两个中间距离各占 0.5）
    """
    if not set_ori or not set_adv:
        raise ValueError("MMD 输入集合不能为空")
    shape = set_ori[0].data.shape
    for g in list(set_ori) + list(set_adv):
        if g.data.shape != shape:
            raise ShapeMismatchError(f"MMD 输入网格形状不一致: {g.data.shape} vs {shape}")

    x = _flatten_set(set_ori)
    y = _flatten_set(set_adv)
    n, m = x.shape[0], y.shape[0]
    zero_grads = [np.zeros(shape) for _ in range(m)]
    if x.shape == y.shape and np.array_equal(x, y):
        return 0.0, zero_grads

    z = np.vstack([x, y])
    adaptive = bandwidth is None
    gamma = median_bandwidth(z) if adaptive else float(bandwidth)
    if gamma <= 0:
        raise ValueError(f"带宽必须为正: {gamma}")

    d2_xx = cdist(x, x, "sqeuclidean")
    d2_yy = cdist(y, y, "sqeuclidean")
    d2_xy = cdist(x, y, "sqeuclidean")
    inv = 1.0 / (2.0 * gamma * gamma)
    k_xx, k_yy, k_xy = np.exp(-d2_xx * inv), np.exp(-d2_yy * inv), np.exp(-d2_xy * inv)
    # 交叉项按排序后求和，保证交换两个集合时结果逐位相同
    raw = k_xx.mean() + k_yy.mean() - 2.0 * np.sort(k_xy, axis=None).sum() / k_xy.size
    if raw <= 0.0:
        return 0.0, zero_grads

    g2 = gamma * gamma
    # 固定 γ 时的直接项
    grad_y = (-2.0 / (m * m * g2)) * (k_yy.sum(axis=1)[:, None] * y - k_yy @ y)
    grad_y += (2.0 / (n * m * g2)) * (k_xy.sum(axis=0)[:, None] * y - k_xy.T @ x)

    if adaptive and gamma > BANDWIDTH_FLOOR:
        dmmd_dgamma = ((k_xx * d2_xx).mean() + (k_yy * d2_yy).mean() - 2.0 * (k_xy * d2_xy).mean()) / gamma ** 3
        grad_y += dmmd_dgamma * _median_grad(z, n)

    return float(raw), [g.reshape(shape) for g in grad_y]


def _median_grad(z: np.ndarray, n_fixed: int) -> np.ndarray:
    """两两距离中位数对 z[n_fixed:] 各行的梯度"""
    dists = pdist(z)
    rows, cols = np.triu_indices(z.shape[0], 1)
    order = np.argsort(dists, kind="stable")
    mid = dists.size // 2
    picks = [(order[mid], 1.0)] if dists.size % 2 else [(order[mid - 1], 0.5), (order[mid], 0.5)]
    grad = np.zeros_like(z)
    for idx, share in picks:
        a, b = rows[idx], cols[idx]
        if dists[idx] == 0.0:
            continue
        unit = (z[a] - z[b]) / dists[idx]
        grad[a] += share * unit
        grad[b] -= share * unit
    return grad[n_fixed:]


def _check_heatmap(s: np.ndarray, y: GroundTruthHeatmap):
    if s.shape != y.values.shape:
        raise ShapeMismatchError(f"score 形状 {s.shape} 与真值热图 {y.values.shape} 不符")


def detection_loss(s: np.ndarray, y: GroundTruthHeatmap) -> float:
    value, _ = detection_loss_and_grad(s, y)
    return value


def detection_loss_and_grad(s: np.ndarray, y: GroundTruthHeatmap) -> Tuple[float, np.ndarray]:
    """
    类别平衡 BCE：正样本权重 N_neg/max(N_pos,1)，整体除以 max(N_neg,1)
    截断区间外的 score 梯度为 0
    """
    _check_heatmap(s, y)
    pos = y.values == 1.0
    n_pos = int(np.count_nonzero(pos))
    n_neg = pos.size - n_pos
    w_pos = n_neg / max(n_pos, 1)
    norm = float(max(n_neg, 1))
    sc = np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
    loss = np.where(pos, -w_pos * np.log(sc), -np.log1p(-sc))
    value = float(loss.sum() / norm)
    unclamped = (s >= SCORE_EPS) & (s <= 1.0 - SCORE_EPS)
    grad = np.where(pos, -w_pos / sc, 1.0 / (1.0 - sc)) / norm
    return value, np.where(unclamped, grad, 0.0)


def objective(d_app: float, d_dist: float, d_task: float, w: ObjectiveWeights) -> float:
    for v in (d_app, d_dist, d_task):
        if not math.isfinite(v):
            raise ValueError(f"目标函数输入非有限值: {v}")
    return w.lambda_ * d_app + w.omega * d_dist + w.xi * d_task


def clip_delta(delta: np.ndarray, b: PerturbationBudget) -> np.ndarray:
    bound = b.as_vector()
    return np.clip(np.asarray(delta, dtype=np.float64), -bound, bound)


def pose_delta(g_original: Pose6D, g_candidate: Pose6D) -> np.ndarray:
    """候选位姿相对原始位姿的偏移，角度分量归一化到 (-180, 180]"""
    delta = g_candidate.as_array() - g_original.as_array()
    delta[3:] = [wrap_angle(v) for v in delta[3:]]
    return delta


def project_to_budget(g_original: Pose6D, g_candidate: Pose6D, b: PerturbationBudget) -> Pose6D:
    """
    逐参数把偏移裁剪到 [-ε, +ε]
    预算内的分量原样保留候选值，超出的分量取 original ± ε，因此重复投影结果不变
    """
    delta = pose_delta(g_original, g_candidate)
    bound = b.as_vector()
    orig = g_original.as_array()
    cand = g_candidate.as_array()
    out = np.where(np.abs(delta) <= bound, cand, orig + np.sign(delta) * bound)
    return Pose6D.from_array(out)


def within_budget(delta: np.ndarray, b: PerturbationBudget) -> List[bool]:
    """按 [x, y, z, θx, θy, θz] 返回是否满足预算"""
    return [bool(v) for v in np.abs(np.asarray(delta)) <= b.as_vector()]
