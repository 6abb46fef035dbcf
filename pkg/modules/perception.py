# -*- coding: utf-8 -*-
"""
可微分协同感知代理模型
编码器：BEV 高斯泼溅（占据通道 + 高度加权通道）
融合：逐元素求和 或 按占据做softmax加权
检测头：score = 1 - exp(-α·occupancy)，离散的峰值/NMS/航向提取只用于评估

反向传播为手写的向量-雅可比积：score -> fusion -> encode -> 点投影 -> CAV位姿
"""

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import maximum_filter

from .boxes import Box3D
from .errors import ConfigError, ShapeMismatchError
from .geometry import Pose6D, PointCloud, _jacobian_xyz, htm_extract, transform_points
from .scene import SCHEMA_VERSION

logger = logging.getLogger("core.perception")

FUSION_RULES = ("sum", "softmax")


@dataclass(frozen=True)
class GridSpec:
    x_range: Tuple[float, float] = (-140.0, 140.0)
    y_range: Tuple[float, float] = (-40.0, 40.0)
    cell_size: float = 1.0

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size 必须为正")
        for lo, hi in (self.x_range, self.y_range):
            n = (hi - lo) / self.cell_size
            if hi <= lo or abs(n - round(n)) > 1e-9:
                raise ValueError(f"范围 [{lo}, {hi}] 不能被 cell_size={self.cell_size} 整除")

    @property
    def nx(self) -> int:
        return int(round((self.x_range[1] - self.x_range[0]) / self.cell_size))

    @property
    def ny(self) -> int:
        return int(round((self.y_range[1] - self.y_range[0]) / self.cell_size))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.ny, self.nx

    def x_centers(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.nx) + 0.5) * self.cell_size

    def y_centers(self) -> np.ndarray:
        return self.y_range[0] + (np.arange(self.ny) + 0.5) * self.cell_size

    def cell_centers(self) -> np.ndarray:
        """(ny*nx, 2)，行优先"""
        xx, yy = np.meshgrid(self.x_centers(), self.y_centers())
        return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)

    def contains(self, x: float, y: float) -> bool:
        return self.x_range[0] <= x <= self.x_range[1] and self.y_range[0] <= y <= self.y_range[1]


@dataclass(frozen=True)
class PerceptionVariant:
    name: str = "A"
    cell_size: float = 1.0
    sigma: float = 0.75
    fusion: str = "sum"
    alpha: float = 1.0
    tau: float = 0.4
    nms_radius: float = 2.0
    kappa: float = 1.0
    z_min: float = -3.0
    z_max: float = 1.0
    z_taper: float = 0.5
    x_range: Tuple[float, float] = (-140.0, 140.0)
    y_range: Tuple[float, float] = (-40.0, 40.0)
    template_dims: Tuple[float, float, float] = (4.5, 2.0, 1.5)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ConfigError(f"variants.{self.name}.cell_size", "必须为正")
        if self.sigma <= 0:
            raise ConfigError(f"variants.{self.name}.sigma", "必须为正")
        if self.alpha <= 0:
            raise ConfigError(f"variants.{self.name}.alpha", "必须为正")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"variants.{self.name}.tau", "必须在 (0, 1) 内")
        if self.fusion not in FUSION_RULES:
            raise ConfigError(f"variants.{self.name}.fusion", f"只支持 {FUSION_RULES}")
        if self.kappa <= 0 or self.z_taper <= 0 or self.z_max - self.z_min < 2 * self.z_taper:
            raise ConfigError(f"variants.{self.name}.z_taper", "高度带或温度参数无效")
        try:
            self.grid_spec
        except ValueError as e:
            raise ConfigError(f"variants.{self.name}.cell_size", str(e))

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(tuple(self.x_range), tuple(self.y_range), self.cell_size)

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, name: str, data: Dict[str, Any]) -> "PerceptionVariant":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"variants.{name}.{sorted(unknown)[0]}", "未知字段")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        kwargs["name"] = name
        return cls(**kwargs)


VARIANT_A = PerceptionVariant("A", cell_size=1.0, sigma=0.75, fusion="sum", alpha=1.0)
VARIANT_B = PerceptionVariant("B", cell_size=2.0, sigma=1.5, fusion="softmax", alpha=0.5)
DEFAULT_VARIANTS = {"A": VARIANT_A, "B": VARIANT_B}


def variant_from_dict(name: str, data: Dict[str, Any]) -> PerceptionVariant:
    return PerceptionVariant.from_dict(name, data)


def variant_to_dict(v: PerceptionVariant) -> Dict[str, Any]:
    """配置文件里的变体段落，名称作为键，不重复写入"""
    return {k: val for k, val in v.to_dict().items() if k != "name"}


@dataclass(frozen=True)
class FeatureGrid:
    spec: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.shape != (2,) + self.spec.shape:
            raise ShapeMismatchError(f"特征网格形状 {self.data.shape} 与 {self.spec.shape} 不符")

    @classmethod
    def zeros(cls, spec: GridSpec) -> "FeatureGrid":
        return cls(spec, np.zeros((2,) + spec.shape))

    @property
    def occupancy(self) -> np.ndarray:
        return self.data[0]

    @property
    def height(self) -> np.ndarray:
        return self.data[1]


@dataclass(frozen=True)
class Detection:
    box: Box3D
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"置信度 {self.confidence} 不在 [0, 1] 内")


@dataclass
class FeatureGrids:
    ego: FeatureGrid
    cavs: List[FeatureGrid]
    fused: FeatureGrid


@dataclass
class Upstream:
    score: Optional[np.ndarray] = None
    cav_features: Optional[List[Optional[np.ndarray]]] = None
    cav_points: Optional[List[Optional[np.ndarray]]] = None


@dataclass
class PipelineTape:
    variant: PerceptionVariant
    ego_pose: Pose6D
    cav_poses: List[Pose6D]
    ego_xyz: np.ndarray
    cav_source_xyz: List[np.ndarray]
    cav_projected_xyz: List[np.ndarray]
    grids: FeatureGrids
    score: np.ndarray
    cav_active_counts: List[int]

    def replay(self) -> Tuple[np.ndarray, FeatureGrids]:
        score, grids, _ = _forward_xyz(self.ego_xyz, self.cav_source_xyz, self.ego_pose,
                                       self.cav_poses, self.variant)
        return score, grids


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_grad(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def splat_kernel(dx: np.ndarray, dy: np.ndarray, sigma: float):
    """
    泼溅核及其对点坐标的导数

    2.5σ 内为 exp(-d²/2σ²)，2.5σ 到 3σ 之间乘以 C¹ 平滑阶跃衰减到 0，3σ 外为 0

    Returns:
        (w, ∂w/∂dx, ∂w/∂dy)，dx = 点x - 单元中心x
    """
    d2 = dx * dx + dy * dy
    r = np.sqrt(d2)
    g = np.exp(-d2 / (2.0 * sigma * sigma))
    inner, outer = 2.5 * sigma, 3.0 * sigma
    t = (outer - r) / (outer - inner)
    taper = np.where(r <= inner, 1.0, np.where(r >= outer, 0.0, _smoothstep(t)))
    w = g * taper
    dtaper_dr = -_smoothstep_grad(t) / (outer - inner) * ((r > inner) & (r < outer))
    safe_r = np.where(r > 0.0, r, 1.0)
    radial = g * dtaper_dr / safe_r
    dw_dx = -w * dx / (sigma * sigma) + radial * dx
    dw_dy = -w * dy / (sigma * sigma) + radial * dy
    return w, dw_dx, dw_dy


def z_gate(z: np.ndarray, v: PerceptionVariant):
    """高度带门控及其导数，带内平坦区域恒为 1"""
    t_lo = (z - v.z_min) / v.z_taper
    t_hi = (v.z_max - z) / v.z_taper
    lo, hi = _smoothstep(t_lo), _smoothstep(t_hi)
    gate = lo * hi
    dgate = (_smoothstep_grad(t_lo) * hi - lo * _smoothstep_grad(t_hi)) / v.z_taper
    return gate, dgate


def _stencil(xyz: np.ndarray, v: PerceptionVariant):
    """逐个模板偏移产出 (点索引, 单元扁平索引, w, ∂w/∂x, ∂w/∂y)"""
    spec = v.grid_spec
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    inside = (x >= spec.x_range[0]) & (x < spec.x_range[1]) & (y >= spec.y_range[0]) & (y < spec.y_range[1])
    gate, dgate = z_gate(z, v)
    active = np.nonzero(inside & (gate > 0.0))[0]
    if active.size == 0:
        return
    xa, ya = x[active], y[active]
    c = spec.cell_size
    ix0 = np.floor((xa - spec.x_range[0]) / c).astype(np.int64)
    iy0 = np.floor((ya - spec.y_range[0]) / c).astype(np.int64)
    rad = int(math.ceil(3.0 * v.sigma / c + 0.5))
    for oy in range(-rad, rad + 1):
        for ox in range(-rad, rad + 1):
            ix, iy = ix0 + ox, iy0 + oy
            valid = (ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
            dx = xa - (spec.x_range[0] + (ix + 0.5) * c)
            dy = ya - (spec.y_range[0] + (iy + 0.5) * c)
            w, dwx, dwy = splat_kernel(dx, dy, v.sigma)
            keep = valid & (w > 0.0)
            if not np.any(keep):
                continue
            pts = active[keep]
            yield pts, iy[keep] * spec.nx + ix[keep], w[keep], dwx[keep], dwy[keep], gate[pts], dgate[pts]


def _splat(xyz: np.ndarray, v: PerceptionVariant) -> np.ndarray:
    spec = v.grid_spec
    size = spec.ny * spec.nx
    occ = np.zeros(size)
    hgt = np.zeros(size)
    for pts, flat, w, _, _, gate, _ in _stencil(xyz, v):
        wg = w * gate
        occ += np.bincount(flat, weights=wg, minlength=size)
        hgt += np.bincount(flat, weights=wg * xyz[pts, 2], minlength=size)
    return np.stack([occ.reshape(spec.shape), hgt.reshape(spec.shape)])


def _splat_backward(xyz: np.ndarray, grad: np.ndarray, v: PerceptionVariant) -> np.ndarray:
    """特征网格梯度 (2, ny, nx) -> 点坐标梯度 (m, 3)"""
    m = xyz.shape[0]
    out = np.zeros((m, 3))
    if m == 0 or not np.any(grad):
        return out
    g0 = grad[0].reshape(-1)
    g1 = grad[1].reshape(-1)
    for pts, flat, w, dwx, dwy, gate, dgate in _stencil(xyz, v):
        z = xyz[pts, 2]
        a0, a1 = g0[flat], g1[flat]
        lateral = (a0 + a1 * z) * gate
        out[:, 0] += np.bincount(pts, weights=lateral * dwx, minlength=m)
        out[:, 1] += np.bincount(pts, weights=lateral * dwy, minlength=m)
        dz = a0 * w * dgate + a1 * (w * dgate * z + w * gate)
        out[:, 2] += np.bincount(pts, weights=dz, minlength=m)
    return out


def encode(p: PointCloud, v: PerceptionVariant) -> FeatureGrid:
    """
    点云 -> BEV 特征网格 (2, ny, nx)：通道0为占据度，通道1为占据加权高度和

    每个点以高斯核泼溅到附近单元：距离 2.5σ 内权重为 exp(-d²/2σ²)，
    2.5σ 到 3σ 之间乘以 C¹ smoothstep 衰减到 0，3σ 外不贡献
    权重再乘以高度门控：z 在 [z_min, z_max] 之外为 0，两端各有 z_taper 宽的 smoothstep 过渡
    落在网格 x/y 范围外的点被丢弃
    """
    return FeatureGrid(v.grid_spec, _splat(p.xyz, v))


def _check_same_shape(f_ego: FeatureGrid, f_cavs: Sequence[FeatureGrid]):
    for f in f_cavs:
        if f.spec != f_ego.spec or f.data.shape != f_ego.data.shape:
            raise ShapeMismatchError(f"融合网格不一致: {f.data.shape} vs {f_ego.data.shape}")


def _softmax_weights(stack: np.ndarray, kappa: float) -> np.ndarray:
    logits = stack[:, 0] / kappa
    logits = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def fuse(f_ego: FeatureGrid, f_cavs: Sequence[FeatureGrid], v: PerceptionVariant) -> FeatureGrid:
    _check_same_shape(f_ego, f_cavs)
    if not f_cavs:
        return f_ego
    if v.fusion == "sum":
        data = f_ego.data
        for f in f_cavs:
            data = data + f.data
        return FeatureGrid(f_ego.spec, data)
    stack = np.stack([f_ego.data] + [f.data for f in f_cavs])
    weights = _softmax_weights(stack, v.kappa)
    return FeatureGrid(f_ego.spec, (weights[:, None] * stack).sum(axis=0))


def _fuse_backward(grids: FeatureGrids, grad: np.ndarray, v: PerceptionVariant) -> List[np.ndarray]:
    """融合输出梯度 -> 各CAV特征网格梯度"""
    if not grids.cavs:
        return []
    if v.fusion == "sum":
        return [grad.copy() for _ in grids.cavs]
    stack = np.stack([grids.ego.data] + [f.data for f in grids.cavs])
    weights = _softmax_weights(stack, v.kappa)
    fused = grids.fused.data
    out = []
    for b in range(1, stack.shape[0]):
        g = weights[b][None] * grad
        g[0] += weights[b] * (grad * (stack[b] - fused)).sum(axis=0) / v.kappa
        out.append(g)
    return out


def score_map(f: FeatureGrid, v: PerceptionVariant) -> np.ndarray:
    return -np.expm1(-v.alpha * f.occupancy)


def _refine(occ: np.ndarray, spec: GridSpec, iy: int, ix: int) -> Tuple[float, float, float]:
    """5x5 窗口内按占据加权的中心与主方向航向（度）"""
    y0, y1 = max(iy - 2, 0), min(iy + 3, spec.ny)
    x0, x1 = max(ix - 2, 0), min(ix + 3, spec.nx)
    w = occ[y0:y1, x0:x1]
    xs = spec.x_centers()[x0:x1]
    ys = spec.y_centers()[y0:y1]
    xx, yy = np.meshgrid(xs, ys)
    total = w.sum()
    mx, my = (w * xx).sum() / total, (w * yy).sum() / total
    dx, dy = xx - mx, yy - my
    cov = np.array([[(w * dx * dx).sum(), (w * dx * dy).sum()],
                    [(w * dx * dy).sum(), (w * dy * dy).sum()]]) / total
    _, vecs = np.linalg.eigh(cov)
    major = vecs[:, -1]
    yaw = math.degrees(math.atan2(major[1], major[0]))
    if yaw <= -90.0:
        yaw += 180.0
    elif yaw > 90.0:
        yaw -= 180.0
    return float(mx), float(my), yaw


def detect(s: np.ndarray, f: FeatureGrid, v: PerceptionVariant) -> List[Detection]:
    spec = f.spec
    if s.shape != spec.shape:
        raise ShapeMismatchError(f"score 形状 {s.shape} 与网格 {spec.shape} 不符")
    occ = f.occupancy
    # s 关于占据单调，峰值在占据上求以避免饱和区的并列
    peaks = (occ == maximum_filter(occ, size=3, mode="constant", cval=-np.inf)) & (s >= v.tau)
    rows, cols = np.nonzero(peaks)
    candidates = []
    for iy, ix in zip(rows.tolist(), cols.tolist()):
        cx, cy, yaw = _refine(occ, spec, iy, ix)
        candidates.append((-float(s[iy, ix]), iy, ix, cx, cy, yaw))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    kept = []
    for neg_conf, _, _, cx, cy, yaw in candidates:
        if any(math.hypot(cx - kx, cy - ky) <= v.nms_radius for _, kx, ky, _ in kept):
            continue
        kept.append((-neg_conf, cx, cy, yaw))
    h = v.template_dims[2]
    return [Detection(Box3D((cx, cy, h / 2.0), v.template_dims, yaw), min(max(conf, 0.0), 1.0))
            for conf, cx, cy, yaw in kept]


def _forward_xyz(ego_xyz, cav_source_xyz, g_ego, g_cavs, v, ego_grid=None):
    if len(cav_source_xyz) != len(g_cavs):
        raise ShapeMismatchError(f"CAV点云数 {len(cav_source_xyz)} 与位姿数 {len(g_cavs)} 不符")
    spec = v.grid_spec
    projected = [transform_points(htm_extract(g_ego, g), xyz) for xyz, g in zip(cav_source_xyz, g_cavs)]
    f_ego = ego_grid if ego_grid is not None else FeatureGrid(spec, _splat(ego_xyz, v))
    f_cavs = [FeatureGrid(spec, _splat(q, v)) for q in projected]
    fused = fuse(f_ego, f_cavs, v)
    grids = FeatureGrids(f_ego, f_cavs, fused)
    return score_map(fused, v), grids, projected


def forward(p_ego: PointCloud, p_cavs: Sequence[PointCloud], g_ego: Pose6D, g_cavs: Sequence[Pose6D],
            v: PerceptionVariant, ego_grid: Optional[FeatureGrid] = None):
    """
    协同感知前向：投影CAV点云 -> 编码 -> 融合 -> 打分

    Args:
        p_ego: 自车坐标系点云
        p_cavs: 各CAV自身坐标系点云
        g_ego, g_cavs: GPS位姿
        v: 感知变体
        ego_grid: 可选的已编码自车网格（与CAV位姿无关，可跨迭代复用）

    Returns:
        (score, FeatureGrids, PipelineTape)
    """
    source = [p.xyz for p in p_cavs]
    score, grids, projected = _forward_xyz(p_ego.xyz, source, g_ego, list(g_cavs), v, ego_grid)
    spec = v.grid_spec
    active = []
    for q in projected:
        inside = ((q[:, 0] >= spec.x_range[0]) & (q[:, 0] < spec.x_range[1])
                  & (q[:, 1] >= spec.y_range[0]) & (q[:, 1] < spec.y_range[1]))
        active.append(int(np.count_nonzero(inside & (z_gate(q[:, 2], v)[0] > 0.0))))
    tape = PipelineTape(v, g_ego, list(g_cavs), p_ego.xyz, source, projected, grids, score, active)
    return score, grids, tape


def backward(tape: PipelineTape, upstream: Upstream) -> np.ndarray:
    """返回 (n_cavs, 6) 的标量对CAV位姿梯度，角度分量按度"""
    v = tape.variant
    n = len(tape.cav_poses)
    grid_shape = tape.grids.fused.data.shape
    feat_grads = [np.zeros(grid_shape) for _ in range(n)]

    if upstream.score is not None:
        if upstream.score.shape != tape.score.shape:
            raise ShapeMismatchError(f"score 梯度形状 {upstream.score.shape} 与 {tape.score.shape} 不符")
        fused_grad = np.zeros(grid_shape)
        fused_grad[0] = upstream.score * v.alpha * np.exp(-v.alpha * tape.grids.fused.occupancy)
        for i, g in enumerate(_fuse_backward(tape.grids, fused_grad, v)):
            feat_grads[i] += g
    if upstream.cav_features is not None:
        if len(upstream.cav_features) != n:
            raise ShapeMismatchError(f"特征梯度数量 {len(upstream.cav_features)} 与 CAV 数 {n} 不符")
        for i, g in enumerate(upstream.cav_features):
            if g is None:
                continue
            if g.shape != grid_shape:
                raise ShapeMismatchError(f"特征梯度形状 {g.shape} 与 {grid_shape} 不符")
            feat_grads[i] += g
    if upstream.cav_points is not None and len(upstream.cav_points) != n:
        raise ShapeMismatchError(f"点梯度数量 {len(upstream.cav_points)} 与 CAV 数 {n} 不符")

    out = np.zeros((n, 6))
    for i in range(n):
        q = tape.cav_projected_xyz[i]
        d_points = _splat_backward(q, feat_grads[i], v)
        if upstream.cav_points is not None and upstream.cav_points[i] is not None:
            extra = upstream.cav_points[i]
            if extra.shape != q.shape:
                raise ShapeMismatchError(f"点梯度形状 {extra.shape} 与 {q.shape} 不符")
            d_points = d_points + extra
        if q.shape[0] == 0:
            continue
        jac = _jacobian_xyz(tape.ego_pose, tape.cav_poses[i], tape.cav_source_xyz[i])
        out[i] = np.einsum("mk,mkj->j", d_points, jac)
    return out


def export_grid_csv(values: np.ndarray, spec: GridSpec) -> str:
    """行优先导出单通道网格，首行声明范围与单元尺寸"""
    if values.shape != spec.shape:
        raise ShapeMismatchError(f"网格形状 {values.shape} 与 {spec.shape} 不符")
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION},x_min={spec.x_range[0]},x_max={spec.x_range[1]},y_min={spec.y_range[0]},"
              f"y_max={spec.y_range[1]},cell_size={spec.cell_size},rows={spec.ny},cols={spec.nx}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in values:
        writer.writerow([f"{v:.6f}" for v in row])
    return buf.getvalue()
