# -*- coding: utf-8 -*-
"""
车辆三维框与鸟瞰图(BEV)多边形工具
旋转矩形求交采用 Sutherland-Hodgman 逐边裁剪，面积使用鞋带公式
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import DEG, HomTransform, wrap_angle

Point2 = Tuple[float, float]


@dataclass(frozen=True)
class Box3D:
    center: Tuple[float, float, float]
    dims: Tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center 与 dims 需要3个元素")
        if not all(math.isfinite(v) for v in center + dims + (float(self.yaw),)):
            raise ValueError("框参数含非有限值")
        if min(dims) <= 0.0:
            raise ValueError(f"退化框: dims={dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def bev_area(self) -> float:
        return self.dims[0] * self.dims[1]

    def to_dict(self) -> dict:
        return {"center": list(self.center), "dims": list(self.dims), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, data: dict) -> "Box3D":
        return cls(tuple(data["center"]), tuple(data["dims"]), data["yaw"])


def footprint(box: Box3D, margin: float = 0.0) -> List[Point2]:
    """逆时针顺序的四个BEV角点"""
    cx, cy = box.center[0], box.center[1]
    hl = box.dims[0] / 2.0 + margin
    hw = box.dims[1] / 2.0 + margin
    c, s = math.cos(box.yaw * DEG), math.sin(box.yaw * DEG)
    corners = [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)]
    return [(cx + u * c - v * s, cy + u * s + v * c) for u, v in corners]


def polygon_area(poly: Sequence[Point2]) -> float:
    if len(poly) < 3:
        return 0.0
    total = 0.0
    for (x1, y1), (x2, y2) in zip(poly, list(poly[1:]) + [poly[0]]):
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def _side(p: Point2, a: Point2, b: Point2) -> float:
    # >0 在有向边 a->b 左侧（逆时针多边形的内侧）
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])


def _segment_line_intersection(s: Point2, t: Point2, ds: float, dt: float) -> Point2:
    k = ds / (ds - dt)
    return (s[0] + k * (t[0] - s[0]), s[1] + k * (t[1] - s[1]))


def clip_convex(subject: Sequence[Point2], clip: Sequence[Point2]) -> List[Point2]:
    """用逆时针凸多边形 clip 裁剪 subject，返回交集多边形"""
    output = list(subject)
    for a, b in zip(clip, list(clip[1:]) + [clip[0]]):
        if len(output) < 3:
            return []
        current, output = output, []
        sides = [_side(p, a, b) for p in current]
        for i, s in enumerate(current):
            t = current[(i + 1) % len(current)]
            ds, dt = sides[i], sides[(i + 1) % len(current)]
            if ds >= 0.0:
                output.append(s)
            if (ds >= 0.0) != (dt >= 0.0) and ds != dt:
                output.append(_segment_line_intersection(s, t, ds, dt))
    return output if len(output) >= 3 else []


def footprint_intersection_area(a: Box3D, b: Box3D, margin: float = 0.0) -> float:
    poly = clip_convex(footprint(a, margin), footprint(b, margin))
    return max(polygon_area(poly), 0.0)


def points_in_footprint(box: Box3D, xy: np.ndarray) -> np.ndarray:
    """xy (n, 2) 是否落在框的BEV投影内（含边界）"""
    c, s = math.cos(box.yaw * DEG), math.sin(box.yaw * DEG)
    dx = xy[:, 0] - box.center[0]
    dy = xy[:, 1] - box.center[1]
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= box.dims[0] / 2.0) & (np.abs(v) <= box.dims[1] / 2.0)


def box_to_frame(box: Box3D, t: HomTransform) -> Box3D:
    """把框变换到另一坐标系，航向角叠加变换的水平朝向"""
    center = t.rotation @ np.asarray(box.center) + t.translation
    heading = math.degrees(math.atan2(t.rotation[1, 0], t.rotation[0, 0]))
    return Box3D(tuple(center), box.dims, box.yaw + heading)
