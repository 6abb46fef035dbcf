# -*- coding: utf-8 -*-
"""
检测质量评估
BEV旋转IoU、按置信度的贪心匹配、全点插值AP，以及 攻击 × 感知变体 的实验编排
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .attack import AttackConfig, run_attack
from .boxes import Box3D, footprint_intersection_area
from .geometry import Pose6D
from .perception import Detection, PerceptionVariant, detect, forward
from .scene import SCHEMA_VERSION, Scene, gt_boxes_in_ego

logger = logging.getLogger("core.evaluation")

IOU_THRESHOLD = 0.5
FUSION_MODES = ("cooperative", "no_fusion")


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float

    def __post_init__(self):
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise ValueError(f"PR点越界: {self.precision}, {self.recall}")


@dataclass(frozen=True)
class MatchResult:
    order: List[int]
    labels: List[bool]
    confidences: List[float]
    matched_gt: List[int]
    n_gt: int

    @property
    def tp(self) -> int:
        return sum(self.labels)

    @property
    def fp(self) -> int:
        return len(self.labels) - self.tp


def iou_bev(a: Box3D, b: Box3D) -> float:
    if a == b:
        return 1.0
    inter = footprint_intersection_area(a, b)
    union = a.bev_area + b.bev_area - inter
    return min(max(inter / union, 0.0), 1.0)


def match_detections(dets: Sequence[Detection], gts: Sequence[Box3D], thresh: float = IOU_THRESHOLD) -> MatchResult:
    """置信度降序（同分按输入顺序）逐个匹配 IoU 最高且未被占用的真值"""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    labels, matched = [], []
    for i in order:
        best, best_iou = -1, thresh
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = iou_bev(dets[i].box, gt)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
        labels.append(best >= 0)
        matched.append(best)
    return MatchResult(order, labels, [dets[i].confidence for i in order], matched, len(gts))


def average_precision(labels: Sequence[bool], confidences: Sequence[float], n_gt: int) -> Tuple[float, List[PRPoint]]:
    """
    全点插值AP：precision 包络曲线下的面积
    n_gt=0 时无检测记为 1，有检测记为 0
    """
    if n_gt < 0:
        raise ValueError("n_gt 不能为负")
    if n_gt == 0:
        return (1.0 if len(labels) == 0 else 0.0), []
    if len(labels) == 0:
        return 0.0, []

    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    tp = np.asarray(labels, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    rec = tp_cum / float(n_gt)
    prec = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    i = np.where(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))
    curve = [PRPoint(float(p), float(r)) for p, r in zip(prec, rec)]
    return min(max(ap, 0.0), 1.0), curve


@dataclass(frozen=True)
class Condition:
    name: str
    method: str = "none"
    mask: str = "-"
    variant: str = "A"
    fusion: str = "cooperative"
    poses_by_scene: Optional[Dict[str, List[Pose6D]]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"未知融合模式 {self.fusion}")


@dataclass
class ConditionReport:
    name: str
    method: str
    mask: str
    variant: str
    fusion: str
    ap: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    pr_curve: List[PRPoint]
    overlays: List[Dict[str, Any]]


@dataclass
class EvalReport:
    conditions: List[ConditionReport]

    def get(self, name: str) -> ConditionReport:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def ap(self, name: str) -> float:
        return self.get(name).ap


def _in_range(box: Box3D, variant: PerceptionVariant) -> bool:
    return variant.grid_spec.contains(box.center[0], box.center[1])


def detect_scene(scene: Scene, variant: PerceptionVariant, cav_poses: Optional[Sequence[Pose6D]] = None,
                 fusion: str = "cooperative") -> List[Detection]:
    """在评估变体上跑一次前向与检测，丢弃评估范围外的检测"""
    if fusion == "no_fusion":
        clouds, poses = [], []
    else:
        clouds = scene.cav_clouds()
        poses = list(cav_poses) if cav_poses is not None else list(scene.cav_poses)
    score, grids, _ = forward(scene.clouds["ego"], clouds, scene.ego_pose, poses, variant)
    return [d for d in detect(score, grids.fused, variant) if _in_range(d.box, variant)]


def evaluate_condition(scenes: Sequence[Scene], condition: Condition, variant: PerceptionVariant) -> ConditionReport:
    """逐场景检测并匹配，跨场景汇总后计算AP"""
    labels: List[bool] = []
    confidences: List[float] = []
    n_gt = 0
    overlays = []
    for scene in scenes:
        poses = None
        if condition.poses_by_scene is not None:
            poses = condition.poses_by_scene.get(scene.scene_id)
        dets = detect_scene(scene, variant, poses, condition.fusion)
        gts = [b for b in gt_boxes_in_ego(scene) if _in_range(b, variant)]
        match = match_detections(dets, gts)
        labels.extend(match.labels)
        confidences.extend(match.confidences)
        n_gt += match.n_gt
        overlays.append({
            "scene_id": scene.scene_id,
            "gt_boxes": [b.to_dict() for b in gts],
            "detections": [
                {"box": dets[i].box.to_dict(), "confidence": dets[i].confidence, "tp": tp}
                for i, tp in zip(match.order, match.labels)
            ],
        })

    ap, curve = average_precision(labels, confidences, n_gt)
    tp = sum(labels)
    report = ConditionReport(condition.name, condition.method, condition.mask, variant.name, condition.fusion,
                             ap, tp, len(labels) - tp, n_gt - tp, n_gt, curve, overlays)
    logger.info(f"condition={condition.name} variant={variant.name} ap={ap:.6f} tp={tp} fp={report.fp} fn={report.fn}")
    return report


def craft_condition(scenes: Sequence[Scene], cfg: AttackConfig, eval_variant: PerceptionVariant,
                    fusion: str = "cooperative", name: Optional[str] = None) -> Condition:
    poses = {}
    for scene in tqdm(scenes, desc=f"{cfg.method}/{cfg.mask_name}", leave=False):
        poses[scene.scene_id] = run_attack(scene, cfg).adv_poses
    return Condition(name or f"{cfg.method}_{cfg.mask_name}", cfg.method, cfg.mask_name,
                     eval_variant.name, fusion, poses)


def run_experiment(scenes: Sequence[Scene], attack_cfgs: Sequence[AttackConfig], eval_variant: PerceptionVariant,
                   fusion: str = "cooperative") -> EvalReport:
    """
    no_attack（以及协同模式下的 no_fusion 基线）加上每个攻击配置各一个条件
    攻击在 cfg.variant 上生成，在 eval_variant 上评估；两者不同即为黑盒迁移
    """
    conditions = [Condition("no_attack", variant=eval_variant.name, fusion=fusion)]
    if fusion == "cooperative":
        conditions.append(Condition("no_fusion", variant=eval_variant.name, fusion="no_fusion"))
    for cfg in attack_cfgs:
        conditions.append(craft_condition(scenes, cfg, eval_variant, fusion))
    return EvalReport([evaluate_condition(scenes, c, eval_variant) for c in conditions])


CSV_COLUMNS = ("condition", "method", "mask", "variant", "AP", "TP", "FP", "FN")


def report_rows(report: EvalReport) -> List[List[str]]:
    return [[c.name, c.method, c.mask, c.variant, f"{c.ap:.6f}", str(c.tp), str(c.fp), str(c.fn)]
            for c in report.conditions]


def report_to_dict(report: EvalReport, include_overlays: bool = True) -> Dict[str, Any]:
    conditions = []
    for c in report.conditions:
        item = {
            "condition": c.name, "method": c.method, "mask": c.mask, "variant": c.variant, "fusion": c.fusion,
            "ap": c.ap, "tp": c.tp, "fp": c.fp, "fn": c.fn, "n_gt": c.n_gt,
            "pr_curve": [{"precision": p.precision, "recall": p.recall} for p in c.pr_curve],
        }
        if include_overlays:
            item["overlays"] = c.overlays
        conditions.append(item)
    return {"schema_version": SCHEMA_VERSION, "conditions": conditions}
