# -*- coding: utf-8 -*-
"""
GPS位姿对抗攻击
rba / fgsm / ifgsm / pgd / paa / advgps / max_bias 共用同一个接口 run_attack(scene, cfg)

迭代方法在扰动空间维护 delta：delta <- clip(delta + step * sign(grad), ±ε)，
对抗位姿 = 原始位姿 + delta，再经 project_to_budget 确认
迭代结束后返回 K 轮中目标值最大的 delta
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError
from .geometry import Pose6D, check_gimbal_margin, htm_extract, transform_points
from .losses import (
    ObjectiveWeights,
    PerturbationBudget,
    appearance_discrepancy_and_grad,
    clip_delta,
    detection_loss_and_grad,
    mmd_squared_and_grad,
    objective,
    project_to_budget,
    rasterize_boxes,
    within_budget,
)
from .perception import (
    VARIANT_B,
    PerceptionVariant,
    Upstream,
    backward,
    encode,
    forward,
)
from .scene import SCHEMA_VERSION, Scene, check_schema_version, gt_boxes_in_ego

logger = logging.getLogger("core.attack")

METHODS = ("rba", "fgsm", "ifgsm", "pgd", "paa", "advgps", "max_bias")
GRADIENT_METHODS = ("fgsm", "ifgsm", "pgd", "paa", "advgps")

NAMED_MASKS: Dict[str, Tuple[bool, ...]] = {
    "xyz": (True, True, True, False, False, False),
    "all": (True,) * 6,
    "x": (True, False, False, False, False, False),
    "y": (False, True, False, False, False, False),
    "z": (False, False, True, False, False, False),
    "theta_x": (False, False, False, True, False, False),
    "theta_y": (False, False, False, False, True, False),
    "theta_z": (False, False, False, False, False, True),
}
SWEEP_PARAMS = ("x", "y", "z", "theta_x", "theta_y", "theta_z")


def resolve_mask(mask: Union[str, Sequence[bool]]) -> Tuple[bool, ...]:
    if isinstance(mask, str):
        if mask not in NAMED_MASKS:
            raise ConfigError("attack.mask", f"未知掩码 {mask!r}，可选 {sorted(NAMED_MASKS)}")
        return NAMED_MASKS[mask]
    bits = tuple(bool(b) for b in mask)
    if len(bits) != 6:
        raise ConfigError("attack.mask", "掩码需要6个布尔值")
    return bits


def mask_name(bits: Sequence[bool]) -> str:
    for name, value in NAMED_MASKS.items():
        if tuple(bits) == value:
            return name
    return "".join("1" if b else "0" for b in bits)


@dataclass(frozen=True)
class AttackConfig:
    method: str
    iterations: int = 10
    step_sizes: Optional[Tuple[float, ...]] = None
    budget: PerturbationBudget = field(default_factory=PerturbationBudget)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    mask: Union[str, Tuple[bool, ...]] = "all"
    variant: PerceptionVariant = VARIANT_B
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("attack.method", f"未知攻击方法 {self.method!r}，可选 {METHODS}")
        if int(self.iterations) < 1:
            raise ConfigError("attack.iterations", "至少为1")
        object.__setattr__(self, "mask", resolve_mask(self.mask))
        if self.step_sizes is not None:
            steps = tuple(float(s) for s in self.step_sizes)
            if len(steps) != 6 or min(steps) <= 0:
                raise ConfigError("attack.step_sizes", "需要6个正数")
            object.__setattr__(self, "step_sizes", steps)

    @property
    def mask_name(self) -> str:
        return mask_name(self.mask)

    def steps(self) -> np.ndarray:
        if self.step_sizes is not None:
            return np.asarray(self.step_sizes)
        return self.budget.as_vector() / self.iterations


@dataclass(frozen=True)
class TraceEntry:
    iter: int
    d_app: float
    d_dist: float
    d_task: float
    objective: float

    def to_dict(self) -> Dict[str, float]:
        return {"iter": self.iter, "d_app": self.d_app, "d_dist": self.d_dist,
                "d_task": self.d_task, "objective": self.objective}


@dataclass(frozen=True)
class CavPerturbation:
    agent_id: str
    original_pose: Pose6D
    adv_pose: Pose6D
    delta: Tuple[float, ...]
    within_budget: Tuple[bool, ...]


@dataclass(frozen=True)
class StealthReport:
    max_displacement: float
    bound: float
    ok: bool


@dataclass
class AttackResult:
    scene_id: str
    method: str
    mask: Tuple[bool, ...]
    budget: PerturbationBudget
    weights: ObjectiveWeights
    variant: str
    seed: int
    per_cav: List[CavPerturbation]
    trace: List[TraceEntry]
    stealth: StealthReport

    @property
    def mask_name(self) -> str:
        return mask_name(self.mask)

    @property
    def adv_poses(self) -> List[Pose6D]:
        return [c.adv_pose for c in self.per_cav]

    @property
    def deltas(self) -> np.ndarray:
        return np.array([c.delta for c in self.per_cav]).reshape(-1, 6)

    @property
    def budget_ok(self) -> bool:
        return all(all(c.within_budget) for c in self.per_cav)


@dataclass(frozen=True)
class LossTerms:
    d_app: float
    d_dist: float
    d_task: float
    objective: float


class AttackContext:
    """
    单场景攻击上下文
    缓存自车网格、真值热图以及原始位姿下的CAV投影点和特征网格（D_app / D_dist 的参照）
    """

    def __init__(self, scene: Scene, variant: PerceptionVariant):
        self.scene = scene
        self.variant = variant
        self.ego_cloud = scene.clouds["ego"]
        self.cav_clouds = scene.cav_clouds()
        self.ego_grid = encode(self.ego_cloud, variant)
        self.heatmap = rasterize_boxes(gt_boxes_in_ego(scene), variant.grid_spec)
        _, grids, tape = self._forward(list(scene.cav_poses))
        self.original_points = tape.cav_projected_xyz
        self.original_grids = grids.cavs
        self.original_active = tape.cav_active_counts

    def _forward(self, poses: Sequence[Pose6D]):
        return forward(self.ego_cloud, self.cav_clouds, self.scene.ego_pose, poses, self.variant, self.ego_grid)

    def evaluate(self, poses: Sequence[Pose6D], weights: ObjectiveWeights, with_grad: bool = True):
        """
        Returns:
            (LossTerms, (n_cavs, 6) 梯度或 None, 每个CAV落入网格的点数)
        """
        score, grids, tape = self._forward(poses)
        d_app, g_points = appearance_discrepancy_and_grad(self.original_points, tape.cav_projected_xyz)
        d_dist, g_feats = mmd_squared_and_grad(self.original_grids, grids.cavs)
        d_task, g_score = detection_loss_and_grad(score, self.heatmap)
        terms = LossTerms(d_app, d_dist, d_task, objective(d_app, d_dist, d_task, weights))
        if not with_grad:
            return terms, None, tape.cav_active_counts
        upstream = Upstream(
            score=weights.xi * g_score if weights.xi > 0 else None,
            cav_features=[weights.omega * g for g in g_feats] if weights.omega > 0 else None,
            cav_points=[weights.lambda_ * g for g in g_points] if weights.lambda_ > 0 else None,
        )
        return terms, backward(tape, upstream), tape.cav_active_counts


def effective_weights(cfg: AttackConfig) -> ObjectiveWeights:
    """基线方法只优化任务差异"""
    if cfg.method == "advgps":
        return cfg.weights
    return ObjectiveWeights(0.0, 0.0, cfg.weights.xi)


def attack_rng(cfg: AttackConfig, scene: Scene) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, scene.seed, scene.index])


def _apply(originals: Sequence[Pose6D], deltas: np.ndarray, budget: PerturbationBudget) -> List[Pose6D]:
    return [project_to_budget(g, g.offset(d), budget) for g, d in zip(originals, deltas)]


def _signs(grad: np.ndarray, mask: np.ndarray, active: Sequence[int]) -> np.ndarray:
    signs = np.sign(grad) * mask
    for i, count in enumerate(active):
        if count == 0:
            signs[i] = 0.0
    return signs


def gradient_step(scene: Scene, poses: Sequence[Pose6D], cfg: AttackConfig,
                  losses_enabled: Tuple[bool, bool, bool] = (True, True, True),
                  context: Optional[AttackContext] = None) -> np.ndarray:
    """
    返回 sign(∂objective/∂pose)，形状 (n_cavs, 6)，sign(0)=0，被掩码的参数为 0
    没有点落入网格的CAV整行为 0
    """
    context = context or AttackContext(scene, cfg.variant)
    w = cfg.weights
    enabled = ObjectiveWeights(*(v if on else 0.0 for v, on in zip((w.lambda_, w.omega, w.xi), losses_enabled)))
    _, grad, active = context.evaluate(poses, enabled)
    return _signs(grad, np.asarray(cfg.mask, dtype=np.float64), active)


def needs_stationary_kick(cfg: AttackConfig) -> bool:
    """只有 advgps 且启用了 D_app 或 D_dist 时才需要随机起步"""
    w = effective_weights(cfg)
    return cfg.method == "advgps" and (w.lambda_ > 0.0 or w.omega > 0.0)


def _kick_stationary(signs: np.ndarray, deltas: np.ndarray, active: Sequence[int], mask: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    # D_app 与 D_dist 在未扰动位姿处取得精确最小值，梯度为 0，需要一个随机方向起步
    out = signs.copy()
    for i in range(signs.shape[0]):
        if active[i] > 0 and not np.any(deltas[i] * mask) and not np.any(signs[i]):
            out[i] = rng.choice([-1.0, 1.0], size=6) * mask
    return out


def _iterate(scene: Scene, cfg: AttackConfig, init: np.ndarray, steps: np.ndarray, iterations: int,
             rng: np.random.Generator):
    """
    符号梯度迭代，返回 trace 中目标值最大的那一轮的 delta（并列取最早的一轮）
    trace 仍记录全部 K 轮
    """
    context = AttackContext(scene, cfg.variant)
    weights = effective_weights(cfg)
    kick = needs_stationary_kick(cfg)
    mask = np.asarray(cfg.mask, dtype=np.float64)
    originals = list(scene.cav_poses)
    deltas = clip_delta(np.where(mask > 0, init, 0.0), cfg.budget)
    _, grad, active = context.evaluate(_apply(originals, deltas, cfg.budget), weights)

    trace = []
    best, best_objective = deltas, -math.inf
    for k in range(iterations):
        signs = _signs(grad, mask, active)
        if kick:
            signs = _kick_stationary(signs, deltas, active, mask, rng)
        deltas = clip_delta(deltas + steps * signs, cfg.budget)
        poses = _apply(originals, deltas, cfg.budget)
        last = k == iterations - 1
        terms, grad, active = context.evaluate(poses, weights, with_grad=not last)
        trace.append(TraceEntry(k, terms.d_app, terms.d_dist, terms.d_task, terms.objective))
        if terms.objective > best_objective:
            best, best_objective = deltas, terms.objective
        logger.debug(f"scene={scene.scene_id} method={cfg.method} iter={k} objective={terms.objective:.6f}")
    return best, trace


def _single_shot(scene: Scene, cfg: AttackConfig, deltas: np.ndarray):
    context = AttackContext(scene, cfg.variant)
    poses = _apply(list(scene.cav_poses), deltas, cfg.budget)
    terms, _, _ = context.evaluate(poses, effective_weights(cfg), with_grad=False)
    return deltas, [TraceEntry(0, terms.d_app, terms.d_dist, terms.d_task, terms.objective)]


def random_bias(rng: np.random.Generator, budget: PerturbationBudget, mask: Sequence[bool], n: int) -> np.ndarray:
    """每个未屏蔽参数独立取 [-ε, +ε] 上的均匀随机偏置，形状 (n, 6)"""
    bound = budget.as_vector()
    draws = rng.uniform(-bound, bound, size=(n, 6))
    return clip_delta(np.where(np.asarray(mask, dtype=bool), draws, 0.0), budget)


def rba(scene: Scene, cfg: AttackConfig) -> AttackResult:
    deltas = random_bias(attack_rng(cfg, scene), cfg.budget, cfg.mask, scene.n_cavs)
    return _finish(scene, cfg, *_single_shot(scene, cfg, deltas))


def max_bias(scene: Scene, cfg: AttackConfig) -> AttackResult:
    """固定的最大位置偏置：未屏蔽的 x/y/z 取 +ε，角度不动"""
    bound = cfg.budget.as_vector()
    positional = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]) * np.asarray(cfg.mask, dtype=np.float64)
    deltas = np.tile(bound * positional, (scene.n_cavs, 1))
    return _finish(scene, cfg, *_single_shot(scene, cfg, deltas))


def fgsm(scene: Scene, cfg: AttackConfig) -> AttackResult:
    init = np.zeros((scene.n_cavs, 6))
    return _finish(scene, cfg, *_iterate(scene, cfg, init, cfg.budget.as_vector(), 1, attack_rng(cfg, scene)))


def ifgsm(scene: Scene, cfg: AttackConfig) -> AttackResult:
    init = np.zeros((scene.n_cavs, 6))
    return _finish(scene, cfg, *_iterate(scene, cfg, init, cfg.steps(), cfg.iterations, attack_rng(cfg, scene)))


def pgd(scene: Scene, cfg: AttackConfig) -> AttackResult:
    rng = attack_rng(cfg, scene)
    bound = cfg.budget.as_vector()
    init = rng.uniform(-bound, bound, size=(scene.n_cavs, 6))
    return _finish(scene, cfg, *_iterate(scene, cfg, init, cfg.steps(), cfg.iterations, rng))


def paa(scene: Scene, cfg: AttackConfig) -> AttackResult:
    """位置篡改攻击：与 pgd 相同，但只允许改动 x/y/z"""
    result = pgd(scene, replace(cfg, mask="xyz"))
    result.method = "paa"
    return result


def advgps(scene: Scene, cfg: AttackConfig) -> AttackResult:
    init = np.zeros((scene.n_cavs, 6))
    return _finish(scene, cfg, *_iterate(scene, cfg, init, cfg.steps(), cfg.iterations, attack_rng(cfg, scene)))


_DISPATCH = {
    "rba": rba, "fgsm": fgsm, "ifgsm": ifgsm, "pgd": pgd,
    "paa": paa, "advgps": advgps, "max_bias": max_bias,
}


def run_attack(scene: Scene, cfg: AttackConfig) -> AttackResult:
    for pose in scene.cav_poses:
        check_gimbal_margin(pose)
    return _DISPATCH[cfg.method](scene, cfg)


def stealth_report(scene: Scene, adv_poses: Sequence[Pose6D], budget: PerturbationBudget,
                   variant: PerceptionVariant) -> StealthReport:
    """
    对抗位姿引起的最大点位移，与 ‖(ε_xy, ε_xy, ε_z)‖ + (π/180)·ε_θ·√3·R_max 比较
    只统计原始投影落在网格内的点，R_max 取这些点到所属CAV的最大距离
    """
    spec = variant.grid_spec
    max_disp = 0.0
    r_max = 0.0
    for cloud, g_ori, g_adv in zip(scene.cav_clouds(), scene.cav_poses, adv_poses):
        if len(cloud) == 0:
            continue
        q_ori = transform_points(htm_extract(scene.ego_pose, g_ori), cloud.xyz)
        inside = ((q_ori[:, 0] >= spec.x_range[0]) & (q_ori[:, 0] < spec.x_range[1])
                  & (q_ori[:, 1] >= spec.y_range[0]) & (q_ori[:, 1] < spec.y_range[1]))
        if not np.any(inside):
            continue
        q_adv = transform_points(htm_extract(scene.ego_pose, g_adv), cloud.xyz)
        max_disp = max(max_disp, float(np.max(np.linalg.norm(q_adv[inside] - q_ori[inside], axis=1))))
        r_max = max(r_max, float(np.max(np.linalg.norm(cloud.xyz[inside], axis=1))))
    bound = (math.sqrt(2.0 * budget.eps_xy ** 2 + budget.eps_z ** 2)
             + math.radians(budget.eps_theta) * math.sqrt(3.0) * r_max)
    return StealthReport(max_disp, bound, max_disp <= bound + 1e-9)


def _finish(scene: Scene, cfg: AttackConfig, deltas: np.ndarray, trace: List[TraceEntry]) -> AttackResult:
    originals = list(scene.cav_poses)
    adv = _apply(originals, deltas, cfg.budget)
    per_cav = [
        CavPerturbation(f"cav{i}", g, a, tuple(float(v) for v in d), tuple(within_budget(d, cfg.budget)))
        for i, (g, a, d) in enumerate(zip(originals, adv, deltas))
    ]
    result = AttackResult(
        scene_id=scene.scene_id, method=cfg.method, mask=cfg.mask, budget=cfg.budget,
        weights=cfg.weights, variant=cfg.variant.name, seed=cfg.seed, per_cav=per_cav, trace=trace,
        stealth=stealth_report(scene, adv, cfg.budget, cfg.variant),
    )
    if not result.stealth.ok:
        logger.warning(f"scene={scene.scene_id} method={cfg.method} 位移 {result.stealth.max_displacement:.4f} "
                       f"超过隐蔽界 {result.stealth.bound:.4f}")
    return result


def attack_result_to_dict(result: AttackResult) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": result.scene_id,
        "method": result.method,
        "mask": result.mask_name,
        "mask_bits": list(result.mask),
        "budget": result.budget.to_dict(),
        "weights": result.weights.to_dict(),
        "variant": result.variant,
        "seed": result.seed,
        "per_cav": [
            {
                "agent_id": c.agent_id,
                "original_pose": c.original_pose.to_list(),
                "adv_pose": c.adv_pose.to_list(),
                "delta": list(c.delta),
                "within_budget": list(c.within_budget),
            }
            for c in result.per_cav
        ],
        "trace": [t.to_dict() for t in result.trace],
        "stealth": {"max_displacement": result.stealth.max_displacement,
                    "bound": result.stealth.bound, "ok": result.stealth.ok},
    }


def attack_result_from_dict(data: Dict[str, Any]) -> AttackResult:
    check_schema_version(data.get("schema_version"))
    per_cav = [
        CavPerturbation(
            c["agent_id"], Pose6D.from_array(c["original_pose"]), Pose6D.from_array(c["adv_pose"]),
            tuple(float(v) for v in c["delta"]), tuple(bool(v) for v in c["within_budget"]),
        )
        for c in data["per_cav"]
    ]
    stealth = data["stealth"]
    return AttackResult(
        scene_id=data["scene_id"],
        method=data["method"],
        mask=resolve_mask(data.get("mask_bits", data["mask"])),
        budget=PerturbationBudget.from_dict(data["budget"]),
        weights=ObjectiveWeights.from_dict(data["weights"]),
        variant=data["variant"],
        seed=int(data["seed"]),
        per_cav=per_cav,
        trace=[TraceEntry(int(t["iter"]), t["d_app"], t["d_dist"], t["d_task"], t["objective"]) for t in data["trace"]],
        stealth=StealthReport(stealth["max_displacement"], stealth["bound"], bool(stealth["ok"])),
    )
