# -*- coding: utf-8 -*-
"""
合成协同驾驶场景
确定性地放置自车、CAV与其他车辆，并按传感器朝向对车辆表面进行类激光雷达采样
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import Box3D, box_to_frame, footprint_intersection_area
from .errors import ConfigError, PlacementError, SchemaVersionError
from .geometry import DEG, Pose6D, PointCloud, invert, pose_to_matrix, transform_points

SCHEMA_VERSION = "1.0"
MAX_PLACEMENT_ATTEMPTS = 1000
MAX_CAVS = 5

logger = logging.getLogger("core.scene")


@dataclass(frozen=True)
class SceneConfig:
    n_scenes: int = 20
    n_vehicles: Tuple[int, int] = (6, 12)
    n_cavs: Tuple[int, int] = (2, 4)
    vehicle_dims: Tuple[float, float, float] = (4.5, 2.0, 1.5)
    dims_jitter: float = 0.1
    noise_sigma: float = 0.02
    density_at_10m: float = 4.0
    seed: int = 0
    sensor_height: float = 1.9
    lidar_range: float = 50.0
    placement_margin: float = 1.0
    cav_spread: Tuple[float, float] = (80.0, 25.0)
    vehicle_radius: float = 40.0
    eval_range: Tuple[float, float] = (140.0, 40.0)
    ego_jitter_xy: float = 2.0
    ego_jitter_yaw: float = 10.0
    heading_jitter: float = 10.0

    def validate(self) -> "SceneConfig":
        if isinstance(self.n_scenes, bool) or not isinstance(self.n_scenes, int):
            raise ConfigError("scene.n_scenes", f"必须为整数: {self.n_scenes!r}")
        if self.n_scenes < 0:
            raise ConfigError("scene.n_scenes", "不能为负")
        for name in ("n_vehicles", "n_cavs"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ConfigError(f"scene.{name}", f"区间无效 [{lo}, {hi}]")
        if self.n_cavs[0] < 1 or self.n_cavs[1] > MAX_CAVS:
            raise ConfigError("scene.n_cavs", f"CAV数量必须在 [1, {MAX_CAVS}] 内")
        if min(self.vehicle_dims) <= 0:
            raise ConfigError("scene.vehicle_dims", "尺寸必须为正")
        if not 0.0 <= self.dims_jitter < 1.0:
            raise ConfigError("scene.dims_jitter", "需要在 [0, 1) 内")
        if self.noise_sigma < 0:
            raise ConfigError("scene.noise_sigma", "不能为负")
        if self.density_at_10m <= 0:
            raise ConfigError("scene.density_at_10m", "必须为正")
        if self.seed < 0:
            raise ConfigError("scene.seed", "必须为非负整数")
        if self.lidar_range <= 0 or self.vehicle_radius <= 0:
            raise ConfigError("scene.lidar_range", "必须为正")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"scene.{sorted(unknown)[0]}", "未知字段")
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        try:
            return cls(**kwargs).validate()
        except TypeError as e:
            raise ConfigError("scene", str(e))


@dataclass(frozen=True)
class Scene:
    scene_id: str
    index: int
    seed: int
    ego_pose: Pose6D
    cav_poses: Tuple[Pose6D, ...]
    gt_boxes: Tuple[Box3D, ...]
    clouds: Dict[str, PointCloud] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 1 <= len(self.cav_poses) <= MAX_CAVS:
            raise ValueError(f"CAV数量 {len(self.cav_poses)} 不在 [1, {MAX_CAVS}] 内")

    @property
    def n_cavs(self) -> int:
        return len(self.cav_poses)

    def agent_pose(self, agent: str) -> Pose6D:
        if agent == "ego":
            return self.ego_pose
        return self.cav_poses[cav_index(agent)]

    def cav_clouds(self) -> List[PointCloud]:
        return [self.clouds[f"cav{i}"] for i in range(self.n_cavs)]


def agent_ids(scene: Scene) -> List[str]:
    return ["ego"] + [f"cav{i}" for i in range(scene.n_cavs)]


def cav_index(agent: str) -> int:
    if not agent.startswith("cav"):
        raise KeyError(f"未知智能体 {agent}")
    return int(agent[3:])


def _jittered_dims(cfg: SceneConfig, rng: np.random.Generator) -> Tuple[float, float, float]:
    scale = rng.uniform(1.0 - cfg.dims_jitter, 1.0 + cfg.dims_jitter, size=3)
    return tuple(float(d * s) for d, s in zip(cfg.vehicle_dims, scale))


def _lane_heading(cfg: SceneConfig, rng: np.random.Generator) -> float:
    base = 0.0 if rng.random() < 0.5 else 180.0
    return base + float(rng.uniform(-cfg.heading_jitter, cfg.heading_jitter))


def _in_eval_range(cfg: SceneConfig, x: float, y: float, dims: Sequence[float]) -> bool:
    half = dims[0] / 2.0
    return abs(x) <= cfg.eval_range[0] - half and abs(y) <= cfg.eval_range[1] - half


def _place(cfg: SceneConfig, rng: np.random.Generator, placed: List[Box3D], sampler, what: str) -> Box3D:
    margin = cfg.placement_margin / 2.0
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x, y = sampler()
        dims = _jittered_dims(cfg, rng)
        heading = _lane_heading(cfg, rng)
        if not _in_eval_range(cfg, x, y, dims):
            continue
        candidate = Box3D((x, y, dims[2] / 2.0 - cfg.sensor_height), dims, heading)
        if all(footprint_intersection_area(candidate, other, margin) <= 0.0 for other in placed):
            placed.append(candidate)
            return candidate
    raise PlacementError(f"{what} 在 {MAX_PLACEMENT_ATTEMPTS} 次尝试后仍无法放置，配置过于拥挤")


def generate_scene(cfg: SceneConfig, index: int) -> Scene:
    """按 (seed, index) 确定性生成场景（不含点云之外的随机性）"""
    rng = np.random.default_rng([cfg.seed, index, 0])
    ego_pose = Pose6D(
        float(rng.uniform(-cfg.ego_jitter_xy, cfg.ego_jitter_xy)),
        float(rng.uniform(-cfg.ego_jitter_xy, cfg.ego_jitter_xy)),
        cfg.sensor_height, 0.0, 0.0,
        float(rng.uniform(-cfg.ego_jitter_yaw, cfg.ego_jitter_yaw)),
    )
    world_from_ego = pose_to_matrix(ego_pose)
    n_cavs = int(rng.integers(cfg.n_cavs[0], cfg.n_cavs[1] + 1))
    n_vehicles = int(rng.integers(cfg.n_vehicles[0], cfg.n_vehicles[1] + 1))

    # 自车只占位，不属于真值
    placed: List[Box3D] = [Box3D((0.0, 0.0, cfg.vehicle_dims[2] / 2.0 - cfg.sensor_height), cfg.vehicle_dims, 0.0)]
    cav_boxes = []
    for i in range(n_cavs):
        def cav_sampler():
            return (float(rng.uniform(-cfg.cav_spread[0], cfg.cav_spread[0])),
                    float(rng.uniform(-cfg.cav_spread[1], cfg.cav_spread[1])))
        cav_boxes.append(_place(cfg, rng, placed, cav_sampler, f"cav{i}"))

    anchors = [(0.0, 0.0)] + [(b.center[0], b.center[1]) for b in cav_boxes]
    vehicle_boxes = []
    for j in range(n_vehicles):
        def vehicle_sampler():
            ax, ay = anchors[int(rng.integers(len(anchors)))]
            r = cfg.vehicle_radius * math.sqrt(float(rng.random()))
            phi = float(rng.uniform(-math.pi, math.pi))
            return ax + r * math.cos(phi), ay + r * math.sin(phi)
        vehicle_boxes.append(_place(cfg, rng, placed, vehicle_sampler, f"vehicle{j}"))

    gt_boxes = tuple(box_to_frame(b, world_from_ego) for b in cav_boxes + vehicle_boxes)
    cav_poses = tuple(
        Pose6D(b.center[0], b.center[1], cfg.sensor_height, 0.0, 0.0, b.yaw)
        for b in gt_boxes[:n_cavs]
    )
    scene = Scene(f"scene_{index:04d}", index, cfg.seed, ego_pose, cav_poses, gt_boxes)
    clouds = {agent: sample_lidar(scene, agent, cfg) for agent in agent_ids(scene)}
    logger.debug(f"scene={scene.scene_id} cavs={n_cavs} vehicles={n_vehicles} "
                 f"points={sum(len(c) for c in clouds.values())}")
    return replace(scene, clouds=clouds)


# 局部法向 (轴, 方向)：0 为车长方向，1 为车宽方向，2 为竖直方向
_FACES = ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0))


def _box_rotation(box: Box3D) -> np.ndarray:
    c, s = math.cos(box.yaw * DEG), math.sin(box.yaw * DEG)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def visible_faces(box: Box3D, sensor: np.ndarray) -> List[Tuple[int, float]]:
    rot = _box_rotation(box)
    center = np.asarray(box.center)
    faces = []
    for axis, sign in _FACES:
        normal = rot[:, axis] * sign
        face_center = center + normal * box.dims[axis] / 2.0
        if float(normal @ (sensor - face_center)) > 0.0:
            faces.append((axis, sign))
    return faces


def _sample_face(box: Box3D, axis: int, sign: float, count: int, rng: np.random.Generator) -> np.ndarray:
    others = [a for a in range(3) if a != axis]
    local = np.zeros((count, 3))
    local[:, axis] = sign * box.dims[axis] / 2.0
    for a in others:
        local[:, a] = rng.uniform(-0.5, 0.5, size=count) * box.dims[a]
    return local @ _box_rotation(box).T + np.asarray(box.center)


def sample_lidar(scene: Scene, agent: str, cfg: SceneConfig) -> PointCloud:
    """返回该智能体自身坐标系下的点云"""
    pose = scene.agent_pose(agent)
    own_box = None if agent == "ego" else cav_index(agent)
    agent_slot = 0 if agent == "ego" else own_box + 1
    rng = np.random.default_rng([scene.seed, scene.index, 1 + agent_slot])
    sensor = np.array([pose.x, pose.y, pose.z])

    chunks = []
    for k, box in enumerate(scene.gt_boxes):
        if k == own_box:
            continue
        rng_range = float(np.linalg.norm(np.asarray(box.center) - sensor))
        if rng_range > cfg.lidar_range:
            continue
        density = cfg.density_at_10m * (10.0 / max(rng_range, 1e-6)) ** 2
        for axis, sign in visible_faces(box, sensor):
            a, b = [box.dims[i] for i in range(3) if i != axis]
            count = max(1, int(round(density * a * b)))
            chunks.append(_sample_face(box, axis, sign, count, rng))

    if not chunks:
        return PointCloud.from_xyz(np.zeros((0, 3)), agent)
    world = np.vstack(chunks)
    if cfg.noise_sigma > 0:
        world = world + rng.normal(0.0, cfg.noise_sigma, size=world.shape)
    local = transform_points(invert(pose_to_matrix(pose)), world)
    return PointCloud.from_xyz(local, agent)


def gt_boxes_in_ego(scene: Scene) -> List[Box3D]:
    ego_from_world = invert(pose_to_matrix(scene.ego_pose))
    return [box_to_frame(b, ego_from_world) for b in scene.gt_boxes]


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "index": scene.index,
        "seed": scene.seed,
        "ego_pose": scene.ego_pose.to_list(),
        "cav_poses": [p.to_list() for p in scene.cav_poses],
        "gt_boxes": [b.to_dict() for b in scene.gt_boxes],
        "clouds": {
            agent: {"agent_id": cloud.agent_id, "points": cloud.xyz.reshape(-1).tolist()}
            for agent, cloud in scene.clouds.items()
        },
    }


def check_schema_version(found: Optional[str]):
    if not isinstance(found, str) or found.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(found, SCHEMA_VERSION)


def scene_from_dict(data: Dict[str, Any]) -> Scene:
    check_schema_version(data.get("schema_version"))
    clouds = {
        agent: PointCloud.from_xyz(np.asarray(c["points"], dtype=np.float64).reshape(-1, 3), c.get("agent_id", agent))
        for agent, c in data.get("clouds", {}).items()
    }
    return Scene(
        scene_id=data["scene_id"],
        index=int(data["index"]),
        seed=int(data["seed"]),
        ego_pose=Pose6D.from_array(data["ego_pose"]),
        cav_poses=tuple(Pose6D.from_array(p) for p in data["cav_poses"]),
        gt_boxes=tuple(Box3D.from_dict(b) for b in data["gt_boxes"]),
        clouds=clouds,
    )
