# -*- coding: utf-8 -*-
"""
基于文件的实验流水线：generate -> attack -> eval
命令行与 HTTP 模块共用这里的 cmd_* 实现

输出目录结构:
    scenes/scene_XXXX.json, scenes/manifest.json
    attacks/<method>_<mask>/scene_XXXX.json
    reports/summary.csv, reports/eval.json, reports/sweep.*, reports/ablation.*
    reports/overlays/<condition>/scene_XXXX.json, reports/score_maps/scene_XXXX_<variant>.csv
"""

import hashlib
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .attack import SWEEP_PARAMS, AttackResult, attack_result_from_dict, attack_result_to_dict, run_attack
from .errors import ConfigError, MissingInputError
from .evaluation import (
    CSV_COLUMNS,
    Condition,
    EvalReport,
    craft_condition,
    evaluate_condition,
    report_rows,
    report_to_dict,
)
from .losses import ObjectiveWeights
from .perception import export_grid_csv, forward
from .run_config import AttackSpec, RunConfig
from .scene import SCHEMA_VERSION, Scene, check_schema_version, generate_scene, scene_from_dict, scene_to_dict
from .storage import ArtifactStore

logger = logging.getLogger("core.pipeline")

SCENES_DIR = "scenes"
ATTACKS_DIR = "attacks"
REPORTS_DIR = "reports"
MANIFEST = f"{SCENES_DIR}/manifest.json"


def scene_filename(index: int) -> str:
    return f"scene_{index:04d}.json"


def cmd_generate(cfg: RunConfig, store: ArtifactStore) -> Dict[str, Any]:
    files = {}
    for index in tqdm(range(cfg.scene.n_scenes), desc="generate", leave=False):
        scene = generate_scene(cfg.scene, index)
        name = scene_filename(index)
        files[name] = store.write_json(f"{SCENES_DIR}/{name}", scene_to_dict(scene), indent=None)
    joined = "\n".join(f"{name}:{digest}" for name, digest in sorted(files.items()))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "count": len(files),
        "seed": cfg.seed,
        "scene_config": cfg.scene.to_dict(),
        "files": files,
        "digest": hashlib.sha256(joined.encode("utf-8")).hexdigest(),
    }
    store.write_json(MANIFEST, manifest)
    logger.info(f"generate count={len(files)} seed={cfg.seed} digest={manifest['digest']}")
    return manifest


def load_scenes(store: ArtifactStore) -> List[Scene]:
    manifest = store.read_json(MANIFEST)
    check_schema_version(manifest.get("schema_version"))
    return [scene_from_dict(store.read_json(f"{SCENES_DIR}/{name}")) for name in sorted(manifest["files"])]


def select_attacks(cfg: RunConfig, method: Optional[str] = None, mask: Optional[str] = None) -> List[AttackSpec]:
    """--method / --mask 覆盖配置里的攻击列表"""
    specs = list(cfg.attacks)
    if method and mask:
        return [AttackSpec(method, mask)]
    if method:
        masks = [s.mask for s in specs if s.method == method] or ["all"]
        return [AttackSpec(method, m) for m in dict.fromkeys(masks)]
    if mask:
        methods = [s.method for s in specs] or ["advgps"]
        return [AttackSpec(m, mask) for m in dict.fromkeys(methods)]
    return specs


def cmd_attack(cfg: RunConfig, store: ArtifactStore, method: Optional[str] = None, mask: Optional[str] = None,
               variant: Optional[str] = None) -> Dict[str, Any]:
    scenes = load_scenes(store)
    digests: Dict[str, Dict[str, str]] = {}
    for spec in select_attacks(cfg, method, mask):
        attack_cfg = cfg.attack_config(spec.method, spec.mask, variant=variant)
        out = digests.setdefault(spec.key, {})
        for scene in tqdm(scenes, desc=spec.key, leave=False):
            result = run_attack(scene, attack_cfg)
            out[scene.scene_id] = store.write_json(f"{ATTACKS_DIR}/{spec.key}/{scene.scene_id}.json",
                                                   attack_result_to_dict(result))
        logger.info(f"attack key={spec.key} variant={attack_cfg.variant.name} scenes={len(scenes)}")
    return {"schema_version": SCHEMA_VERSION, "results": digests}


def _matches_scene(result: AttackResult, scene: Scene) -> bool:
    """攻击结果的场景编号与原始位姿必须与当前场景一致"""
    if result.scene_id != scene.scene_id or len(result.per_cav) != scene.n_cavs:
        return False
    return all(np.allclose(c.original_pose.as_array(), g.as_array(), rtol=0.0, atol=1e-9)
               for c, g in zip(result.per_cav, scene.cav_poses))


def _load_condition(store: ArtifactStore, scenes: Sequence[Scene], spec: AttackSpec, variant: str) -> Optional[Condition]:
    directory = f"{ATTACKS_DIR}/{spec.key}"
    if not store.list_dir(directory):
        logger.warning(f"attack key={spec.key} 没有攻击结果，跳过")
        return None
    poses = {}
    for scene in scenes:
        result = attack_result_from_dict(store.read_json(f"{directory}/{scene.scene_id}.json"))
        if not _matches_scene(result, scene):
            raise MissingInputError(f"{directory}/{scene.scene_id}.json 不是针对当前场景生成的，需要重新运行 attack")
        poses[scene.scene_id] = result.adv_poses
    return Condition(spec.key, spec.method, spec.mask, variant, "cooperative", poses)


def _write_report(store: ArtifactStore, cfg: RunConfig, report: EvalReport, stem: str) -> Dict[str, str]:
    digests = {
        "csv": store.write_csv(f"{REPORTS_DIR}/{stem}.csv", CSV_COLUMNS, report_rows(report)),
        "json": store.write_json(f"{REPORTS_DIR}/{stem}.json", report_to_dict(report, include_overlays=False)),
    }
    if cfg.eval_options.get("dump_overlays", True):
        for condition in report.conditions:
            for overlay in condition.overlays:
                store.write_json(f"{REPORTS_DIR}/overlays/{stem}/{condition.name}/{overlay['scene_id']}.json",
                                 {"schema_version": SCHEMA_VERSION, **overlay})
    return digests


def _dump_score_maps(store: ArtifactStore, scenes: Sequence[Scene], cfg: RunConfig, variant_name: str):
    variant = cfg.variant(variant_name)
    for scene in scenes:
        score, _, _ = forward(scene.clouds["ego"], scene.cav_clouds(), scene.ego_pose, list(scene.cav_poses), variant)
        store.write_text(f"{REPORTS_DIR}/score_maps/{scene.scene_id}_{variant.name}.csv",
                         export_grid_csv(score, variant.grid_spec))


def sweep_params(sweep: str) -> Sequence[str]:
    if sweep == "all":
        return SWEEP_PARAMS
    if sweep not in SWEEP_PARAMS:
        raise ConfigError("sweep", f"未知参数 {sweep!r}，可选 {SWEEP_PARAMS} 或 all")
    return (sweep,)


def ablation_weights(w: ObjectiveWeights) -> Dict[str, ObjectiveWeights]:
    return {
        "d_app_only": ObjectiveWeights(w.lambda_, 0.0, 0.0),
        "d_dist_only": ObjectiveWeights(0.0, w.omega, 0.0),
        "d_task_only": ObjectiveWeights(0.0, 0.0, w.xi),
        "all": w,
    }


def cmd_eval(cfg: RunConfig, store: ArtifactStore, variant: Optional[str] = None, sweep: Optional[str] = None,
             ablate: bool = False, method: Optional[str] = None, mask: Optional[str] = None) -> Dict[str, Any]:
    """
    默认输出 no_attack / no_fusion / 各攻击结果 的AP矩阵
    --sweep 逐个位姿参数运行单参数攻击，--ablate 依次只保留一个损失项
    """
    scenes = load_scenes(store)
    eval_variant = cfg.variant(variant or cfg.eval_variant)

    if sweep:
        sweep_method = method or "advgps"
        conditions = [
            craft_condition(scenes, cfg.attack_config(sweep_method, p), eval_variant, name=f"{sweep_method}_{p}")
            for p in sweep_params(sweep)
        ]
        report = EvalReport([evaluate_condition(scenes, c, eval_variant) for c in conditions])
        return {"report": "sweep", "digests": _write_report(store, cfg, report, "sweep")}

    baseline = [Condition("no_attack", variant=eval_variant.name)]
    if ablate:
        conditions = list(baseline)
        for name, weights in ablation_weights(cfg.weights).items():
            attack_cfg = cfg.attack_config("advgps", mask or "all", weights=weights)
            conditions.append(craft_condition(scenes, attack_cfg, eval_variant, name=name))
        report = EvalReport([evaluate_condition(scenes, c, eval_variant) for c in conditions])
        return {"report": "ablation", "digests": _write_report(store, cfg, report, "ablation")}

    conditions = baseline + [Condition("no_fusion", variant=eval_variant.name, fusion="no_fusion")]
    for spec in select_attacks(cfg, method, mask):
        condition = _load_condition(store, scenes, spec, eval_variant.name)
        if condition is not None:
            conditions.append(condition)
    report = EvalReport([evaluate_condition(scenes, c, eval_variant) for c in conditions])
    if cfg.eval_options.get("dump_score_maps", False):
        _dump_score_maps(store, scenes, cfg, eval_variant.name)
    return {"report": "summary", "digests": _write_report(store, cfg, report, "summary")}
