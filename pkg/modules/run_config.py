# -*- coding: utf-8 -*-
"""
运行配置
config.json -> load_config()（文件缺失时回退到内置默认值）-> normalize_config() -> parse_run_config() -> RunConfig
"""

import copy
import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

from .attack import METHODS, AttackConfig, resolve_mask
from .errors import ConfigError
from .losses import ObjectiveWeights, PerturbationBudget
from .perception import DEFAULT_VARIANTS, PerceptionVariant, variant_from_dict, variant_to_dict
from .scene import SCHEMA_VERSION, SceneConfig, check_schema_version

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config.json")

DEFAULT_MODULES = {
    "generate_module": {"enabled": True, "display_name": "场景生成"},
    "attack_module": {"enabled": True, "display_name": "GPS攻击"},
    "eval_module": {"enabled": True, "display_name": "检测评估"},
}

DEFAULT_CONFIG: Dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "output_dir": "runs/default",
    "server": {"port": 8000, "host": "0.0.0.0"},
    "scene": SceneConfig().to_dict(),
    "budget": PerturbationBudget().to_dict(),
    "weights": ObjectiveWeights().to_dict(),
    "iterations": 10,
    "variants": {name: variant_to_dict(variant) for name, variant in DEFAULT_VARIANTS.items()},
    "crafting_variant": "B",
    "eval_variant": "A",
    "attacks": [{"method": m, "mask": mask}
                for mask in ("xyz", "all") for m in ("rba", "fgsm", "ifgsm", "pgd", "paa", "advgps")],
    "generate_module": {},
    "attack_module": {},
    "eval_module": {"dump_score_maps": False, "dump_overlays": True},
}


@dataclass(frozen=True)
class AttackSpec:
    method: str
    mask: str

    @property
    def key(self) -> str:
        return f"{self.method}_{self.mask}"


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig
    attacks: Tuple[AttackSpec, ...]
    variants: Dict[str, PerceptionVariant]
    crafting_variant: str
    eval_variant: str
    budget: PerturbationBudget
    weights: ObjectiveWeights
    iterations: int
    output_dir: str
    seed: int
    schema_version: str = SCHEMA_VERSION
    eval_options: Dict[str, Any] = field(default_factory=dict)

    def variant(self, name: str) -> PerceptionVariant:
        if name not in self.variants:
            raise ConfigError("variant", f"未定义的感知变体 {name!r}，可选 {sorted(self.variants)}")
        return self.variants[name]

    def attack_config(self, method: str, mask: str, weights: Optional[ObjectiveWeights] = None,
                      variant: Optional[str] = None) -> AttackConfig:
        return AttackConfig(
            method=method,
            iterations=self.iterations,
            budget=self.budget,
            weights=weights or self.weights,
            mask=mask,
            variant=self.variant(variant or self.crafting_variant),
            seed=self.seed,
        )

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
                raise ConfigError("seed", "必须为非负整数")
            cfg = replace(cfg, seed=int(seed), scene=replace(cfg.scene, seed=int(seed)))
        if out:
            cfg = replace(cfg, output_dir=out)
        return cfg


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "variants":
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """
    读取 JSON 配置
    未显式指定路径且默认 config.json 不存在时回退到内置默认值；显式路径不存在或 JSON 损坏时抛 ConfigError
    """
    explicit = path is not None
    path = path or DEFAULT_CONFIG_PATH
    if not os.path.exists(path):
        if explicit:
            raise ConfigError("config", f"配置文件不存在: {path}")
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"JSON格式错误: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config", "顶层必须是对象")
    return data


def normalize_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """补齐默认段落与 modules 段（enabled / display_name）"""
    merged = _deep_merge(DEFAULT_CONFIG, cfg)
    modules = merged.get("modules") or {}
    for name, meta in DEFAULT_MODULES.items():
        if name not in modules:
            modules[name] = dict(meta)
    merged["modules"] = modules
    merged.setdefault("logging", {})
    return merged


def parse_run_config(raw: Dict[str, Any]) -> RunConfig:
    cfg = normalize_config(raw)
    check_schema_version(cfg.get("schema_version"))

    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "必须为非负整数")
    scene_section = dict(cfg["scene"])
    scene_section["seed"] = seed
    scene = SceneConfig.from_dict(scene_section)

    try:
        budget = PerturbationBudget.from_dict(cfg["budget"])
    except TypeError as e:
        raise ConfigError("budget", str(e))
    weights = ObjectiveWeights.from_dict(cfg["weights"])

    iterations = cfg.get("iterations")
    if not isinstance(iterations, int) or iterations < 1:
        raise ConfigError("iterations", "必须为正整数")

    variants = {}
    for name, section in cfg["variants"].items():
        if not isinstance(section, dict):
            raise ConfigError(f"variants.{name}", "必须是对象")
        try:
            variants[name] = variant_from_dict(name, section)
        except TypeError as e:
            raise ConfigError(f"variants.{name}", str(e))
    for key in ("crafting_variant", "eval_variant"):
        if cfg.get(key) not in variants:
            raise ConfigError(key, f"引用了未定义的感知变体 {cfg.get(key)!r}")

    attacks = []
    for i, item in enumerate(cfg.get("attacks") or []):
        method = item.get("method")
        if method not in METHODS:
            raise ConfigError(f"attacks[{i}].method", f"未知攻击方法 {method!r}")
        mask = item.get("mask", "all")
        try:
            if not isinstance(mask, str):
                raise ConfigError("attack.mask", "需要掩码名称")
            resolve_mask(mask)
        except ConfigError:
            raise ConfigError(f"attacks[{i}].mask", f"未知掩码 {mask!r}")
        attacks.append(AttackSpec(method, mask))

    output_dir = cfg.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "必须为非空字符串")

    return RunConfig(
        scene=scene,
        attacks=tuple(attacks),
        variants=variants,
        crafting_variant=cfg["crafting_variant"],
        eval_variant=cfg["eval_variant"],
        budget=budget,
        weights=weights,
        iterations=iterations,
        output_dir=output_dir,
        seed=seed,
        schema_version=cfg["schema_version"],
        eval_options=dict(cfg.get("eval_module") or {}),
    )


def resolve_run_config(config_path: Optional[str] = None, seed: Optional[int] = None,
                       out: Optional[str] = None) -> RunConfig:
    return parse_run_config(load_config(config_path)).with_overrides(seed=seed, out=out)
