# -*- coding: utf-8 -*-
from typing import Dict, Any, Optional

from .base_module import BaseModule
from .pipeline import cmd_attack
from .run_config import RunConfig
from .storage import ArtifactStore


class AttackModule(BaseModule):
    """
    GPS攻击模块
    请求体可选字段: method / mask / variant，缺省时按配置里的 attacks 列表逐个生成
    """

    def __init__(self, config: Dict[str, Any] = None):
        BaseModule.__init__(self, "attack_module", config)
        self.default_variant: Optional[str] = self.options.get('variant')

    def get_routes(self) -> Dict[str, callable]:
        return {'/attack': self.run}

    def run(self, run_cfg: RunConfig, store: ArtifactStore, params: Dict[str, Any]) -> Dict[str, Any]:
        result = cmd_attack(run_cfg, store, method=params.get('method'), mask=params.get('mask'),
                            variant=params.get('variant') or self.default_variant)
        return {"attacks": {key: len(files) for key, files in result["results"].items()}}
