# -*- coding: utf-8 -*-
from typing import Dict, Any

from .base_module import BaseModule
from .pipeline import cmd_generate
from .run_config import RunConfig
from .storage import ArtifactStore


class GenerateModule(BaseModule):
    def __init__(self, config: Dict[str, Any] = None):
        BaseModule.__init__(self, "generate_module", config)

    def get_routes(self) -> Dict[str, callable]:
        return {'/generate': self.run}

    def run(self, run_cfg: RunConfig, store: ArtifactStore, params: Dict[str, Any]) -> Dict[str, Any]:
        manifest = cmd_generate(run_cfg, store)
        self._log_if_enabled('result_log', 'info', f"scenes={manifest['count']} digest={manifest['digest']}")
        return {"count": manifest["count"], "digest": manifest["digest"], "seed": manifest["seed"]}
