# -*- coding: utf-8 -*-
from typing import Dict, Any

from .base_module import BaseModule
from .pipeline import cmd_eval
from .run_config import RunConfig
from .storage import ArtifactStore


class EvalModule(BaseModule):
    def __init__(self, config: Dict[str, Any] = None):
        BaseModule.__init__(self, "eval_module", config)

    def get_routes(self) -> Dict[str, callable]:
        return {'/eval': self.run}

    def run(self, run_cfg: RunConfig, store: ArtifactStore, params: Dict[str, Any]) -> Dict[str, Any]:
        sweep = params.get('sweep')
        if sweep is True:
            sweep = "all"
        result = cmd_eval(run_cfg, store, variant=params.get('variant'), sweep=sweep,
                          ablate=bool(params.get('ablate', False)), method=params.get('method'),
                          mask=params.get('mask'))
        self._log_if_enabled('result_log', 'info', f"report={result['report']}")
        return result
