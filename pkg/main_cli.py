# -*- coding: utf-8 -*-
"""
命令行入口，与 HTTP 模块共用 modules.pipeline 的实现

    python main_cli.py generate --config config.json --out runs/demo --seed 0
    python main_cli.py attack   --out runs/demo [--method advgps] [--mask xyz] [--variant B]
    python main_cli.py eval     --out runs/demo [--variant A] [--sweep [theta_z]] [--ablate]

退出码: 0 成功, 2 配置错误, 3 缺少输入
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from modules.errors import ConfigError, MissingInputError, PlacementError
from modules.pipeline import cmd_attack, cmd_eval, cmd_generate
from modules.run_config import resolve_run_config
from modules.storage import ArtifactStore

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3

logger = logging.getLogger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpsattack", description="GPS位姿对抗攻击实验流水线")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON运行配置，缺省读取项目根目录 config.json")
    common.add_argument("--out", default=None, help="输出目录，覆盖配置里的 output_dir")
    common.add_argument("--seed", type=int, default=None, help="覆盖配置里的随机种子")

    sub.add_parser("generate", parents=[common], help="生成合成场景")

    attack = sub.add_parser("attack", parents=[common], help="生成对抗位姿")
    attack.add_argument("--method", default=None)
    attack.add_argument("--mask", default=None)
    attack.add_argument("--variant", default=None, help="构造攻击使用的感知变体，缺省为 crafting_variant")

    ev = sub.add_parser("eval", parents=[common], help="评估检测AP")
    ev.add_argument("--method", default=None)
    ev.add_argument("--mask", default=None)
    ev.add_argument("--variant", default=None, help="评估使用的感知变体，缺省为 eval_variant")
    ev.add_argument("--sweep", nargs="?", const="all", default=None,
                    help="逐个位姿参数的单参数攻击，可指定 x/y/z/theta_x/theta_y/theta_z")
    ev.add_argument("--ablate", action="store_true", help="损失项消融")
    return parser


def run(args: argparse.Namespace) -> dict:
    cfg = resolve_run_config(args.config, seed=args.seed, out=args.out)
    store = ArtifactStore(cfg.output_dir)
    logger.info(f"command={args.command} output_dir={store.root} seed={cfg.seed}")
    if args.command == "generate":
        return cmd_generate(cfg, store)
    if args.command == "attack":
        return cmd_attack(cfg, store, method=args.method, mask=args.mask, variant=args.variant)
    return cmd_eval(cfg, store, variant=args.variant, sweep=args.sweep, ablate=args.ablate,
                    method=args.method, mask=args.mask)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = run(args)
    except ConfigError as e:
        logger.error(f"配置错误 field={e.field}: {e}")
        return EXIT_CONFIG
    except PlacementError as e:
        logger.error(f"配置错误 field=scene: {e}")
        return EXIT_CONFIG
    except MissingInputError as e:
        logger.error(f"缺少输入: {e}")
        return EXIT_MISSING_INPUT
    except OSError as e:
        logger.error(f"配置错误 field=output_dir: {e}")
        return EXIT_CONFIG
    print(json.dumps(result, ensure_ascii=False, sort_keys=True, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.INFO,
        format='[%(asctime)s] %(name)s - %(levelname)s - %(filename)s:%(lineno)d %(funcName)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    sys.exit(main())
