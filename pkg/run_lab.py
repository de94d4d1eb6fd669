#!/usr/bin/env python3
"""
Kähler-Einstein 数值实验室启动脚本

用法:
    python run_lab.py run experiment.cfg
    python run_lab.py run experiment.cfg --set beta=0.25 --set n=2049
    python run_lab.py run --set experiment=spectrum --set count=3
    python run_lab.py run experiment.cfg --set solver.continuation_steps=6
"""

import argparse
import logging
import sys
import os

# 添加src目录到Python路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from config.settings import Settings
from config.experiment import parse_config
from lab.runner import EXIT_CONFIG, LabRunner
from model.errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lab', description="径向 Kähler-Einstein 度量数值实验")
    commands = parser.add_subparsers(dest='command', required=True)
    run = commands.add_parser('run', help="运行一个实验配置")
    run.add_argument('config', nargs='?', help="key = value 格式的实验配置文件")
    run.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                     help="覆盖配置中的键，可重复；section.key=value 覆盖默认参数文件")
    run.add_argument('--settings', default=os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.yaml'),
                     help="默认参数文件")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    args = build_parser().parse_args(argv)
    settings = Settings(args.settings)

    text = ""
    if args.config:
        with open(args.config, 'r', encoding='utf-8') as f:
            text = f.read()
    try:
        overrides = settings.apply_overrides(args.overrides)
        config = parse_config(text, settings, overrides)
    except ConfigError as e:
        logging.getLogger('lab').error(f"配置错误: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    status = LabRunner(settings).run(config)
    print(f"{'✅' if status == 0 else '❌'} {config.experiment} 退出码 {status}, 报告目录 {config.output_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
