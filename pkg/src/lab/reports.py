import csv
import json
import logging
import os
import platform

import numpy as np
import scipy

logger = logging.getLogger(__name__)


def format_value(value):
    """浮点数按 repr 输出（17 位有效数字）"""
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class ReportWriter:
    """实验报告输出：CSV、JSON 与 manifest"""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)
        self.files = []
        self.logger = logging.getLogger(__name__)

    def path(self, name):
        return os.path.join(self.output_dir, name)

    def write_csv(self, name, header, rows, comments=()):
        path = self.path(name)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
            for comment in comments:
                f.write(f"# {comment}\n")
        self.files.append(name)
        self.logger.info(f"报告已写入: {path}")
        return path

    def write_json(self, name, payload):
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_plain(payload), f, indent=2, sort_keys=True)
            f.write('\n')
        self.files.append(name)
        self.logger.info(f"报告已写入: {path}")
        return path


class Manifest:
    """运行清单：配置回显、版本、耗时、残差证书与不变量结果"""

    def __init__(self, config_lines):
        self.config_lines = list(config_lines)
        self.certificates = []
        self.invariants = []
        self.notes = []
        self.error = None

    def certificate(self, name, value):
        self.certificates.append((name, float(value)))

    def invariant(self, name, passed, detail=""):
        self.invariants.append((name, bool(passed), detail))
        if not passed:
            logger.error(f"不变量失败: {name} {detail}")
        return bool(passed)

    def note(self, text):
        self.notes.append(text)

    @property
    def first_failure(self):
        for name, passed, _ in self.invariants:
            if not passed:
                return name
        return None

    def write(self, path, wall_time, status, files=()):
        lines = ["# config"]
        lines += self.config_lines
        lines += ["# versions",
                  f"python = {platform.python_version()}",
                  f"numpy = {np.__version__}",
                  f"scipy = {scipy.__version__}",
                  f"wall_time = {wall_time:.3f}"]
        lines += [f"certificate {name} = {value!r}" for name, value in self.certificates]
        lines += [f"invariant {name} = {'PASS' if passed else 'FAIL'}" + (f"  # {detail}" if detail else "")
                  for name, passed, detail in self.invariants]
        lines += [f"note {text}" for text in self.notes]
        lines += [f"file {name}" for name in files]
        if self.error:
            lines.append(f"error = {self.error}")
        lines.append(f"exit_status = {status}")
        with open(path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(lines) + '\n')
