import yaml
import os

from model.errors import ConfigError


class Settings:
    def __init__(self, config_path="config.yaml"):
        if os.path.exists(config_path):
            with open(config_path, 'r', encoding='utf-8') as f:
                self.config = yaml.safe_load(f) or {}
        else:
            self.config = {}

    @property
    def grid(self):
        return self.config.get('grid', {})

    @property
    def solver(self):
        return self.config.get('solver', {})

    @property
    def spectral(self):
        return self.config.get('spectral', {})

    @property
    def audit(self):
        return self.config.get('audit', {})

    @property
    def properness(self):
        return self.config.get('properness', {})

    @property
    def output(self):
        return self.config.get('output', {})

    def update(self, section, key, value):
        """更新某一节的配置"""
        if section not in self.config:
            self.config[section] = {}
        self.config[section][key] = value

    def apply_overrides(self, items):
        """处理 section.key=value 形式的覆盖项，返回其余的实验键"""
        rest = []
        for item in items:
            key, sep, raw = item.partition('=')
            key = key.strip()
            if not sep or '.' not in key:
                rest.append(item)
                continue
            section, name = key.split('.', 1)
            try:
                value = yaml.safe_load(raw)
            except yaml.YAMLError as e:
                raise ConfigError(f"bad value for '{key}': {e}")
            self.update(section, name, value)
        return rest
