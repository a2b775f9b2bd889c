"""
Configuration Manager
Handles experiment configuration with JSON persistence and flag overrides.
"""

import os
import copy
import json
import dataclasses
from typing import Any, Dict, List, Mapping, Optional
from ..common import Config, UnifiedASRError, ValidationError


def _assign(config: Config, key: str, value: Any):
    """Set one dotted key such as "train.contrastive.temperature"; unknown keys raise"""
    target = config
    *path, name = key.split(".")
    for part in path:
        if not hasattr(target, part):
            raise ValidationError(f"unknown config section: {key}")
        target = getattr(target, part)
    if not hasattr(target, name):
        raise ValidationError(f"unknown config key: {key}")
    if dataclasses.is_dataclass(getattr(target, name)):
        raise ValidationError(f"{key} is a section; set its keys one at a time")
    setattr(target, name, value)


class ConfigManager:
    """Manages experiment configuration with JSON persistence"""

    def __init__(self, config_path: Optional[str] = "config.json"):
        self.config_path = config_path
        self._config: Optional[Config] = None

    @property
    def config(self) -> Config:
        """Lazy load configuration"""
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def load_config(self) -> Config:
        """Load configuration from a JSON file (or a run manifest); defaults when no file exists"""
        if not self.config_path or not os.path.exists(self.config_path):
            return Config()

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {self.config_path} is not valid JSON: {e.msg}")
        except OSError as e:
            raise ValidationError(f"cannot read config file {self.config_path}: {e}")

        if not isinstance(data, dict):
            raise ValidationError(f"config file {self.config_path} must hold a JSON object")
        # Manifests carry the resolved configuration under "config"
        if 'command' in data and isinstance(data.get('config'), dict):
            data = data['config']
        try:
            return Config.from_dict(data)
        except TypeError as e:
            raise ValidationError(f"malformed config file {self.config_path}: {e}")

    def save_config(self, config: Optional[Config] = None) -> bool:
        """Save configuration to JSON file with error handling"""
        if config is None:
            config = self.config

        try:
            with open(self.config_path, 'w', encoding='utf-8') as f:
                json.dump(config.to_dict(), f, indent=4, ensure_ascii=False)
            self._config = config  # Update cached config
            return True
        except (IOError, OSError, TypeError):
            return False

    def update_config(self, updates: Mapping[str, Any]) -> bool:
        """Apply dotted-key updates (None allowed), validate and save; an invalid result is rolled back"""
        previous = copy.deepcopy(self.config)
        try:
            for key, value in updates.items():
                _assign(self.config, key, value)
        except ValidationError:
            self._config = previous
            raise

        issues = self.validate()
        if issues:
            self._config = previous
            raise ValidationError("; ".join(issues))
        return self.save_config()

    def apply_overrides(self, overrides: Dict[str, Any]) -> Config:
        """Apply dotted-key overrides (e.g. "train.epochs") to the cached config; None values are skipped"""
        config = self.config
        for key, value in overrides.items():
            if value is not None:
                _assign(config, key, value)
        return config

    def reset_to_defaults(self) -> bool:
        """Reset configuration to defaults"""
        return self.save_config(Config())

    def validate(self) -> List[str]:
        """Validate the configuration and return list of issues"""
        issues = []
        try:
            self.config.validate()
        except UnifiedASRError as e:
            issues.append(str(e))
        except TypeError as e:
            issues.append(f"config value has the wrong type: {e}")
        return issues
