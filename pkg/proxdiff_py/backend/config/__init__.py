"""
Configuration management for proxdiff runs.
"""

import copy
import json
import os
from pathlib import Path
from typing import Dict, Any, Optional

from ...core.errors import ConfigError


class PGMConfig:
    """
    Configuration manager for training, sampling and experiment runs.

    Handles loading, saving, and accessing the JSON run configuration. A user
    file is deep-merged over DEFAULT_CONFIG.
    """

    DEFAULT_CONFIG = {
        'schedule': {
            'kind': 've',
            'T': 1.0,
            'K': 100,
            'lambda': 'exp(10t-8)'
        },
        'potential': {
            'f': {'kind': 'quadratic', 'A': [[0.1]], 'b': [0.0]},
            'g': {'kind': 'interval', 'lo': -1.0, 'hi': 1.0},
            'beta': 10.0
        },
        'sampler': {
            'kind': 'pgm',
            'chains': 10000,
            'seed': 0,
            'prox': 'analytic',
            'workers': 1
        },
        'train': {
            'epochs': 2000,
            'batch_size': 256,
            'learning_rate': 3e-3,
            'lr_min': 1e-5,
            'optimizer': 'adam',
            'momentum': 0.9,
            'steps_per_epoch': 8,
            'seed': 0,
            'hidden': 64
        },
        'prior': {
            'kind': 'interval',
            'lo': -1.0,
            'hi': 1.0
        },
        'output': {
            'dir': 'runs',
            'emit_hist': 0
        },
        'logging': {
            'level': 'INFO'
        }
    }

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        """
        Initialize configuration manager.

        Args:
            config_path: Path to a JSON configuration file (defaults only when None)
            overrides: Dictionary merged over the file contents

        Raises:
            ConfigError: If the file is missing or is not valid JSON
        """
        self.config_path = Path(config_path) if config_path is not None else None
        self.config = self._load_config()
        if overrides:
            self.config = self._merge_configs(self.config, overrides)

    def _load_config(self) -> Dict[str, Any]:
        """
        Load configuration from file.

        Returns:
            Configuration dictionary
        """
        defaults = copy.deepcopy(self.DEFAULT_CONFIG)
        if self.config_path is None:
            return defaults
        data = load_json(self.config_path)
        if not isinstance(data, dict):
            raise ConfigError("Top-level JSON value must be an object", path=str(self.config_path))
        return self._merge_configs(defaults, data)

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """
        Recursively merge configuration dictionaries.

        Args:
            base: Base configuration
            override: Override configuration

        Returns:
            Merged configuration
        """
        result = base.copy()
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value
        return result

    def save(self, path: Optional[str] = None) -> Path:
        """
        Save configuration to file.

        Returns:
            Path written
        """
        target = Path(path) if path is not None else self.config_path
        if target is None:
            raise ConfigError("No path to save the configuration to")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w') as f:
            json.dump(self.config, f, indent=2)
        os.chmod(target, 0o644)
        return target

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by key.

        Args:
            key: Configuration key (supports dot notation, e.g., 'sampler.chains')
            default: Default value if key not found

        Returns:
            Configuration value
        """
        value = self.config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key: str, value: Any) -> None:
        """
        Set configuration value.

        Args:
            key: Configuration key (supports dot notation)
            value: Value to set
        """
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            if k not in config or not isinstance(config[k], dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

    def get_section(self, name: str) -> Dict[str, Any]:
        """Copy of one top-level section ({} when absent)."""
        section = self.config.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"Section '{name}' must be an object",
                              path=str(self.config_path) if self.config_path else None)
        return copy.deepcopy(section)


def load_json(path: Any) -> Any:
    """
    Read a JSON file, turning decoder errors into ConfigError with line numbers.
    """
    path = Path(path)
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, path=str(path), lineno=e.lineno, colno=e.colno) from e
    except OSError as e:
        raise ConfigError(f"Cannot read configuration: {e.strerror}", path=str(path)) from e


__all__ = ['PGMConfig', 'load_json']
