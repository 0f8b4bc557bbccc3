import os
import yaml
from typing import Dict, Optional, Text

from .exceptions import ConfigurationException


class ConfigParser:
    def __init__(self, file_path: Text = 'config/config.yaml', external: bool = False):
        if not external:
            file_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), file_path)

        with open(file_path, 'r') as f:
            self.config_dict = yaml.safe_load(f) or {}

        if not isinstance(self.config_dict, dict):
            raise ConfigurationException(f"The configuration file {file_path} must contain a mapping of keys to values.")

    def get_config_dict(self) -> Dict:
        return self.config_dict

    def merged_with(self, overrides: Optional[Dict]) -> Dict:
        """
        Overlay a flat mapping of user values on top of the loaded configuration.

        :param overrides: a flat dict of keys (case-insensitive) to values. Nested blocks such as TRAIN are merged key by key.
        :return: a new dict; the loaded configuration is left untouched.
        """
        merged = {key: (dict(value) if isinstance(value, dict) else value) for key, value in self.config_dict.items()}
        train_keys = {key.lower() for key in merged.get('TRAIN', {})}

        for key, value in (overrides or {}).items():
            upper = key.upper()
            if upper in merged:
                if isinstance(merged[upper], dict) and isinstance(value, dict):
                    merged[upper].update(value)
                else:
                    merged[upper] = value
            elif key.lower() in train_keys:
                merged['TRAIN'][key.lower()] = value
            else:
                raise ConfigurationException(f"Unknown configuration key: {key}.")

        return merged
