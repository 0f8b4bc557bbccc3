import os
import logging
import logging.config
from typing import Dict, Optional, Text

from dotenv import load_dotenv

from .__about__ import __title__, __version__
from .config_parser import ConfigParser
from .exceptions import ConfigurationException

logging_config_parser = ConfigParser('config/logging.yaml')
logging.config.dictConfig(logging_config_parser.get_config_dict())
logger = logging.getLogger('iris_graph')

SEED_ENV_VAR = 'IRISGRAPH_SEED'


def resolve_seed(seed: Optional[int] = None, config: Optional[Dict] = None) -> int:
    """
    Resolve the run seed: explicit value, then the IRISGRAPH_SEED environment variable (a .env file is honoured), then the configured SEED.
    """
    if seed is not None:
        return int(seed)

    load_dotenv()
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError:
            raise ConfigurationException(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}.")

    if config is None:
        config = ConfigParser().get_config_dict()
    return int(config['SEED'])


# runtime-only settings, never written into artifacts
NON_PROVENANCE_KEYS = ('JOBS', 'REFERENCE_TABLES')


def build_provenance(config: Dict, seed: int, **extra) -> Dict:
    """
    The block embedded in every artifact: tool name and version, seed and the resolved configuration.
    """
    return {
        'tool': __title__,
        'version': __version__,
        'seed': int(seed),
        'config': {key: value for key, value in config.items() if key not in NON_PROVENANCE_KEYS},
        **extra,
    }


class BaseComponent:
    def __init__(self, config: Optional[Dict] = None, **overrides):
        self.config = ConfigParser().merged_with({**(config or {}), **overrides})

        self.logger = logger.getChild(type(self).__name__)

    def _config_value(self, key: Text, value=None):
        return self.config[key] if value is None else value
