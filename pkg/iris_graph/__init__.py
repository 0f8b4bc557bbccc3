from .imaging import Preprocessor
from .graph_extract import GraphExtractor
from .dataset import DatasetBuilder
from .gsnn import GSNNTrainer
from .experiments import ExperimentRunner

from .config_parser import ConfigParser
from .imaging import SUPPORTED_ALPHAS, format_alpha


def get_supported_alphas():
    return [format_alpha(alpha) for alpha in SUPPORTED_ALPHAS]


def get_default_config():
    config_parser = ConfigParser()
    return config_parser.get_config_dict()
