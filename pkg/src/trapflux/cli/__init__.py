"""Config-driven command line runner."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .main import main
