"""Command-line front end: run configuration files, replay logs and commands."""
from .config import ConfigFileError, RunConfig, load_config, parse_config, scenario_train_defaults
from .main import build_parser, main, make_env
from .replay import ReplayError, ReplayWriter, physics_signature, read_replay, resimulate
