from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config, parse_config
from .run import RunOutcome, run

__all__ = [
    "Checkpoint",
    "ExperimentConfig",
    "RunOutcome",
    "dump_config",
    "load_checkpoint",
    "parse_config",
    "run",
    "save_checkpoint",
]
