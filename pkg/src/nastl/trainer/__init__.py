from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluate import EvalProtocol, EvalReport, evaluate, random_walk_report
from .loop import (TrainConfig, TrainResult, config_fingerprint, desk_config,
                   effective_config, paper_config, train, worker_epsilons)
from .nstep import (NStepAccumulator, NStepSample, Transition, accumulate_nstep,
                    compute_targets)
from .runlog import RunLogWriter, load_runlog

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "EvalProtocol", "EvalReport", "evaluate", "random_walk_report",
    "TrainConfig", "TrainResult", "config_fingerprint", "desk_config",
    "effective_config", "paper_config", "train", "worker_epsilons",
    "NStepAccumulator", "NStepSample", "Transition", "accumulate_nstep",
    "compute_targets",
    "RunLogWriter", "load_runlog",
]
