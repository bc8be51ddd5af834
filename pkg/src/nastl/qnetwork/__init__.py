from .network import (GradBundle, NetConfig, Params, QNetwork, argmax_valid,
                      global_l2, max_valid)
from .optim import MAX_GRAD_NORM, AdamConfig, AdamState, adam_step, clip_global_norm

__all__ = [
    "GradBundle", "NetConfig", "Params", "QNetwork", "argmax_valid", "global_l2",
    "max_valid", "MAX_GRAD_NORM", "AdamConfig", "AdamState", "adam_step",
    "clip_global_norm",
]
