"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericFault
from .network import GradBundle, Params, global_l2

MAX_GRAD_NORM = 40.0


@dataclass
class AdamConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    config: AdamConfig
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def init(cls, params: Params, config: AdamConfig | None = None) -> "AdamState":
        config = config or AdamConfig()
        return cls(config=config,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def clip_global_norm(grads: GradBundle, max_norm: float = MAX_GRAD_NORM) -> GradBundle:
    """Scale all arrays by max_norm/||g|| when the global L2 norm exceeds it."""
    if not np.isfinite(grads.global_l2):
        raise NumericFault("non-finite gradient norm before clipping")
    if grads.global_l2 <= max_norm:
        return grads
    scale = max_norm / grads.global_l2
    clipped = {k: g * scale for k, g in grads.grads.items()}
    return GradBundle(grads=clipped, global_l2=global_l2(clipped))


def adam_step(params: Params, grads: GradBundle, state: AdamState) -> tuple[Params, AdamState]:
    """One update; returns new params and state (inputs are not mutated)."""
    if set(params) != set(grads.grads):
        raise ContractError("gradient keys do not match parameter keys")
    cfg = state.config
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for k, p in params.items():
        g = grads.grads[k]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape mismatch for {k}")
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        new_params[k] = p - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(config=cfg, m=new_m, v=new_v, step=t)
