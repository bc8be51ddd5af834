"""n-step return assembly with partial-episode bootstrapping, and Q targets.

Episodes that end because the agent chose to stop are true terminals: their
windows truncate with bootstrap_needed=False. Episodes cut off by the step
cap are not: the value target keeps bootstrapping from the final observation
(bootstrap_needed=True), so the cap does not teach the agent that time runs
out.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..environment import Observation, ObsEncoder
from ..errors import ContractError
from ..qnetwork import Params, QNetwork, argmax_valid


@dataclass
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    terminal: bool
    timeout: bool


@dataclass
class NStepSample:
    obs: Observation
    action: int
    return_n: float
    bootstrap_obs: Observation
    bootstrap_needed: bool
    m: int  # actual horizon; < n only at episode boundaries


class NStepAccumulator:
    """Sliding-window accumulator for one episode stream."""

    def __init__(self, n: int, discount: float):
        if n < 1:
            raise ContractError("n_step must be >= 1")
        if not (0.0 < discount <= 1.0):
            raise ContractError("discount must lie in (0, 1]")
        self.n = n
        self.discount = discount
        self.window: deque[Transition] = deque()

    def _emit(self, bootstrap_obs: Observation, bootstrap_needed: bool) -> NStepSample:
        head = self.window[0]
        ret = 0.0
        for k, tr in enumerate(self.window):
            ret += (self.discount ** k) * tr.reward
        sample = NStepSample(obs=head.obs, action=head.action, return_n=ret,
                             bootstrap_obs=bootstrap_obs, bootstrap_needed=bootstrap_needed,
                             m=len(self.window))
        self.window.popleft()
        return sample

    def push(self, tr: Transition) -> list[NStepSample]:
        """Feed one transition; returns every sample completed by it."""
        if tr.timeout and not tr.terminal:
            raise ContractError("timeout=True requires terminal=True")
        self.window.append(tr)
        out = []
        if tr.terminal:
            needed = tr.timeout
            while self.window:
                out.append(self._emit(tr.next_obs, needed))
        elif len(self.window) == self.n:
            out.append(self._emit(tr.next_obs, True))
        return out


def accumulate_nstep(transitions, n: int, discount: float):
    """Generator form over an episode-ordered transition stream."""
    acc = NStepAccumulator(n, discount)
    for tr in transitions:
        yield from acc.push(tr)


def compute_targets(qnet: QNetwork, online: Params, target: Params,
                    encoder: ObsEncoder, samples: list[NStepSample],
                    discount: float) -> np.ndarray:
    """y = return_n + [needs bootstrap] * discount**m * Q_tgt(s', argmax Q_on(s', .))

    Action selection by the online net, evaluation by the target net; masked
    actions never enter the argmax (their Q is -inf).
    """
    y = np.array([s.return_n for s in samples], dtype=np.float64)
    needed = [i for i, s in enumerate(samples) if s.bootstrap_needed]
    if needed:
        tokens, mask = encoder.batch_tokens([samples[i].bootstrap_obs for i in needed])
        q_online, _ = qnet.forward(online, tokens, mask)
        q_target, _ = qnet.forward(target, tokens, mask)
        best = argmax_valid(q_online)
        boot = q_target[np.arange(len(needed)), best]
        ms = np.array([samples[i].m for i in needed], dtype=np.float64)
        y[needed] += (discount ** ms) * boot
    return y
