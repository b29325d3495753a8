"""Reward functions for both agents.

The generation agent is paid the downstream score delta.  The discrimination
agent combines four components: the information the original column holds
about the target beyond the new one (delete), its negation (replace), the
redundancy between original and new column (add, penalized), and the score
delta (utility), weighted alpha/beta/gamma/delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mutualinfo import mutual_information


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.1
    beta: float = 0.1
    gamma_w: float = 1.0
    delta: float = 0.01

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_w, self.delta) <= 0:
            raise ConfigError("reward weights must be strictly positive")


@dataclass(frozen=True)
class RewardBreakdown:
    r_del: float
    r_rep: float
    r_add: float
    r_imp: float
    r2: float


def generation_reward(score_new: float, score_ori: float) -> float:
    """Score delta earned by the generation agent."""
    if not (np.isfinite(score_new) and np.isfinite(score_ori)):
        raise ValueError("scores must be finite")
    return score_new - score_ori


def combine_rewards(w: RewardWeights, r_del: float, r_rep: float,
                    r_add: float, r_imp: float) -> float:
    return w.alpha * r_del + w.beta * r_rep + w.gamma_w * r_imp - w.delta * r_add


def discrimination_reward(f_ori: np.ndarray, f_new: np.ndarray | None,
                          y: np.ndarray, score_new: float, score_ori: float,
                          w: RewardWeights) -> RewardBreakdown:
    """Per-feature reward breakdown for the discrimination agent.

    ``f_new`` is None for identity actions, which zeroes the three
    mutual-information components and leaves only the utility term.
    """
    r_imp = score_new - score_ori
    if f_new is None:
        r_del = r_rep = r_add = 0.0
    else:
        if f_ori.shape[0] != f_new.shape[0]:
            raise ValueError("column length mismatch")
        r_del = mutual_information(f_ori, y) - mutual_information(f_new, y)
        r_rep = -r_del
        r_add = mutual_information(f_ori, f_new)
    r2 = combine_rewards(w, r_del, r_rep, r_add, r_imp)
    return RewardBreakdown(r_del, r_rep, r_add, r_imp, r2)


def masked_combination(bd: RewardBreakdown, action: str, w: RewardWeights) -> float:
    """Experimental alternative: keep only the component matching the taken
    action plus the utility term."""
    if action == "delete":
        return w.alpha * bd.r_del + w.gamma_w * bd.r_imp
    if action == "replace":
        return w.beta * bd.r_rep + w.gamma_w * bd.r_imp
    if action == "add":
        return w.gamma_w * bd.r_imp - w.delta * bd.r_add
    raise ValueError(f"unknown action {action!r}")
