"""Sigmoid reward components and the composite query reward.

The query reward multiplies three saturating gates: the classifier score must
fall inside the uncertainty band, enough time must have passed since the last
query, and the current hour's response rate must be high. Not querying earns
the complement, so R(s,1)/scale + R(s,0) == 1 identically.
"""

from __future__ import annotations

from dataclasses import dataclass

from scipy.special import expit

from .state import AgentState

__all__ = ["RewardConfig", "sigmoid", "components", "reward"]


@dataclass(frozen=True)
class RewardConfig:
    region_low: float = 0.2  # t1, lower edge of the uncertainty band
    region_high: float = 0.6  # t2, upper edge
    alpha_r1: float = 100.0
    alpha_r2: float = 10.0
    beta_r2: float = 0.3
    alpha_r3: float = 100.0
    beta_r3: float = 0.4
    query_reward_scale: float = 2.0
    # legacy r1: fixed S(s1;100,0.5)*S(s1;-100,1.3), kept for fidelity runs;
    # it gates on s1 > 0.5 instead of the uncertainty band.
    legacy_r1: bool = False
    # traditional active learning: drop the context gates (r2 = r3 = 1)
    uncertainty_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.region_low < self.region_high <= 1.0:
            raise ValueError("need 0 <= region_low < region_high <= 1")
        if self.query_reward_scale <= 0:
            raise ValueError("query_reward_scale must be positive")


def sigmoid(x: float, alpha: float, beta: float) -> float:
    """1 / (1 + exp(-alpha * (x - beta))); beta is the transition center."""
    return float(expit(alpha * (x - beta)))


def components(s: AgentState, cfg: RewardConfig = RewardConfig()) -> tuple[float, float, float]:
    """Reward gates (r1, r2, r3), each in (0, 1)."""
    if cfg.legacy_r1:
        r1 = sigmoid(s.s1, 100.0, 0.5) * sigmoid(s.s1, -100.0, 1.3)
    else:
        r1 = sigmoid(s.s1, cfg.alpha_r1, cfg.region_low) * sigmoid(
            s.s1, -cfg.alpha_r1, cfg.region_high
        )
    if cfg.uncertainty_only:
        return r1, 1.0, 1.0
    r2 = sigmoid(s.s2, cfg.alpha_r2, cfg.beta_r2)
    r3 = sigmoid(s.s3, cfg.alpha_r3, cfg.beta_r3)
    return r1, r2, r3


def reward(s: AgentState, a: int, cfg: RewardConfig = RewardConfig()) -> float:
    """Composite reward: scale * r1*r2*r3 for querying, 1 - r1*r2*r3 for waiting."""
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a!r}")
    r1, r2, r3 = components(s, cfg)
    product = r1 * r2 * r3
    return cfg.query_reward_scale * product if a == 1 else 1.0 - product
