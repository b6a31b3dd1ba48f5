"""Canonical scenario definitions shared by the demos, the bundled example
configs, and the verification suite.

The target subject sits at the edge of the population's feature cloud: a
long baseline inter-beat interval with a stress shift that lands its stressed
windows inside the population's calm range. The pretrained detector is
therefore mediocre on this subject until its own labels arrive, which is the
personalization effect the experiments measure.
"""

from __future__ import annotations

import numpy as np

from .dqn import DqnConfig, QNetwork, train_offline
from .forest import ForestConfig, ForestModel
from .harness import (
    ExperimentConfig,
    build_offline_episodes,
    make_episode_cycler,
    uniform_state_episodes,
)
from .reward import RewardConfig
from .subjects import SubjectProfile, generate_subject

__all__ = [
    "population_profiles",
    "default_subject",
    "benchmark_subject",
    "BENCHMARK_RESPONSIVENESS",
    "scenario_forest_config",
    "scenario_dqn_config",
    "trend_experiment_config",
    "ordering_experiment_config",
    "train_scenario_agent",
]

# hour-dependent answer probabilities spanning [0.1, 0.9]: asleep at night,
# reachable in the morning and evening, busy during work hours
BENCHMARK_RESPONSIVENESS = np.array(
    [0.1] * 7 + [0.9] * 3 + [0.3] * 7 + [0.9] * 5 + [0.3] * 2
)

# the stress shift parks stressed windows (mean IBI ~850 ms with mildly
# suppressed variability) inside the population's calm/stressed overlap zone,
# while the calm windows sit at the top edge of the population baseline span:
# the pooled model is uncertain-to-wrong on this subject's stress until its
# own labels tip the local vote
_TARGET_OVERRIDES = {
    "baseline_ibi_ms": (985.0, 60.0),
    "stress_ibi_shift_ms": -200.0,
    "hrv_suppression": 0.75,
    "stress_transition": [[1.0 - 0.2 / 6.0 / 0.8, 0.2 / 6.0 / 0.8],
                          [1.0 / 6.0, 1.0 - 1.0 / 6.0]],
    "hourly_stress_modifier": [1.0] * 24,
    "report_thresholds": [0.35, 0.5, 0.633, 0.85],
    "target_minority_ratio": 0.16,
    "breathing_baseline": 13.5,
    "breathing_stress_shift": 2.5,
    "circadian_ibi_amplitude_ms": 25.0,
    "circadian_phase_hour": 4.0,
}

TARGET_SUBJECT_SEED = 99


def population_profiles(n: int = 14, base_seed: int = 1) -> list:
    """The pretraining cohort, sampled from the default population."""
    return [generate_subject(base_seed + i) for i in range(n)]


def default_subject() -> SubjectProfile:
    """Target subject with uniformly high responsiveness (0.85 every hour)."""
    overrides = dict(_TARGET_OVERRIDES)
    overrides["responsiveness"] = [0.85] * 24
    return generate_subject(TARGET_SUBJECT_SEED, overrides)


def benchmark_subject() -> SubjectProfile:
    """Target subject with the hour-dependent benchmark responsiveness."""
    overrides = dict(_TARGET_OVERRIDES)
    overrides["responsiveness"] = BENCHMARK_RESPONSIVENESS
    return generate_subject(TARGET_SUBJECT_SEED, overrides)


def scenario_forest_config(seed: int = 0) -> ForestConfig:
    # fewer trees than the production default keeps repeated retraining fast
    return ForestConfig(n_trees=50, max_depth=5, seed=seed)


def scenario_dqn_config(seed: int = 0, train_steps: int = 30_000) -> DqnConfig:
    return DqnConfig(train_steps=train_steps, seed=seed)


def trend_experiment_config(repeats: int = 20, seed: int = 2024) -> ExperimentConfig:
    # long stream: the run must accumulate 600 answered labels
    return ExperimentConfig(
        policy="al_context",
        stream_length_slots=9600,
        pretrain_slots_per_subject=150,
        update_cadence=100,
        repeats=repeats,
        query_budget_matching=False,
        response_smoothing=0.25,
        seed=seed,
    )


def ordering_experiment_config(repeats: int = 20, seed: int = 4048) -> ExperimentConfig:
    return ExperimentConfig(
        policy="al_context",
        stream_length_slots=6000,
        pretrain_slots_per_subject=150,
        update_cadence=100,
        repeats=repeats,
        query_budget_matching=True,
        response_smoothing=0.25,
        seed=seed,
    )


def train_scenario_agent(
    classifier: ForestModel,
    population,
    contextual: bool,
    dqn_cfg: DqnConfig | None = None,
    reward_cfg: RewardConfig | None = None,
    episode_slots: int = 300,
    episode_seed: int = 7,
) -> QNetwork:
    """Train a query agent offline on population episodes.

    The non-contextual baseline uses the same machinery with the reward
    restricted to the uncertainty gate.
    """
    dqn_cfg = dqn_cfg or scenario_dqn_config()
    base_reward = reward_cfg or RewardConfig()
    episodes = build_offline_episodes(
        population, classifier, base_reward, slots_per_subject=episode_slots,
        seed=episode_seed,
    )
    # uniform coverage keeps value estimates honest in state regions the
    # realistic streams rarely visit
    episodes = episodes + uniform_state_episodes(
        max(2, len(episodes) // 2), episode_slots, seed=episode_seed
    )
    train_reward = base_reward if contextual else RewardConfig(
        region_low=base_reward.region_low,
        region_high=base_reward.region_high,
        alpha_r1=base_reward.alpha_r1,
        alpha_r2=base_reward.alpha_r2,
        beta_r2=base_reward.beta_r2,
        alpha_r3=base_reward.alpha_r3,
        beta_r3=base_reward.beta_r3,
        query_reward_scale=base_reward.query_reward_scale,
        legacy_r1=base_reward.legacy_r1,
        uncertainty_only=True,
    )
    net = QNetwork(
        layer_sizes=(4, *dqn_cfg.hidden_sizes, 2),
        l1=dqn_cfg.l1,
        l2=dqn_cfg.l2,
        rng=np.random.default_rng(dqn_cfg.seed),
    )
    net, _ = train_offline(net, make_episode_cycler(episodes), dqn_cfg, train_reward)
    return net
