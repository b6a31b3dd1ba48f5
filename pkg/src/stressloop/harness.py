"""Closed-loop personalization experiments.

One run walks a subject's instance stream in order. Each instance is scored
by the current classifier, turned into an agent state, and a policy decides
whether to query the subject for a label. Every K instances the response
profile is refreshed and the classifier is retrained on the pretraining pool
plus all labels collected so far; recall is then evaluated on a held-out tail
of the stream that never enters training.

Policies: "random" (uniform selection), "al_noncontext" (agent trained on the
uncertainty gate only), "al_context" (agent trained on the full reward).
Budget matching equalizes queries issued per block so label quality, not
quantity, drives the comparison.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dqn import QNetwork, select_action
from .forest import (
    DEFAULT_SCHEME,
    ForestConfig,
    ForestModel,
    LabelScheme,
    evaluate_recall,
    map_label,
    predict_raw,
    train,
)
from .reward import RewardConfig, reward
from .state import AgentState, build_state, new_profile, update_response_profile
from .subjects import SubjectProfile, bucketize, respond, step_stream

__all__ = [
    "POLICIES",
    "ExperimentConfig",
    "TrajectoryPoint",
    "RunResult",
    "NOT_REACHED",
    "build_training_pool",
    "pretrain",
    "build_offline_episodes",
    "uniform_state_episodes",
    "make_episode_cycler",
    "run_policy",
    "compare",
    "run_experiment",
    "queries_to_target",
    "write_results_csv",
    "write_trajectory_csv",
    "write_summary_csv",
    "write_response_rates_csv",
]

POLICIES = ("random", "al_noncontext", "al_context")
NOT_REACHED = None


@dataclass(frozen=True)
class ExperimentConfig:
    policy: str = "al_context"
    n_pretrain_subjects: int = 14
    pretrain_slots_per_subject: int = 200
    stream_length_slots: int = 2000
    update_cadence: int = 100  # K instances between profile update + retrain
    test_holdout_fraction: float = 0.25  # taken from the end of the stream
    repeats: int = 100
    query_budget_matching: bool = True
    random_query_rate: float = 0.1  # standalone random runs only
    online_epsilon: float = 0.05
    response_smoothing: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.update_cadence < 1:
            raise ValueError("update_cadence must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0.0 < self.test_holdout_fraction < 1.0:
            raise ValueError("test_holdout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrajectoryPoint:
    instances_seen: int
    queries_issued: int
    labels_used: int
    recall: float


@dataclass
class RunResult:
    policy: str
    repeat: int
    seed: int
    queries_issued: int = 0
    labels_obtained: int = 0  # answered queries
    trajectory: list = field(default_factory=list)
    final_rates: np.ndarray | None = None
    issued_by_hour: np.ndarray | None = None
    answered_by_hour: np.ndarray | None = None

    @property
    def answered_ratio(self) -> float:
        return self.labels_obtained / self.queries_issued if self.queries_issued else 0.0

    @property
    def final_recall(self) -> float:
        return self.trajectory[-1].recall


def _truth_label(instance, profile: SubjectProfile, scheme: LabelScheme):
    return map_label(bucketize(instance.latent_intensity, profile.report_thresholds), scheme)


def build_training_pool(population, slots_per_subject: int, scheme: LabelScheme = DEFAULT_SCHEME):
    """Pool every instance of every population subject into (X, y) arrays."""
    rows, labels = [], []
    for profile in population:
        for inst in step_stream(profile, slots_per_subject):
            y = _truth_label(inst, profile, scheme)
            if y is not None:
                rows.append(inst.features.as_array())
                labels.append(y)
    if not rows:
        raise ValueError("population produced no labeled instances")
    return np.array(rows), np.array(labels, dtype=np.int64)


def pretrain(
    population,
    held_out: SubjectProfile,
    slots_per_subject: int = 200,
    forest_cfg: ForestConfig = ForestConfig(),
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> ForestModel:
    """Leave-subject-out pretraining on the pooled population instances."""
    if not population:
        raise ValueError("population must contain at least one subject")
    if any(p.seed == held_out.seed for p in population):
        raise ValueError("held-out subject must not appear in the population")
    pool = build_training_pool(population, slots_per_subject, scheme)
    return train(pool, forest_cfg)


def _split_stream(stream, holdout_fraction: float):
    n_test = max(1, int(round(len(stream) * holdout_fraction)))
    split = len(stream) - n_test
    if split < 1:
        raise ValueError("stream too short for the requested holdout")
    return stream[:split], stream[split:]


def _test_arrays(tail, profile: SubjectProfile, scheme: LabelScheme):
    rows, labels = [], []
    for inst in tail:
        y = _truth_label(inst, profile, scheme)
        if y is not None:
            rows.append(inst.features.as_array())
            labels.append(y)
    X = np.array(rows)
    y = np.array(labels, dtype=np.int64)
    if not (y == 1).any():
        raise ValueError("holdout tail contains no positive instances; use a longer stream")
    return X, y


class _Lane:
    """One policy's evolving state within a run."""

    def __init__(self, policy, model, agent, rng):
        self.policy = policy
        self.model = model
        self.agent = agent
        self.rng = rng
        self.profile = new_profile()
        self.last_selected_ts = None
        self.collected_X: list = []
        self.collected_y: list = []
        self.events: list = []
        self.result: RunResult | None = None


def _minutes_since(last_ts, now) -> float:
    if last_ts is None:
        return math.inf
    return (now - last_ts).total_seconds() / 60.0


def _wanted_indices(lane: _Lane, block, scores, start_idx, epsilon):
    wanted = []
    for offset, inst in enumerate(block):
        s = build_state(
            scores[offset],
            _minutes_since(lane.last_selected_ts, inst.timestamp),
            lane.profile,
            inst.timestamp,
        )
        if select_action(lane.agent, s, epsilon, lane.rng) == 1:
            wanted.append(start_idx + offset)
            lane.last_selected_ts = inst.timestamp
    return wanted


def _downsample(indices, budget, rng):
    if budget >= len(indices):
        return list(indices)
    keep = rng.choice(len(indices), size=budget, replace=False)
    return [indices[i] for i in sorted(keep)]


def _run_lanes(
    lanes,
    subject,
    train_part,
    test_X,
    test_y,
    pool_X,
    pool_y,
    cfg: ExperimentConfig,
    forest_cfg: ForestConfig,
    scheme: LabelScheme,
    repeat_idx: int,
    seed_seq: np.random.SeedSequence,
    matched: bool,
) -> dict:
    draw_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    response_draws = draw_rng.random(len(train_part))
    train_end_ts = train_part[-1].timestamp

    repeat_seed = int(seed_seq.generate_state(1)[0])
    for lane in lanes:
        initial_recall = evaluate_recall(lane.model, (test_X, test_y))
        lane.result = RunResult(
            policy=lane.policy,
            repeat=repeat_idx,
            seed=repeat_seed,
            trajectory=[TrajectoryPoint(0, 0, 0, initial_recall)],
        )

    K = cfg.update_cadence
    if len(train_part) < K:
        raise ValueError("stream training portion is shorter than the update cadence")

    for start in range(0, len(train_part), K):
        block = train_part[start : start + K]
        features = np.stack([inst.features.as_array() for inst in block])

        wanted_by_lane = {}
        for lane in lanes:
            if lane.policy == "random":
                continue  # selection decided after the budget is known
            scores = predict_raw(lane.model, features)
            wanted_by_lane[lane.policy] = _wanted_indices(
                lane, block, scores, start, cfg.online_epsilon
            )

        if matched:
            budget = min(len(w) for w in wanted_by_lane.values()) if wanted_by_lane else 0
        else:
            budget = None

        for lane in lanes:
            if lane.policy == "random":
                if matched:
                    picks = lane.rng.choice(
                        len(block), size=min(budget, len(block)), replace=False
                    )
                    submitted = [start + int(i) for i in sorted(picks)]
                else:
                    mask = lane.rng.random(len(block)) < cfg.random_query_rate
                    submitted = [start + int(i) for i in np.nonzero(mask)[0]]
            else:
                wanted = wanted_by_lane[lane.policy]
                submitted = _downsample(wanted, budget, lane.rng) if matched else wanted

            for idx in submitted:
                inst = train_part[idx]
                lane.result.queries_issued += 1
                level = respond(
                    subject, inst, inst.timestamp, rng=None, draw=response_draws[idx]
                )
                answered = level is not None
                lane.events.append((inst.timestamp.hour, True, answered))
                if answered:
                    lane.result.labels_obtained += 1
                    label = map_label(level, scheme)
                    if label is not None:
                        if inst.timestamp > train_end_ts:
                            raise RuntimeError("leakage guard: collected label from the holdout tail")
                        lane.collected_X.append(inst.features.as_array())
                        lane.collected_y.append(label)

        for lane in lanes:
            lane.profile = update_response_profile(
                lane.profile, lane.events, cfg.response_smoothing
            )
            lane.events = []
            if lane.collected_X:
                X = np.vstack([pool_X, np.array(lane.collected_X)])
                y = np.concatenate([pool_y, np.array(lane.collected_y, dtype=np.int64)])
            else:
                X, y = pool_X, pool_y
            retrain_seed = int(lane.rng.integers(2**31 - 1))
            lane.model = train(
                (X, y),
                ForestConfig(
                    n_trees=forest_cfg.n_trees,
                    max_depth=forest_cfg.max_depth,
                    min_samples_split=forest_cfg.min_samples_split,
                    features_per_split=forest_cfg.features_per_split,
                    bootstrap=forest_cfg.bootstrap,
                    seed=retrain_seed,
                ),
            )
            lane.result.trajectory.append(
                TrajectoryPoint(
                    instances_seen=start + len(block),
                    queries_issued=lane.result.queries_issued,
                    labels_used=len(lane.collected_y),
                    recall=evaluate_recall(lane.model, (test_X, test_y)),
                )
            )

    out = {}
    for lane in lanes:
        lane.result.final_rates = lane.profile.rate.copy()
        lane.result.issued_by_hour = lane.profile.issued.copy()
        lane.result.answered_by_hour = lane.profile.answered.copy()
        out[lane.policy] = lane.result
    return out


_STREAM_CACHE: dict = {}


def _get_stream(subject: SubjectProfile, n_slots: int):
    key = (subject.seed, n_slots)
    if key not in _STREAM_CACHE:
        _STREAM_CACHE[key] = step_stream(subject, n_slots)
    return _STREAM_CACHE[key]


def _run_repeat(args):
    (cfg, subject, pretrained, pool_X, pool_y, agents, policies, forest_cfg,
     scheme, repeat_idx) = args
    stream = _get_stream(subject, cfg.stream_length_slots)
    train_part, tail = _split_stream(stream, cfg.test_holdout_fraction)
    test_X, test_y = _test_arrays(tail, subject, scheme)

    seed_seq = np.random.SeedSequence([cfg.seed, repeat_idx])
    lane_seeds = seed_seq.spawn(len(policies) + 1)
    lanes = [
        _Lane(policy, pretrained, agents.get(policy), np.random.default_rng(lane_seeds[i]))
        for i, policy in enumerate(policies)
    ]
    matched = (
        cfg.query_budget_matching
        and len(policies) >= 2
        and any(p != "random" for p in policies)
    )
    return _run_lanes(
        lanes, subject, train_part, test_X, test_y, pool_X, pool_y,
        cfg, forest_cfg, scheme, repeat_idx, lane_seeds[-1], matched,
    )


def run_experiment(
    cfg: ExperimentConfig,
    subject: SubjectProfile,
    pretrained: ForestModel,
    pool,
    agents: dict,
    policies,
    forest_cfg: ForestConfig,
    scheme: LabelScheme = DEFAULT_SCHEME,
    parallel: int = 1,
) -> dict:
    """Run cfg.repeats repeats of the given policies; returns
    {policy: [RunResult per repeat]} with byte-reproducible results."""
    policies = list(policies)
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}")
        if p != "random" and agents.get(p) is None:
            raise ValueError(f"policy {p!r} requires a trained agent checkpoint")
    pool_X, pool_y = pool
    _get_stream(subject, cfg.stream_length_slots)  # warm the cache pre-fork

    tasks = [
        (cfg, subject, pretrained, pool_X, pool_y, agents, policies, forest_cfg,
         scheme, r)
        for r in range(cfg.repeats)
    ]
    if parallel > 1 and cfg.repeats > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool_exec:
            per_repeat = list(pool_exec.map(_run_repeat, tasks))
    else:
        per_repeat = [_run_repeat(t) for t in tasks]

    results = {p: [rep[p] for rep in per_repeat] for p in policies}
    return results


def run_policy(
    cfg: ExperimentConfig,
    subject: SubjectProfile,
    pretrained: ForestModel,
    agent: QNetwork | None,
    pool,
    forest_cfg: ForestConfig,
    scheme: LabelScheme = DEFAULT_SCHEME,
    parallel: int = 1,
) -> list:
    """All repeats of a single policy (no budget matching)."""
    if cfg.policy != "random" and agent is None:
        raise ValueError(f"policy {cfg.policy!r} requires a trained agent")
    results = run_experiment(
        cfg, subject, pretrained, pool, {cfg.policy: agent}, [cfg.policy],
        forest_cfg, scheme, parallel,
    )
    return results[cfg.policy]


def compare(
    cfg: ExperimentConfig,
    subject: SubjectProfile,
    pretrained: ForestModel,
    agent_context: QNetwork,
    agent_noncontext: QNetwork,
    pool,
    forest_cfg: ForestConfig,
    scheme: LabelScheme = DEFAULT_SCHEME,
    parallel: int = 1,
) -> dict:
    """All three policies in lockstep with budget matching per block."""
    agents = {"al_context": agent_context, "al_noncontext": agent_noncontext}
    return run_experiment(
        cfg, subject, pretrained, pool, agents, list(POLICIES), forest_cfg,
        scheme, parallel,
    )


def build_offline_episodes(
    population,
    classifier: ForestModel,
    reward_cfg: RewardConfig,
    slots_per_subject: int = 300,
    update_cadence: int = 100,
    response_smoothing: float = 0.1,
    seed: int = 0,
    scheme: LabelScheme = DEFAULT_SCHEME,
):
    """States for offline agent pretraining, one episode per population subject.

    The builder walks each subject's stream with the fixed pretrained
    classifier, assumes a query wherever the reward itself favors querying
    (so time-since-query dynamics resemble deployment), draws responses from
    the subject's responsiveness, and refreshes the response-rate estimate at
    the experiment cadence so s3 covers its realistic range.
    """
    episodes = []
    for profile in population:
        stream = step_stream(profile, slots_per_subject)
        rng = np.random.default_rng(np.random.SeedSequence([seed, profile.seed]))
        features = np.stack([inst.features.as_array() for inst in stream])
        scores = predict_raw(classifier, features)
        est = new_profile()
        last_sel = None
        events = []
        states = []
        for i, inst in enumerate(stream):
            s = build_state(
                scores[i], _minutes_since(last_sel, inst.timestamp), est, inst.timestamp
            )
            states.append(s)
            if reward(s, 1, reward_cfg) > reward(s, 0, reward_cfg):
                last_sel = inst.timestamp
                answered = rng.random() < profile.responsiveness[inst.timestamp.hour]
                events.append((inst.timestamp.hour, True, answered))
            if (i + 1) % update_cadence == 0:
                est = update_response_profile(est, events, response_smoothing)
                events = []
        episodes.append(states)
    return episodes


def uniform_state_episodes(n_episodes: int, episode_length: int, seed: int = 0):
    """Episodes of uniformly sampled states, [0,1]^4.

    Mixed into offline pretraining they cover state regions the realistic
    streams visit rarely, so the value estimates stay faithful off the beaten
    path instead of extrapolating.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC05E]))
    episodes = []
    for _ in range(n_episodes):
        draws = rng.random((episode_length, 4))
        episodes.append([AgentState(*row) for row in draws])
    return episodes


def make_episode_cycler(episodes):
    """Zero-argument callable cycling through the episode list."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("need at least one episode")
    counter = {"i": 0}

    def next_episode():
        ep = episodes[counter["i"] % len(episodes)]
        counter["i"] += 1
        return ep

    return next_episode


def _smoothed(values, window: int):
    return [float(np.mean(values[max(0, k - window + 1) : k + 1])) for k in range(len(values))]


def queries_to_target(results_by_policy: dict, target_recall: float, smooth_window: int = 3):
    """Per policy: mean/std of the first query count whose smoothed recall
    reaches the target, plus the repeats that never reach it."""
    summary = {}
    for policy, runs in results_by_policy.items():
        values = []
        not_reached = 0
        for run in runs:
            recalls = [p.recall for p in run.trajectory]
            smoothed = _smoothed(recalls, smooth_window)
            hit = next(
                (run.trajectory[k].queries_issued for k, v in enumerate(smoothed) if v >= target_recall),
                NOT_REACHED,
            )
            if hit is NOT_REACHED:
                not_reached += 1
            else:
                values.append(hit)
        summary[policy] = {
            "mean": float(np.mean(values)) if values else math.nan,
            "std": float(np.std(values)) if values else math.nan,
            "values": values,
            "not_reached": not_reached,
        }
    return summary


def _preamble(master_seed: int) -> str:
    return f"build=stressloop-{__version__} master_seed={master_seed}"


def _open_with_preamble(path, master_seed: int):
    f = open(path, "w", newline="")
    f.write(f"# {_preamble(master_seed)}\n")
    return f


def write_results_csv(results_by_policy: dict, path, master_seed: int) -> None:
    with _open_with_preamble(path, master_seed) as f:
        writer = csv.writer(f)
        writer.writerow(
            ["policy", "repeat", "queries_issued", "labels_obtained", "answered_ratio",
             "final_recall"]
        )
        for policy in results_by_policy:
            for run in results_by_policy[policy]:
                writer.writerow(
                    [policy, run.repeat, run.queries_issued, run.labels_obtained,
                     repr(run.answered_ratio), repr(run.final_recall)]
                )


def write_trajectory_csv(results_by_policy: dict, path, master_seed: int) -> None:
    with _open_with_preamble(path, master_seed) as f:
        writer = csv.writer(f)
        writer.writerow(
            ["policy", "repeat", "instances_seen", "queries_issued", "labels_used", "recall"]
        )
        for policy in results_by_policy:
            for run in results_by_policy[policy]:
                for p in run.trajectory:
                    writer.writerow(
                        [policy, run.repeat, p.instances_seen, p.queries_issued,
                         p.labels_used, repr(p.recall)]
                    )


def write_summary_csv(
    results_by_policy: dict, path, master_seed: int, target_recall: float | None = None
) -> None:
    targets = (
        queries_to_target(results_by_policy, target_recall)
        if target_recall is not None
        else None
    )
    with _open_with_preamble(path, master_seed) as f:
        writer = csv.writer(f)
        writer.writerow(
            ["policy", "repeats", "mean_queries_issued", "mean_labels_obtained",
             "mean_answered_ratio", "mean_final_recall", "target_recall",
             "mean_queries_to_target", "std_queries_to_target", "n_not_reached"]
        )
        for policy, runs in results_by_policy.items():
            row = [
                policy,
                len(runs),
                repr(float(np.mean([r.queries_issued for r in runs]))),
                repr(float(np.mean([r.labels_obtained for r in runs]))),
                repr(float(np.mean([r.answered_ratio for r in runs]))),
                repr(float(np.mean([r.final_recall for r in runs]))),
            ]
            if targets is None:
                row += ["", "", "", ""]
            else:
                t = targets[policy]
                row += [repr(float(target_recall)), repr(t["mean"]), repr(t["std"]),
                        t["not_reached"]]
            writer.writerow(row)


def write_response_rates_csv(results_by_policy: dict, path, master_seed: int) -> None:
    with _open_with_preamble(path, master_seed) as f:
        writer = csv.writer(f)
        writer.writerow(["policy", "hour", "mean_rate", "issued", "answered"])
        for policy, runs in results_by_policy.items():
            rates = np.mean([r.final_rates for r in runs], axis=0)
            issued = np.sum([r.issued_by_hour for r in runs], axis=0)
            answered = np.sum([r.answered_by_hour for r in runs], axis=0)
            for h in range(24):
                writer.writerow(
                    [policy, h, repr(float(rates[h])), int(issued[h]), int(answered[h])]
                )
