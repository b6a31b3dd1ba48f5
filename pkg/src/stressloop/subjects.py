"""Synthetic subjects: latent stress dynamics, NN-interval physiology,
self-report bias, and hour-dependent query-response behavior.

A subject is a two-state Markov chain over 15-minute slots. Stress shortens
the mean inter-beat interval and suppresses its variability. Reports map a
noisy latent intensity through per-subject thresholds, which reproduces the
between-subject label-bias phenomenon. Parameters are chosen for
separability-controlled experiments, not physiological fidelity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm

from .hrv import FeatureVector, NnSeries, compute_features

__all__ = [
    "SubjectProfile",
    "Instance",
    "generate_subject",
    "step_stream",
    "respond",
    "bucketize",
    "stream_to_csv",
    "profile_to_json",
    "profile_from_json",
    "SLOT_MINUTES",
    "DEFAULT_START_TIME",
]

SLOT_MINUTES = 15
WINDOW_SECONDS = 120.0
NN_AUTOCORR = 0.3  # lag-1 correlation between successive intervals
NN_FLOOR_MS = 250.0
INTENSITY_CALM_MEAN = 0.3
INTENSITY_STRESS_MEAN = 0.7
INTENSITY_STD = 0.08
DEFAULT_START_TIME = datetime(2021, 1, 1, 0, 0, 0)

_STREAM_KEY = 0x57E4  # keeps stream draws independent of profile sampling


@dataclass(frozen=True)
class SubjectProfile:
    seed: int
    subject_id: str
    baseline_ibi_ms: tuple  # (mean, std)
    stress_ibi_shift_ms: float  # negative: heart beats faster under stress
    hrv_suppression: float  # multiplier < 1 on interval std under stress
    stress_transition: np.ndarray  # 2x2 row-stochastic, 15-minute slots
    hourly_stress_modifier: np.ndarray  # (24,) multipliers on stress entry prob
    responsiveness: np.ndarray  # (24,) answer probabilities per hour
    report_thresholds: np.ndarray  # (4,) increasing cuts on latent intensity
    target_minority_ratio: float
    breathing_baseline: float = 14.0
    breathing_stress_shift: float = 3.5
    # circadian swing of the mean IBI (longest intervals near phase_hour)
    circadian_ibi_amplitude_ms: float = 35.0
    circadian_phase_hour: float = 4.0

    def validate(self) -> None:
        t = np.asarray(self.stress_transition, dtype=float)
        if t.shape != (2, 2) or np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0):
            raise ValueError("stress_transition must be a 2x2 row-stochastic matrix")
        r = np.asarray(self.responsiveness, dtype=float)
        if r.shape != (24,) or np.any(r < 0) or np.any(r > 1):
            raise ValueError("responsiveness must be 24 probabilities")
        m = np.asarray(self.hourly_stress_modifier, dtype=float)
        if m.shape != (24,) or np.any(m < 0):
            raise ValueError("hourly_stress_modifier must be 24 non-negative values")
        c = np.asarray(self.report_thresholds, dtype=float)
        if c.shape != (4,) or np.any(np.diff(c) <= 0):
            raise ValueError("report_thresholds must be 4 strictly increasing values")
        if not 0.0 < self.hrv_suppression < 1.0:
            raise ValueError("hrv_suppression must lie in (0, 1)")
        mean, std = self.baseline_ibi_ms
        if mean <= 0 or std <= 0:
            raise ValueError("baseline IBI mean and std must be positive")


@dataclass(frozen=True)
class Instance:
    """One 15-minute slot's sensing window with latent ground truth."""

    subject_id: str
    timestamp: datetime
    nn_series: NnSeries
    features: FeatureVector
    latent_state: int  # 0 calm, 1 stressed
    latent_intensity: float
    collected_label: int | None = None


def _profile_fields() -> set:
    return {f.name for f in fields(SubjectProfile)}


def generate_subject(seed: int, overrides: dict | None = None) -> SubjectProfile:
    """Sample one subject deterministically from the population distribution.

    The sampler keeps every subject's stressed-report ratio inside the
    [2.5%, 20.8%] band. Overrides replace sampled fields and are validated.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    ratio = float(rng.uniform(0.025, 0.208))
    stationary = min(1.25 * ratio, 0.35)
    mean_episode_slots = float(rng.uniform(3.0, 10.0))
    p_exit = 1.0 / mean_episode_slots
    p_enter = stationary * p_exit / (1.0 - stationary)
    transition = np.array([[1.0 - p_enter, p_enter], [p_exit, 1.0 - p_exit]])

    modifiers = rng.uniform(0.5, 1.5, size=24)
    modifiers = modifiers / modifiers.mean()

    # diurnal responsiveness: suppressed at night, jittered by hour
    base = rng.uniform(0.4, 0.8)
    responsiveness = np.clip(base + rng.uniform(-0.15, 0.15, size=24), 0.05, 0.95)
    responsiveness[0:6] *= 0.3

    # report thresholds from the latent-intensity mixture: the c3 cut fixes the
    # stressed-report mass at the target ratio, c4 keeps "extremely" rare
    frac_calm_level0 = rng.uniform(0.45, 0.8)
    c1 = INTENSITY_CALM_MEAN + INTENSITY_STD * norm.ppf(frac_calm_level0)
    frac_stress_high = ratio / stationary
    c3 = INTENSITY_STRESS_MEAN + INTENSITY_STD * norm.ppf(1.0 - frac_stress_high)
    c2 = c1 + (c3 - c1) * rng.uniform(0.35, 0.7)
    frac_extreme = rng.uniform(0.02, 0.10)
    c4 = INTENSITY_STRESS_MEAN + INTENSITY_STD * norm.ppf(1.0 - frac_extreme)

    profile = SubjectProfile(
        seed=int(seed),
        subject_id=f"subj-{int(seed):05d}",
        baseline_ibi_ms=(float(rng.uniform(800.0, 980.0)), float(rng.uniform(40.0, 70.0))),
        stress_ibi_shift_ms=float(rng.uniform(-135.0, -60.0)),
        hrv_suppression=float(rng.uniform(0.5, 0.8)),
        stress_transition=transition,
        hourly_stress_modifier=modifiers,
        responsiveness=responsiveness,
        report_thresholds=np.array([c1, c2, c3, c4]),
        target_minority_ratio=ratio,
        breathing_baseline=float(rng.uniform(11.0, 17.0)),
        breathing_stress_shift=float(rng.uniform(1.5, 4.5)),
        circadian_ibi_amplitude_ms=float(rng.uniform(20.0, 50.0)),
        circadian_phase_hour=float(rng.uniform(3.0, 5.0)),
    )
    if overrides:
        unknown = set(overrides) - _profile_fields()
        if unknown:
            raise ValueError(f"unknown profile overrides: {sorted(unknown)}")
        coerced = {}
        for key, value in overrides.items():
            if key in ("stress_transition", "hourly_stress_modifier", "responsiveness",
                       "report_thresholds"):
                value = np.asarray(value, dtype=float)
            elif key == "baseline_ibi_ms":
                value = (float(value[0]), float(value[1]))
            coerced[key] = value
        profile = replace(profile, **coerced)
    try:
        profile.validate()
    except ValueError as exc:
        raise ValueError(f"invalid subject configuration: {exc}") from exc
    return profile


def bucketize(intensity: float, thresholds) -> int:
    """Stress level 0..4: the number of thresholds at or below the intensity."""
    return int(np.searchsorted(np.asarray(thresholds), intensity, side="right"))


def _draw_window(rng, mean_ms: float, std_ms: float) -> np.ndarray:
    """AR(1) intervals with stationary marginal N(mean, std) covering 120 s."""
    window_ms = WINDOW_SECONDS * 1000.0
    intervals = np.empty(0)
    while intervals.sum() < window_ms:
        n = int(window_ms / max(mean_ms - 4.0 * std_ms, NN_FLOOR_MS)) + 16
        eps = rng.standard_normal(n)
        w = np.sqrt(1.0 - NN_AUTOCORR**2) * std_ms * eps
        w[0] = std_ms * eps[0]
        chunk = mean_ms + lfilter([1.0], [1.0, -NN_AUTOCORR], w)
        intervals = np.concatenate([intervals, np.maximum(chunk, NN_FLOOR_MS)])
    n_keep = int(np.searchsorted(np.cumsum(intervals), window_ms)) + 1
    return intervals[: min(n_keep, intervals.size)]


def step_stream(
    profile: SubjectProfile,
    n_slots: int,
    start_time: datetime = DEFAULT_START_TIME,
) -> list[Instance]:
    """Generate one instance per 15-minute slot; reproducible from the profile
    seed and slot count alone (longer streams extend shorter ones)."""
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([profile.seed, _STREAM_KEY]))
    p_enter_base = float(profile.stress_transition[0, 1])
    p_exit = float(profile.stress_transition[1, 0])
    mean_ibi, std_ibi = profile.baseline_ibi_ms

    instances = []
    state = 0
    ts = start_time
    for _ in range(n_slots):
        if state == 0:
            p_enter = min(p_enter_base * profile.hourly_stress_modifier[ts.hour], 1.0)
            state = 1 if rng.random() < p_enter else 0
        else:
            state = 0 if rng.random() < p_exit else 1

        hour_frac = ts.hour + ts.minute / 60.0
        circadian = profile.circadian_ibi_amplitude_ms * math.cos(
            2.0 * math.pi * (hour_frac - profile.circadian_phase_hour) / 24.0
        )
        mean = mean_ibi + circadian + (profile.stress_ibi_shift_ms if state else 0.0)
        std = std_ibi * (profile.hrv_suppression if state else 1.0)
        intervals = _draw_window(rng, mean, std)

        intensity = float(
            np.clip(
                (INTENSITY_STRESS_MEAN if state else INTENSITY_CALM_MEAN)
                + INTENSITY_STD * rng.standard_normal(),
                0.0,
                1.0,
            )
        )
        br = max(
            4.0,
            profile.breathing_baseline
            + profile.breathing_stress_shift * state
            + 1.5 * rng.standard_normal(),
        )
        series = NnSeries(intervals, window_seconds=WINDOW_SECONDS, breathing_rate=br)
        instances.append(
            Instance(
                subject_id=profile.subject_id,
                timestamp=ts,
                nn_series=series,
                features=compute_features(series),
                latent_state=state,
                latent_intensity=intensity,
            )
        )
        ts = ts + timedelta(minutes=SLOT_MINUTES)
    return instances


def respond(
    profile: SubjectProfile,
    instance: Instance,
    query_time: datetime,
    rng: np.random.Generator,
    draw: float | None = None,
) -> int | None:
    """Answer a query with the hour's probability; None when ignored.

    A precomputed uniform draw may be supplied for paired comparisons.
    """
    u = rng.random() if draw is None else draw
    if u >= profile.responsiveness[query_time.hour]:
        return None
    return bucketize(instance.latent_intensity, profile.report_thresholds)


def stream_to_csv(instances, path) -> None:
    """Write the interval rows consumed by the feature batch mode."""
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "timestamp", "interval_ms"])
        for inst in instances:
            ts = inst.timestamp.isoformat()
            for interval in inst.nn_series.intervals:
                writer.writerow([inst.subject_id, ts, repr(float(interval))])


def profile_to_json(profile: SubjectProfile, path) -> None:
    payload = {
        "seed": profile.seed,
        "subject_id": profile.subject_id,
        "baseline_ibi_ms": list(profile.baseline_ibi_ms),
        "stress_ibi_shift_ms": profile.stress_ibi_shift_ms,
        "hrv_suppression": profile.hrv_suppression,
        "stress_transition": np.asarray(profile.stress_transition).tolist(),
        "hourly_stress_modifier": np.asarray(profile.hourly_stress_modifier).tolist(),
        "responsiveness": np.asarray(profile.responsiveness).tolist(),
        "report_thresholds": np.asarray(profile.report_thresholds).tolist(),
        "target_minority_ratio": profile.target_minority_ratio,
        "breathing_baseline": profile.breathing_baseline,
        "breathing_stress_shift": profile.breathing_stress_shift,
        "circadian_ibi_amplitude_ms": profile.circadian_ibi_amplitude_ms,
        "circadian_phase_hour": profile.circadian_phase_hour,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def profile_from_json(path) -> SubjectProfile:
    with open(path) as f:
        payload = json.load(f)
    profile = SubjectProfile(
        seed=int(payload["seed"]),
        subject_id=str(payload["subject_id"]),
        baseline_ibi_ms=tuple(payload["baseline_ibi_ms"]),
        stress_ibi_shift_ms=float(payload["stress_ibi_shift_ms"]),
        hrv_suppression=float(payload["hrv_suppression"]),
        stress_transition=np.asarray(payload["stress_transition"], dtype=float),
        hourly_stress_modifier=np.asarray(payload["hourly_stress_modifier"], dtype=float),
        responsiveness=np.asarray(payload["responsiveness"], dtype=float),
        report_thresholds=np.asarray(payload["report_thresholds"], dtype=float),
        target_minority_ratio=float(payload["target_minority_ratio"]),
        breathing_baseline=float(payload["breathing_baseline"]),
        breathing_stress_shift=float(payload["breathing_stress_shift"]),
        circadian_ibi_amplitude_ms=float(payload["circadian_ibi_amplitude_ms"]),
        circadian_phase_hour=float(payload["circadian_phase_hour"]),
    )
    profile.validate()
    return profile
