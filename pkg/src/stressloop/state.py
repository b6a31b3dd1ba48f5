"""Agent state construction and the per-hour query-response profile.

The state vector has four components, each normalized to [0, 1]:
classifier raw score, time since the last query (clipped at 180 minutes),
response rate of the current hour bucket, and fractional time of day.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime

import numpy as np

__all__ = [
    "AgentState",
    "ResponseProfile",
    "new_profile",
    "build_state",
    "update_response_profile",
    "write_profile_csv",
    "CLIP_MINUTES",
    "INITIAL_RATE",
    "DEFAULT_SMOOTHING",
]

CLIP_MINUTES = 180.0
INITIAL_RATE = 0.5  # uninformed prior; keeps early exploration unsuppressed
DEFAULT_SMOOTHING = 0.1
HOURS = 24


@dataclass(frozen=True)
class AgentState:
    s1: float  # classifier raw score
    s2: float  # normalized time since last query
    s3: float  # response rate of current hour bucket
    s4: float  # normalized time of day

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3, self.s4], dtype=float)


@dataclass(frozen=True)
class ResponseProfile:
    """Per-hour response-rate estimate with issued/answered counters."""

    rate: np.ndarray  # (24,) float in [0, 1]
    issued: np.ndarray  # (24,) int
    answered: np.ndarray  # (24,) int

    def __post_init__(self):
        if self.rate.shape != (HOURS,):
            raise ValueError("profile arrays must have one slot per hour")
        if np.any(self.rate < 0) or np.any(self.rate > 1):
            raise ValueError("rates must lie in [0, 1]")
        if np.any(self.answered > self.issued) or np.any(self.issued < 0):
            raise ValueError("counters must satisfy 0 <= answered <= issued")


def new_profile(initial_rate: float = INITIAL_RATE) -> ResponseProfile:
    return ResponseProfile(
        rate=np.full(HOURS, float(initial_rate)),
        issued=np.zeros(HOURS, dtype=np.int64),
        answered=np.zeros(HOURS, dtype=np.int64),
    )


def build_state(
    raw_score: float,
    minutes_since_last_query: float,
    profile: ResponseProfile,
    timestamp: datetime,
) -> AgentState:
    """Pure state construction; minutes may be math.inf before the first query."""
    if minutes_since_last_query < 0:
        raise ValueError("minutes_since_last_query must be non-negative")
    s2 = min(minutes_since_last_query, CLIP_MINUTES) / CLIP_MINUTES
    hour_fraction = (
        timestamp.hour
        + timestamp.minute / 60.0
        + timestamp.second / 3600.0
        + timestamp.microsecond / 3.6e9
    )
    return AgentState(
        s1=float(raw_score),
        s2=float(s2),
        s3=float(profile.rate[timestamp.hour]),
        s4=hour_fraction / 24.0,
    )


def update_response_profile(
    profile: ResponseProfile,
    events,
    smoothing: float = DEFAULT_SMOOTHING,
) -> ResponseProfile:
    """Fold (hour, queried, answered) events into a new profile.

    Each issued query moves its hour's rate by an exponential moving average
    toward 1 (answered) or 0 (ignored). Hours without queries keep their rate.
    """
    rate = profile.rate.copy()
    issued = profile.issued.copy()
    answered = profile.answered.copy()
    for hour, queried, was_answered in events:
        hour = int(hour)
        if not 0 <= hour < HOURS:
            raise ValueError(f"hour out of range: {hour}")
        if was_answered and not queried:
            raise ValueError("event marks an answer without a query")
        if not queried:
            continue
        issued[hour] += 1
        if was_answered:
            answered[hour] += 1
        outcome = 1.0 if was_answered else 0.0
        rate[hour] = (1.0 - smoothing) * rate[hour] + smoothing * outcome
    return ResponseProfile(rate=rate, issued=issued, answered=answered)


PROFILE_CSV_COLUMNS = ("hour", "rate", "issued", "answered")


def write_profile_csv(profile: ResponseProfile, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PROFILE_CSV_COLUMNS)
        for h in range(HOURS):
            writer.writerow(
                [h, repr(float(profile.rate[h])), int(profile.issued[h]), int(profile.answered[h])]
            )
