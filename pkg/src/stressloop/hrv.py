"""Time-domain HRV features computed from NN (inter-beat) intervals.

All statistics use population (divide-by-n) standard deviations so that the
Poincaré identities SD1 = SDSD/sqrt(2) and S = pi*SD1*SD2 hold exactly.
Breathing rate is not derivable from NN intervals alone; it is carried as a
side channel on the input series and defaults to 0 with a warning when absent.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "NnSeries",
    "FeatureVector",
    "MissingBreathingRateWarning",
    "FEATURE_NAMES",
    "compute_features",
    "features_from_csv",
]

MIN_INTERVALS = 4

# Column order for batch CSV output and for FeatureVector.as_array().
FEATURE_NAMES = (
    "bpm",
    "ibi",
    "sdnn",
    "sdsd",
    "rmssd",
    "pnn20",
    "pnn50",
    "mad",
    "sd1",
    "sd2",
    "s_area",
    "sd_ratio",
    "br",
)


class MissingBreathingRateWarning(UserWarning):
    """Raised once per call site when a series carries no breathing rate."""


@dataclass(frozen=True)
class NnSeries:
    """One sensing window of inter-beat intervals, in milliseconds."""

    intervals: np.ndarray
    window_seconds: float = 120.0
    breathing_rate: float | None = None  # generator side channel, breaths/min

    def __post_init__(self):
        arr = np.asarray(self.intervals, dtype=float)
        object.__setattr__(self, "intervals", arr)

    def validate(self) -> None:
        if self.intervals.ndim != 1 or self.intervals.size < MIN_INTERVALS:
            raise ValueError(
                f"need at least {MIN_INTERVALS} NN intervals, got {self.intervals.size}"
            )
        if not np.all(np.isfinite(self.intervals)) or np.any(self.intervals <= 0):
            raise ValueError("NN intervals must be finite and strictly positive")


@dataclass(frozen=True)
class FeatureVector:
    bpm: float
    ibi: float
    sdnn: float
    sdsd: float
    rmssd: float
    pnn20: float
    pnn50: float
    mad: float
    sd1: float
    sd2: float
    s_area: float
    sd_ratio: float
    br: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} values, got {values.shape}")
        return cls(**dict(zip(FEATURE_NAMES, values.tolist())))


assert tuple(f.name for f in fields(FeatureVector)) == FEATURE_NAMES


def compute_features(series: NnSeries) -> FeatureVector:
    """Compute the 13 HRV features of one window.

    Raises ValueError for fewer than 4 intervals or any non-positive interval.
    """
    series.validate()
    x = series.intervals

    ibi = float(np.mean(x))
    bpm = 60000.0 / ibi
    sdnn = float(np.std(x))  # population std

    d = np.diff(x)
    sdsd = float(np.std(d))
    rmssd = float(np.sqrt(np.mean(d * d)))
    pnn20 = float(np.mean(np.abs(d) > 20.0))
    pnn50 = float(np.mean(np.abs(d) > 50.0))

    med = np.median(x)
    mad = float(np.median(np.abs(x - med)))

    sd1 = math.sqrt(0.5) * sdsd
    sd2 = math.sqrt(max(0.0, 2.0 * sdnn**2 - 0.5 * sdsd**2))
    s_area = math.pi * sd1 * sd2
    sd_ratio = sd1 / sd2 if sd2 > 0.0 else 0.0

    if series.breathing_rate is None:
        warnings.warn(
            "series carries no breathing rate; br set to 0",
            MissingBreathingRateWarning,
            stacklevel=2,
        )
        br = 0.0
    else:
        br = float(series.breathing_rate)

    return FeatureVector(
        bpm=bpm,
        ibi=ibi,
        sdnn=sdnn,
        sdsd=sdsd,
        rmssd=rmssd,
        pnn20=pnn20,
        pnn50=pnn50,
        mad=mad,
        sd1=sd1,
        sd2=sd2,
        s_area=s_area,
        sd_ratio=sd_ratio,
        br=br,
    )


CSV_INPUT_COLUMNS = ("subject_id", "timestamp", "interval_ms")
CSV_OUTPUT_COLUMNS = ("subject_id", "timestamp") + FEATURE_NAMES


def features_from_csv(in_path, out_path) -> int:
    """Batch mode: one input row per interval, one output row per window.

    A window is a run of consecutive rows sharing (subject_id, timestamp).
    Returns the number of windows written.
    """
    windows: list[tuple[str, str, list[float]]] = []
    with open(in_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(h.strip() for h in header) != CSV_INPUT_COLUMNS:
            raise ValueError(
                f"expected header {','.join(CSV_INPUT_COLUMNS)}, got {','.join(header)}"
            )
        for row in reader:
            if not row:
                continue
            sid, ts, interval = row[0], row[1], float(row[2])
            if windows and windows[-1][0] == sid and windows[-1][1] == ts:
                windows[-1][2].append(interval)
            else:
                windows.append((sid, ts, [interval]))

    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_OUTPUT_COLUMNS)
        with warnings.catch_warnings():
            # real CSV input has no breathing-rate side channel; warn once, not per row
            warnings.simplefilter("once", MissingBreathingRateWarning)
            for sid, ts, intervals in windows:
                feats = compute_features(NnSeries(np.array(intervals)))
                writer.writerow([sid, ts] + [repr(v) for v in feats.as_array().tolist()])
    return len(windows)
