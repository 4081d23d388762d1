"""Off- and on-policy metrics: MAE, whiteness, crash counts, swerve rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import EpisodeLog
from .track import PolylineTracker, Track


@dataclass(frozen=True)
class WhitenessReport:
    w: float  # deg/s
    d: int  # number of successive differences
    dt: float
    source: str  # "command" | "effective"


@dataclass(frozen=True)
class SwerveReport:
    peaks_m: np.ndarray  # (runs, forks) peak deviation toward the branch side
    scores: np.ndarray  # (runs, forks) 1 / 0.5 / 0
    rate: float
    full_m: float
    half_m: float


def whiteness(series_deg, dt: float) -> float:
    """Root-mean-square rate of change of a steering series, deg/s."""
    series = np.asarray(series_deg, dtype=np.float64)
    if series.ndim != 1 or len(series) < 2:
        raise ValueError(f"whiteness needs >= 2 samples, got shape {series.shape}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    diffs = np.diff(series)
    return float(np.sqrt(np.mean(np.square(diffs / dt))))


def mae(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"mae: length mismatch {preds.shape} vs {targets.shape}")
    if preds.size < 1:
        raise ValueError("mae needs at least one sample")
    return float(np.mean(np.abs(preds - targets)))


def crash_count(log: EpisodeLog) -> int:
    return len(log.crash_events)


def whiteness_from_log(log: EpisodeLog, source: str) -> WhitenessReport:
    """Whiteness of an episode's command or effective steering.

    Differences spanning a respawn teleport (rows flagged as crashes) are
    excluded; they measure the reset, not the policy.
    """
    if source == "command":
        series = log.cmd_deg
    elif source == "effective":
        series = log.eff_deg
    else:
        raise ValueError(f"unknown whiteness source {source!r}")
    if len(series) < 2:
        raise ValueError("episode too short for whiteness")
    keep = log.crash_flag[:-1] < 0.5
    diffs = np.diff(series)[keep]
    if len(diffs) < 1:
        raise ValueError("no usable steps for whiteness after crash masking")
    w = float(np.sqrt(np.mean(np.square(diffs / log.dt))))
    return WhitenessReport(w, int(len(diffs)), log.dt, source)


def swerve_rate(logs, track: Track, window_m: float = 20.0,
                full_m: float = 0.5, half_m: float = 0.25) -> SwerveReport:
    """Fraction of fork sections where a run deviated toward the side branch.

    Peak toward-branch deviation >= full_m counts 1, in [half_m, full_m)
    counts 0.5 (a slight swerve), else 0; deviation away from the branch side
    never counts.
    """
    if not track.forks:
        raise ValueError("swerve_rate needs a track with at least one fork")
    logs = list(logs)
    if not logs:
        raise ValueError("swerve_rate needs at least one episode log")
    peaks = np.zeros((len(logs), len(track.forks)))
    for li, log in enumerate(logs):
        tracker = PolylineTracker(track.xy, track.s)
        pos = np.stack([log.x, log.y], axis=1)
        s_arr = np.empty(len(log))
        lat_arr = np.empty(len(log))
        for i, p in enumerate(pos):
            s_arr[i], lat_arr[i], _ = tracker.project(p)
        for fi, fork in enumerate(track.forks):
            in_window = np.abs(s_arr - fork.attach_s) <= window_m
            if not np.any(in_window):
                continue
            toward = lat_arr[in_window] * fork.side
            peaks[li, fi] = max(0.0, float(toward.max()))
    scores = np.where(peaks >= full_m, 1.0, np.where(peaks >= half_m, 0.5, 0.0))
    rate = float(scores.sum() / scores.size)
    return SwerveReport(peaks, scores, rate, full_m, half_m)
