"""Dataset assembly: recordings, recording-granular splits, mini-batch
samplers (frames and consecutive pairs), and train-set normalization.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .sim import LOG_COLUMNS, LOG_MAGIC, EpisodeLog

RECORDING_MAGIC = "# steerlab-recording v1"


@dataclass
class Recording:
    """One expert drive: per-step observations and steering labels."""

    observations: np.ndarray  # (N, dim)
    labels_deg: np.ndarray  # (N,)
    t: np.ndarray
    s: np.ndarray
    fork_flag: np.ndarray  # (N,) bool, within a fork window
    track_seed: int
    dt: float

    def __len__(self) -> int:
        return len(self.labels_deg)


def recording_from_run(log: EpisodeLog, observations: np.ndarray,
                       fork_flag: np.ndarray) -> Recording:
    return Recording(
        observations=np.asarray(observations, dtype=np.float64),
        labels_deg=log.cmd_deg.copy(),
        t=log.t.copy(),
        s=log.s.copy(),
        fork_flag=np.asarray(fork_flag, dtype=bool),
        track_seed=int(log.config.get("track_seed", -1)),
        dt=log.dt,
    )


def save_recording(rec: Recording, log: EpisodeLog, path) -> None:
    """Episode-log schema plus label, fork-flag, and observation columns."""
    obs_cols = [f"obs_{i}" for i in range(rec.observations.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(RECORDING_MAGIC + "\n")
        fh.write(f"# track_seed={rec.track_seed} dt={rec.dt!r}\n")
        writer = csv.writer(fh)
        writer.writerow(list(LOG_COLUMNS) + ["label_deg", "fork_flag"] + obs_cols)
        base = np.stack([getattr(log, c) for c in LOG_COLUMNS], axis=1)
        extra = np.concatenate([rec.labels_deg[:, None],
                                rec.fork_flag[:, None].astype(np.float64),
                                rec.observations], axis=1)
        for row in np.concatenate([base, extra], axis=1):
            writer.writerow([repr(float(v)) for v in row])


def load_recording(path) -> Recording:
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != RECORDING_MAGIC:
            raise ValueError(f"not a recording file (header {magic!r})")
        meta = fh.readline().rstrip("\n").removeprefix("# ").split()
        kv = dict(item.split("=") for item in meta)
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    col = {name: i for i, name in enumerate(header)}
    obs_idx = [col[h] for h in header if h.startswith("obs_")]
    return Recording(
        observations=data[:, obs_idx].copy(),
        labels_deg=data[:, col["label_deg"]].copy(),
        t=data[:, col["t"]].copy(),
        s=data[:, col["s"]].copy(),
        fork_flag=data[:, col["fork_flag"]] > 0.5,
        track_seed=int(kv["track_seed"]),
        dt=float(kv["dt"]),
    )


# ---------------------------------------------------------------------------
# splits


def split_recordings(recordings, train_fraction: float,
                     seed: int) -> tuple[list, list]:
    """Recording-granular split; train size is floor(fraction * count)."""
    recordings = list(recordings)
    if len(recordings) < 2:
        raise ValueError(f"need >= 2 recordings to split, got {len(recordings)}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(recordings))
    n_train = int(np.floor(train_fraction * len(recordings)))
    n_train = min(max(n_train, 1), len(recordings) - 1)
    train_idx = sorted(order[:n_train])
    val_idx = sorted(order[n_train:])
    return [recordings[i] for i in train_idx], [recordings[i] for i in val_idx]


def stack_frames(recordings) -> tuple[np.ndarray, np.ndarray]:
    obs = np.concatenate([r.observations for r in recordings], axis=0)
    labels = np.concatenate([r.labels_deg for r in recordings])
    return obs, labels


# ---------------------------------------------------------------------------
# batch sampling


class FrameSampler:
    """I.i.d. uniform frames across all recordings."""

    def __init__(self, recordings, batch_size: int, seed: int):
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        recordings = list(recordings)
        if not recordings or sum(len(r) for r in recordings) == 0:
            raise ValueError("empty training set")
        self.recordings = recordings
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.obs, self.labels = stack_frames(recordings)
        self.total = len(self.labels)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rng.integers(0, self.total, size=self.batch_size)
        return self.obs[idx], self.labels[idx]


class PairSampler:
    """Uniform consecutive-frame pairs, never crossing recording boundaries.

    A batch of B pairs is flattened to 2B frames ordered
    [p0_t, p0_t+1, p1_t, p1_t+1, ...].
    """

    def __init__(self, recordings, batch_size: int, seed: int):
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        recordings = [r for r in recordings if len(r) >= 2]
        if not recordings:
            raise ValueError("pair sampling needs recordings of length >= 2")
        self.recordings = recordings
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        pair_counts = np.array([len(r) - 1 for r in recordings])
        self.cum = np.concatenate([[0], np.cumsum(pair_counts)])
        self.total_pairs = int(self.cum[-1])

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.rng.integers(0, self.total_pairs, size=self.batch_size)
        obs_rows, label_rows = [], []
        for f in flat:
            ri = int(np.searchsorted(self.cum, f, side="right")) - 1
            i = int(f - self.cum[ri])
            rec = self.recordings[ri]
            obs_rows.append(rec.observations[i:i + 2])
            label_rows.append(rec.labels_deg[i:i + 2])
        return np.concatenate(obs_rows, axis=0), np.concatenate(label_rows)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    constant_features: np.ndarray  # bool flags where variance was zero

    @classmethod
    def fit(cls, observations: np.ndarray) -> "Normalizer":
        obs = np.asarray(observations, dtype=np.float64)
        if obs.size == 0:
            raise ValueError("cannot fit a normalizer on an empty set")
        mean = obs.mean(axis=0)
        std = obs.std(axis=0)
        constant = std == 0.0
        std = np.where(constant, 1.0, std)
        return cls(mean, std, constant)

    def transform(self, observations: np.ndarray) -> np.ndarray:
        return (np.asarray(observations, dtype=np.float64) - self.mean) / self.std


# ---------------------------------------------------------------------------
# dataset manifest


def save_manifest(path, recording_paths, train_paths, val_paths, extra=None) -> None:
    payload = {
        "version": 1,
        "recordings": [os.fspath(p) for p in recording_paths],
        "train": [os.fspath(p) for p in train_paths],
        "validation": [os.fspath(p) for p in val_paths],
    }
    if extra:
        payload.update(extra)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_manifest(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError(f"unsupported manifest version {payload.get('version')}")
    return payload
