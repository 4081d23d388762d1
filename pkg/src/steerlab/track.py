"""Procedural road network: a smooth main centerline with optional fork branches.

Geometry is a dense polyline (1 m resolution) built by integrating a bounded
random curvature profile. Forks attach tangent-continuously and are placed on
low-curvature stretches so lateral deviation near them is attributable to the
policy, not the road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DS = 1.0  # polyline resolution, meters

FORK_MIN_SEPARATION_M = 160.0
FORK_MARGIN_M = 150.0
FORK_FLAT_WINDOW_M = 40.0  # curvature suppressed here so swerves are policy-caused
FORK_FLAT_TAPER_M = 40.0
FORK_BRANCH_LENGTH_M = 80.0
FORK_RAMP_LENGTH_M = 15.0
FORK_BRANCH_CURVATURE = 0.02
FORK_PLACEMENT_RETRIES = 500


class TrackGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class Fork:
    attach_s: float
    attach_index: int
    side: int  # +1 branch leaves to the left, -1 to the right
    exit_angle_deg: float
    xy: np.ndarray  # branch polyline (Q, 2)
    arc: np.ndarray  # branch arc length (Q,)


@dataclass(frozen=True)
class Track:
    seed: int
    length: float
    xy: np.ndarray  # (M, 2)
    s: np.ndarray  # (M,)
    heading: np.ndarray  # (M,)
    curvature: np.ndarray  # (M,)
    forks: tuple[Fork, ...]
    lane_half_width: float


def _integrate(start_xy, start_heading, curvature: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heading/position from a curvature profile sampled every DS meters."""
    heading = start_heading + np.concatenate([[0.0], np.cumsum(curvature[:-1]) * DS])
    x = start_xy[0] + np.concatenate([[0.0], np.cumsum(np.cos(heading[:-1])) * DS])
    y = start_xy[1] + np.concatenate([[0.0], np.cumsum(np.sin(heading[:-1])) * DS])
    return np.stack([x, y], axis=1), heading


def _curvature_profile(rng: np.random.Generator, n_points: int,
                       curvature_max: float) -> np.ndarray:
    s = np.arange(n_points) * DS
    kappa = np.zeros(n_points)
    for _ in range(4):
        wavelength = rng.uniform(150.0, 600.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        kappa += rng.uniform(0.3, 1.0) * np.sin(2.0 * math.pi * s / wavelength + phase)
    peak = np.abs(kappa).max()
    if peak > 0:
        kappa *= curvature_max * rng.uniform(0.55, 0.95) / peak
    return kappa


def _build_branch(track_xy, track_heading, attach_index: int, side: int,
                  exit_angle_deg: float) -> tuple[np.ndarray, np.ndarray]:
    exit_rad = math.radians(exit_angle_deg)
    kappa_b = side * FORK_BRANCH_CURVATURE
    n_ramp = int(FORK_RAMP_LENGTH_M / DS)
    ramp = np.linspace(0.0, kappa_b, n_ramp, endpoint=False)
    turned = abs(np.sum(ramp) * DS)
    hold_len = max(0.0, (exit_rad - turned) / FORK_BRANCH_CURVATURE)
    n_hold = int(round(hold_len / DS))
    n_total = int(FORK_BRANCH_LENGTH_M / DS) + 1
    n_straight = max(0, n_total - n_ramp - n_hold)
    kappa = np.concatenate([ramp, np.full(n_hold, kappa_b), np.zeros(n_straight)])
    xy, _ = _integrate(track_xy[attach_index], track_heading[attach_index], kappa)
    arc = np.arange(len(xy)) * DS
    return xy, arc


def _flatten_near_forks(kappa: np.ndarray, indices) -> np.ndarray:
    """Suppress curvature around fork sites: zero inside the flat window,
    cosine-tapered back to full strength, so junctions sit on straightish road
    and lateral deviation there is attributable to the policy.
    """
    offsets = np.arange(len(kappa), dtype=np.float64) * DS
    mask = np.ones_like(kappa)
    for idx in indices:
        d = np.abs(offsets - idx * DS)
        local = np.clip((d - FORK_FLAT_WINDOW_M) / FORK_FLAT_TAPER_M, 0.0, 1.0)
        mask = np.minimum(mask, 0.5 - 0.5 * np.cos(math.pi * local))
    return kappa * mask


def generate_track(seed: int, length_m: float, fork_density_per_km: float = 0.0,
                   curvature_max: float = 0.018, lane_half_width: float = 2.0,
                   exit_angle_range=(20.0, 35.0)) -> Track:
    """Deterministic track for a seed; fork count is floor(length * density / 1000)."""
    if length_m <= 0:
        raise ValueError(f"track length must be positive, got {length_m}")
    rng = np.random.default_rng(seed)
    n_points = int(round(length_m / DS)) + 1
    kappa = _curvature_profile(rng, n_points, curvature_max)
    s = np.arange(n_points) * DS

    n_forks = int(length_m * fork_density_per_km / 1000.0)
    indices: list[int] = []
    if n_forks > 0:
        lo, hi = FORK_MARGIN_M, length_m - FORK_MARGIN_M
        if hi - lo < n_forks * FORK_MIN_SEPARATION_M:
            raise TrackGenError(
                f"track of {length_m} m cannot hold {n_forks} forks "
                f"{FORK_MIN_SEPARATION_M} m apart")
        for _ in range(FORK_PLACEMENT_RETRIES):
            draws = np.sort(rng.uniform(lo, hi, size=n_forks))
            if n_forks == 1 or np.min(np.diff(draws)) >= FORK_MIN_SEPARATION_M:
                indices = [int(round(d / DS)) for d in draws]
                break
        else:
            raise TrackGenError(
                f"seed {seed}: no fork placement after {FORK_PLACEMENT_RETRIES} tries")
        kappa = _flatten_near_forks(kappa, indices)

    xy, heading = _integrate((0.0, 0.0), 0.0, kappa)

    forks: list[Fork] = []
    for idx in indices:
        side = int(rng.choice([-1, 1]))
        exit_angle = float(rng.uniform(*exit_angle_range))
        branch_xy, branch_arc = _build_branch(xy, heading, idx, side, exit_angle)
        forks.append(Fork(float(s[idx]), idx, side, exit_angle, branch_xy, branch_arc))

    for arr in (xy, s, heading, kappa):
        arr.flags.writeable = False
    return Track(int(seed), float(length_m), xy, s, heading, kappa,
                 tuple(forks), float(lane_half_width))


def tracks_from_seeds(base_seed: int, count: int, **kwargs) -> list[Track]:
    """Build `count` tracks from sequential seeds, skipping rare generation failures."""
    tracks, seed, attempts = [], int(base_seed), 0
    while len(tracks) < count:
        if attempts > 20 * count + 50:
            raise TrackGenError(f"could not build {count} tracks from base seed {base_seed}")
        try:
            tracks.append(generate_track(seed, **kwargs))
        except TrackGenError:
            pass
        seed += 1
        attempts += 1
    return tracks


# ---------------------------------------------------------------------------
# polyline queries


def project_to_polyline(xy: np.ndarray, arc: np.ndarray, point,
                        lo: int = 0, hi: int | None = None) -> tuple[float, float, float, int]:
    """Nearest point on the polyline: (arc length, signed lateral, distance, segment).

    Lateral is positive to the left of the travel direction. lo/hi restrict
    the segment search window.
    """
    if hi is None:
        hi = len(xy) - 1
    p = np.asarray(point, dtype=np.float64)
    a = xy[lo:hi]
    b = xy[lo + 1:hi + 1]
    ab = b - a
    seg_len2 = np.maximum((ab * ab).sum(axis=1), 1e-18)
    t = np.clip(((p - a) * ab).sum(axis=1) / seg_len2, 0.0, 1.0)
    closest = a + ab * t[:, None]
    d2 = ((p - closest) ** 2).sum(axis=1)
    k = int(np.argmin(d2))
    seg = lo + k
    proj = closest[k]
    tangent = ab[k] / math.sqrt(seg_len2[k])
    offset = p - proj
    lateral = tangent[0] * offset[1] - tangent[1] * offset[0]
    s_here = arc[seg] + t[k] * (arc[seg + 1] - arc[seg])
    return float(s_here), float(lateral), float(math.sqrt(d2[k])), seg


class PolylineTracker:
    """Warm-started projection onto a polyline for monotonic-ish progress."""

    def __init__(self, xy: np.ndarray, arc: np.ndarray, window_m: float = 60.0):
        self.xy = xy
        self.arc = arc
        self.window = int(window_m / DS)
        self.last_seg = 0

    def reset(self, s_hint: float | None = None) -> None:
        if s_hint is None:
            self.last_seg = 0
        else:
            self.last_seg = int(np.clip(np.searchsorted(self.arc, s_hint) - 1,
                                        0, len(self.xy) - 2))

    def project(self, point) -> tuple[float, float, float]:
        lo = max(0, self.last_seg - self.window)
        hi = min(len(self.xy) - 1, self.last_seg + self.window)
        s_here, lateral, dist, seg = project_to_polyline(self.xy, self.arc, point, lo, hi)
        # fall back to a global search if the window ran away from the vehicle
        if seg in (lo, hi - 1) and (lo > 0 or hi < len(self.xy) - 1):
            s_full, lat_full, dist_full, seg_full = project_to_polyline(
                self.xy, self.arc, point)
            if dist_full < dist - 1e-9:
                s_here, lateral, dist, seg = s_full, lat_full, dist_full, seg_full
        self.last_seg = seg
        return s_here, lateral, dist


def point_at(xy: np.ndarray, arc: np.ndarray, s: float) -> tuple[float, float, float]:
    """Interpolated (x, y, heading) at arc length s, clamped to the polyline."""
    s = float(np.clip(s, arc[0], arc[-1]))
    i = int(np.clip(np.searchsorted(arc, s) - 1, 0, len(arc) - 2))
    span = arc[i + 1] - arc[i]
    t = 0.0 if span == 0 else (s - arc[i]) / span
    x = xy[i, 0] + t * (xy[i + 1, 0] - xy[i, 0])
    y = xy[i, 1] + t * (xy[i + 1, 1] - xy[i, 1])
    heading = math.atan2(xy[i + 1, 1] - xy[i, 1], xy[i + 1, 0] - xy[i, 0])
    return x, y, heading
