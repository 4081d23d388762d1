"""Constant steering-angle grid, discretization, and spatially-aware soft targets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_A_MIN = -250.0
DEFAULT_A_MAX = 250.0
DEFAULT_N = 512

# diagnostic counter for labels clamped into the grid range
_clamp_count = 0


def clamp_count() -> int:
    return _clamp_count


def reset_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


@dataclass(frozen=True)
class ActionGrid:
    """Linearly spaced candidate steering-wheel angles (degrees), endpoints included."""

    a_min: float
    a_max: float
    n: int
    values: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return (self.a_max - self.a_min) / (self.n - 1)

    @property
    def mid(self) -> float:
        return 0.5 * (self.a_min + self.a_max)

    @property
    def half_range(self) -> float:
        return 0.5 * (self.a_max - self.a_min)

    def normalize(self, angles_deg):
        """Map degrees into [-1, 1] by the grid range."""
        return (np.asarray(angles_deg, dtype=np.float64) - self.mid) / self.half_range

    def bin_index(self, a_deg: float) -> int:
        """Index of the nearest grid point; out-of-range angles clamp with a counted warning."""
        global _clamp_count
        if a_deg < self.a_min or a_deg > self.a_max:
            _clamp_count += 1
            log.warning("steering label %.2f deg outside grid [%.1f, %.1f], clamped",
                        a_deg, self.a_min, self.a_max)
            a_deg = min(max(a_deg, self.a_min), self.a_max)
        return int(round((a_deg - self.a_min) / self.spacing))

    def bin_indices(self, angles_deg) -> np.ndarray:
        """Vectorized bin_index over an array of angles."""
        global _clamp_count
        angles = np.asarray(angles_deg, dtype=np.float64)
        outside = int(np.count_nonzero((angles < self.a_min) | (angles > self.a_max)))
        if outside:
            _clamp_count += outside
            log.warning("%d steering labels outside grid [%.1f, %.1f], clamped",
                        outside, self.a_min, self.a_max)
        clipped = np.clip(angles, self.a_min, self.a_max)
        return np.rint((clipped - self.a_min) / self.spacing).astype(np.intp)

    def bin_center(self, index: int) -> float:
        if index < 0 or index >= self.n:
            raise ValueError(f"bin index {index} out of range for n={self.n}")
        return float(self.values[index])


def make_grid(a_min: float = DEFAULT_A_MIN, a_max: float = DEFAULT_A_MAX,
              n: int = DEFAULT_N) -> ActionGrid:
    if n < 2:
        raise ValueError(f"grid needs n >= 2, got {n}")
    if not a_min < a_max:
        raise ValueError(f"grid needs a_min < a_max, got [{a_min}, {a_max}]")
    values = np.linspace(a_min, a_max, n)
    values.flags.writeable = False
    return ActionGrid(float(a_min), float(a_max), int(n), values)


@dataclass(frozen=True)
class TargetVector:
    """Probabilities over candidate actions; one-hot or temperature-softened."""

    probs: np.ndarray
    mode: str  # "one-hot" | "soft"
    temperature: float | None = None


def one_hot_targets(length: int, hot_index: int) -> TargetVector:
    if hot_index < 0 or hot_index >= length:
        raise ValueError(f"one-hot index {hot_index} out of range for length {length}")
    probs = np.zeros(length)
    probs[hot_index] = 1.0
    return TargetVector(probs, "one-hot")


def soft_target_probs(candidates_deg, a_gt: float, temperature: float) -> np.ndarray:
    """softmax(-(a - a_gt)^2 / T) over the candidate angles."""
    if temperature <= 0.0:
        raise ValueError(f"soft-target temperature must be > 0, got {temperature}")
    d2 = np.square(np.asarray(candidates_deg, dtype=np.float64) - a_gt)
    z = -d2 / temperature
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def soft_targets(candidates_deg, a_gt: float, temperature: float) -> TargetVector:
    return TargetVector(soft_target_probs(candidates_deg, a_gt, temperature),
                        "soft", float(temperature))


def mass_within_window(grid: ActionGrid, temperature: float, window_deg: float) -> float:
    """Within-window probability mass of soft targets for a ground truth at grid center.

    Uses the training-time candidate layout: the n grid points plus the
    appended ground-truth action.
    """
    a_gt = grid.mid
    candidates = np.concatenate([grid.values, [a_gt]])
    probs = soft_target_probs(candidates, a_gt, temperature)
    inside = np.abs(candidates - a_gt) <= window_deg
    return float(probs[inside].sum())


def calibrate_temperature(grid: ActionGrid, mass: float = 0.999,
                          window_deg: float = 5.0) -> float:
    """Temperature at which soft targets put `mass` within +-window of a centered GT.

    The within-window mass is monotonically decreasing in T, so the satisfying
    set is (0, T*]; bisection returns the boundary T* to 1e-9 relative, from
    the satisfying side. If every temperature satisfies the condition (window
    covering the whole grid) the lower bracket is returned.
    """
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must be in (0, 1), got {mass}")
    if window_deg <= grid.spacing:
        raise ValueError(
            f"window {window_deg} deg not above grid spacing {grid.spacing:.4f} deg; "
            "the requested mass is unattainable")

    lo = 1e-12
    if mass_within_window(grid, lo, window_deg) < mass:
        raise ValueError("mass condition unattainable even in the one-hot limit")

    # grow hi until the condition fails; if it never fails, any T works
    hi = 1.0
    for _ in range(80):
        if mass_within_window(grid, hi, window_deg) < mass:
            break
        hi *= 2.0
    else:
        return lo

    while (hi - lo) > 1e-9 * hi:
        midpoint = 0.5 * (lo + hi)
        if mass_within_window(grid, midpoint, window_deg) >= mass:
            lo = midpoint
        else:
            hi = midpoint
    return lo
