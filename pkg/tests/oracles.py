"""Independent numerical oracles used by the tests.

These deliberately avoid the library's autodiff machinery: gradients come
from central finite differences over re-run forward passes, softmax values
from direct exp/sum arithmetic, and argmins from exhaustive scans.
"""

from __future__ import annotations

import math

import numpy as np

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_difference_gradients(loss_fn, params: dict, h: float = FD_STEP) -> dict:
    """Central-difference gradient of loss_fn() w.r.t. each parameter tensor.

    loss_fn re-runs the forward pass and returns a float; parameter values
    are perturbed in place and restored.
    """
    grads = {}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            hi = loss_fn()
            flat[i] = original - h
            lo = loss_fn()
            flat[i] = original
            g[i] = (hi - lo) / (2.0 * h)
        grads[name] = g.reshape(p.values.shape)
    return grads


# Central differences at h=1e-5 carry ~eps*|loss|/h ≈ 1e-10 of roundoff noise,
# so coordinates whose true gradient is structurally zero cannot meet a pure
# relative test; discrepancies below this floor are treated as zero.
FD_NOISE_FLOOR = 1e-9


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in numeric:
        a = np.asarray(analytic[name]).reshape(-1)
        n = np.asarray(numeric[name]).reshape(-1)
        diff = np.abs(a - n)
        rel = np.where(diff < FD_NOISE_FLOOR, 0.0, diff / (np.abs(n) + 1e-8))
        worst = max(worst, float(rel.max()))
    return worst


def gradcheck(loss_builder, params: dict, h: float = FD_STEP) -> float:
    """Backprop a fresh loss, then compare against finite differences."""
    from steerlab.autodiff import zero_grads

    zero_grads(params)
    loss = loss_builder()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    numeric = finite_difference_gradients(lambda: loss_builder().item(), params, h)
    return max_relative_error(analytic, numeric)


def softmax_direct(values) -> np.ndarray:
    e = [math.exp(v) for v in values]
    total = sum(e)
    return np.array([v / total for v in e])


def brute_force_argmin(values) -> int:
    best, best_i = float("inf"), 0
    for i, v in enumerate(values):
        if v < best:
            best, best_i = v, i
    return best_i


def whiteness_direct(series, dt: float) -> float:
    total = 0.0
    count = 0
    for a, b in zip(series[:-1], series[1:]):
        total += ((b - a) / dt) ** 2
        count += 1
    return math.sqrt(total / count)
