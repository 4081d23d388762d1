"""Policy heads with a uniform train/infer contract.

Four head families share one backbone: direct regression (MAE), bin
classification, mixture density, and the implicit energy-based head that
scores candidate actions and picks the argmin at inference. Loss math lives
in standalone functions so each piece is testable on hand-built tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .actions import ActionGrid, soft_target_probs
from .autodiff import Tensor
from .backbone import Backbone, BackboneConfig, init_linear, linear

LOG_2PI = math.log(2.0 * math.pi)
MDN_SIGMA_FLOOR = 1e-3  # degrees; keeps densities finite on near-duplicate labels


@dataclass
class HeadOutput:
    command_deg: float
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# loss functions


def regression_mae(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean absolute error between predictions (B, 1) and target degrees."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if not np.all(np.isfinite(targets)):
        raise ValueError("regression_mae: non-finite targets")
    return ad.tmean(ad.absolute(ad.sub(pred, Tensor(targets))))


def classification_nll(logits: Tensor, target_bins) -> Tensor:
    """Cross-entropy of softmax(logits) against one-hot bins, batch-averaged."""
    picked = ad.gather(ad.log_softmax(logits), target_bins)
    return ad.scale(ad.tmean(picked), -1.0)


def ebm_nll(energies: Tensor, target_probs: np.ndarray) -> Tensor:
    """Cross-entropy of softmax(-e) against target probabilities.

    One-hot targets reduce to picking the ground-truth column, which is the
    exact same computation as classification_nll on logits = -e.
    """
    target_probs = np.asarray(target_probs, dtype=np.float64)
    if target_probs.ndim == 1:
        target_probs = target_probs.reshape(1, -1)
    if target_probs.shape != energies.shape:
        raise ValueError(
            f"ebm_nll: target shape {target_probs.shape} vs energies {energies.shape}")
    log_probs = ad.log_softmax(ad.scale(energies, -1.0))
    hot_cols = target_probs.argmax(axis=1)
    is_one_hot = np.array_equal(
        target_probs, np.eye(target_probs.shape[1])[hot_cols])
    if is_one_hot:
        picked = ad.gather(log_probs, hot_cols)
    else:
        picked = ad.rowsum(ad.mul(Tensor(target_probs), log_probs))
    return ad.scale(ad.tmean(picked), -1.0)


def temporal_smoothing(e_t: Tensor, e_t1: Tensor, shared: int, alpha: float) -> Tensor:
    """alpha * mean pairwise Euclidean norm of energy differences.

    Only the first `shared` columns enter the norm; appended ground-truth
    entries beyond them are masked out (GT differs between frames).
    """
    if e_t.shape != e_t1.shape:
        raise ValueError(f"temporal_smoothing: shapes {e_t.shape} vs {e_t1.shape}")
    if not 0 < shared <= e_t.shape[1]:
        raise ValueError(f"temporal_smoothing: bad shared-column count {shared}")
    diff = ad.sub(ad.slice_cols(e_t, 0, shared), ad.slice_cols(e_t1, 0, shared))
    return ad.scale(ad.tmean(ad.rownorm(diff)), alpha)


def mdn_nll(mu: Tensor, sigma: Tensor, log_alpha: Tensor, targets: np.ndarray) -> Tensor:
    """Negative log-likelihood of a Gaussian mixture, batch-averaged.

    Computed through log-sum-exp so underflowing component densities never
    produce -inf.
    """
    m = mu.shape[1]
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    t = Tensor(np.repeat(targets, m, axis=1))
    diff = ad.sub(t, mu)
    quad = ad.div(ad.square(diff), ad.scale(ad.square(sigma), 2.0))
    log_density = ad.sub(ad.shift(ad.scale(ad.log(sigma), -1.0), -0.5 * LOG_2PI), quad)
    log_mix = ad.logsumexp(ad.add(log_alpha, log_density))
    return ad.scale(ad.tmean(log_mix), -1.0)


def argmin_energy(energies: np.ndarray) -> int:
    """Index of the lowest energy; ties break toward the smaller index."""
    return int(np.argmin(energies))


# ---------------------------------------------------------------------------
# negative sampling for the energy head


class NegativeSampler:
    """Candidate actions for EBM training: the constant grid or uniform draws."""

    MODES = ("constant", "uniform")

    def __init__(self, mode: str, grid: ActionGrid):
        if mode not in self.MODES:
            raise ValueError(f"unknown sampler mode {mode!r}, options: {self.MODES}")
        self.mode = mode
        self.grid = grid

    def draw(self, rng: np.random.Generator | None, count: int) -> np.ndarray:
        """(count, n) candidate angles, one row per decision."""
        if self.mode == "constant":
            return np.broadcast_to(self.grid.values, (count, self.grid.n))
        if rng is None:
            raise ValueError("uniform sampler needs an RNG")
        return rng.uniform(self.grid.a_min, self.grid.a_max, size=(count, self.grid.n))

    def draw_pairs(self, rng: np.random.Generator | None, pairs: int) -> np.ndarray:
        """(2*pairs, n) candidates with one draw shared by both frames of a pair."""
        base = self.draw(rng, pairs)
        return np.repeat(base, 2, axis=0)


# ---------------------------------------------------------------------------
# heads


class RegressionHead:
    """Single output node trained with MAE on the steering angle."""

    kind = "regression"
    needs_pairs = False

    def __init__(self, obs_dim: int, config: BackboneConfig, out_scale: float = 100.0):
        self.backbone = Backbone(obs_dim, config)
        self.out_scale = float(out_scale)
        rng = np.random.default_rng((config.seed, 101))
        w, b = init_linear(rng, self.backbone.feature_dim, 1, "out")
        self.out_w, self.out_b = w, b

    def parameters(self) -> dict[str, Tensor]:
        return {**self.backbone.params, "out.w": self.out_w, "out.b": self.out_b}

    def _forward(self, obs: np.ndarray) -> Tensor:
        feats = self.backbone.encode(obs)
        return ad.scale(linear(feats, self.out_w, self.out_b), self.out_scale)

    def loss(self, obs: np.ndarray, labels_deg: np.ndarray, rng=None) -> Tensor:
        return regression_mae(self._forward(obs), labels_deg)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self._forward(obs).values[:, 0].copy()

    def infer(self, obs_row: np.ndarray) -> HeadOutput:
        pred = self._forward(np.asarray(obs_row).reshape(1, -1))
        return HeadOutput(float(pred.values[0, 0]))


class ClassificationHead:
    """Grid-bin classifier trained with cross-entropy."""

    kind = "classification"
    needs_pairs = False

    def __init__(self, obs_dim: int, config: BackboneConfig, grid: ActionGrid):
        self.backbone = Backbone(obs_dim, config)
        self.grid = grid
        rng = np.random.default_rng((config.seed, 102))
        w, b = init_linear(rng, self.backbone.feature_dim, grid.n, "out")
        self.out_w, self.out_b = w, b

    def parameters(self) -> dict[str, Tensor]:
        return {**self.backbone.params, "out.w": self.out_w, "out.b": self.out_b}

    def _logits(self, obs: np.ndarray) -> Tensor:
        return linear(self.backbone.encode(obs), self.out_w, self.out_b)

    def loss(self, obs: np.ndarray, labels_deg: np.ndarray, rng=None) -> Tensor:
        bins = self.grid.bin_indices(labels_deg)
        return classification_nll(self._logits(obs), bins)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        logits = self._logits(obs).values
        return self.grid.values[logits.argmax(axis=1)].copy()

    def infer(self, obs_row: np.ndarray) -> HeadOutput:
        logits = self._logits(np.asarray(obs_row).reshape(1, -1)).values[0]
        idx = int(logits.argmax())
        return HeadOutput(self.grid.bin_center(idx), {"logits": logits.copy()})


class MDNHead:
    """Gaussian mixture head; deploys the mean of the highest-weight component."""

    kind = "mdn"
    needs_pairs = False

    def __init__(self, obs_dim: int, config: BackboneConfig, components: int = 5,
                 out_scale: float = 100.0):
        if not 1 <= components <= 5:
            raise ValueError(f"mixture size must be 1..5, got {components}")
        self.backbone = Backbone(obs_dim, config)
        self.m = components
        self.out_scale = float(out_scale)
        rng = np.random.default_rng((config.seed, 103))
        w, b = init_linear(rng, self.backbone.feature_dim, 3 * components, "out")
        self.out_w, self.out_b = w, b

    def parameters(self) -> dict[str, Tensor]:
        return {**self.backbone.params, "out.w": self.out_w, "out.b": self.out_b}

    def _mixture(self, obs: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        raw = linear(self.backbone.encode(obs), self.out_w, self.out_b)
        mu = ad.scale(ad.slice_cols(raw, 0, self.m), self.out_scale)
        sigma = ad.shift(ad.exp(ad.slice_cols(raw, self.m, 2 * self.m)), MDN_SIGMA_FLOOR)
        log_alpha = ad.log_softmax(ad.slice_cols(raw, 2 * self.m, 3 * self.m))
        return mu, sigma, log_alpha

    def loss(self, obs: np.ndarray, labels_deg: np.ndarray, rng=None) -> Tensor:
        mu, sigma, log_alpha = self._mixture(obs)
        return mdn_nll(mu, sigma, log_alpha, labels_deg)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        mu, _, log_alpha = self._mixture(obs)
        best = log_alpha.values.argmax(axis=1)
        return mu.values[np.arange(mu.shape[0]), best].copy()

    def infer(self, obs_row: np.ndarray) -> HeadOutput:
        mu, sigma, log_alpha = self._mixture(np.asarray(obs_row).reshape(1, -1))
        alpha = np.exp(log_alpha.values[0])
        best = int(alpha.argmax())
        return HeadOutput(float(mu.values[0, best]),
                          {"mu": mu.values[0].copy(), "sigma": sigma.values[0].copy(),
                           "alpha": alpha})


class EBMHead:
    """Implicit head: energies over candidate actions, argmin at inference.

    target_mode selects one-hot or temperature-softened cross-entropy targets;
    temporal_alpha > 0 adds the masked energy-difference penalty over
    consecutive-frame pairs.
    """

    kind = "ebm"

    def __init__(self, obs_dim: int, config: BackboneConfig, grid: ActionGrid,
                 target_mode: str = "one-hot", soft_temperature: float | None = None,
                 sampler_mode: str = "constant", temporal_alpha: float = 0.0):
        if target_mode not in ("one-hot", "soft"):
            raise ValueError(f"unknown target mode {target_mode!r}")
        if target_mode == "soft" and (soft_temperature is None or soft_temperature <= 0):
            raise ValueError("soft targets need a positive temperature")
        self.backbone = Backbone(obs_dim, config, with_fusion=True)
        self.grid = grid
        self.target_mode = target_mode
        self.soft_temperature = soft_temperature
        self.sampler = NegativeSampler(sampler_mode, grid)
        self.temporal_alpha = float(temporal_alpha)

    @property
    def needs_pairs(self) -> bool:
        return self.temporal_alpha > 0.0

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.backbone.params)

    def energies(self, obs: np.ndarray, candidates_deg: np.ndarray) -> Tensor:
        """E(o, a) for each candidate row, encoder evaluated once for the batch."""
        feats = self.backbone.encode(obs)
        return self.backbone.fuse(feats, self.grid.normalize(candidates_deg))

    def _targets(self, candidates_deg: np.ndarray, labels_deg: np.ndarray) -> np.ndarray:
        batch, width = candidates_deg.shape
        if self.target_mode == "one-hot":
            probs = np.zeros((batch, width))
            probs[:, width - 1] = 1.0  # ground truth is the appended column
            return probs
        return np.stack([
            soft_target_probs(candidates_deg[i], labels_deg[i], self.soft_temperature)
            for i in range(batch)])

    def loss(self, obs: np.ndarray, labels_deg: np.ndarray,
             rng: np.random.Generator | None = None) -> Tensor:
        obs = np.asarray(obs, dtype=np.float64)
        labels_deg = np.asarray(labels_deg, dtype=np.float64).reshape(-1)
        batch = obs.shape[0]
        if self.needs_pairs:
            if batch % 2 != 0:
                raise ValueError("temporal EBM loss needs pair-ordered frames (even batch)")
            negatives = self.sampler.draw_pairs(rng, batch // 2)
        else:
            negatives = self.sampler.draw(rng, batch)
        candidates = np.concatenate([negatives, labels_deg.reshape(-1, 1)], axis=1)
        e = self.energies(obs, candidates)
        ce = ebm_nll(e, self._targets(candidates, labels_deg))
        if not self.needs_pairs:
            return ce
        n = self.grid.n
        stacked = ad.reshape(e, (batch // 2, 2 * (n + 1)))
        e_t = ad.slice_cols(stacked, 0, n + 1)
        e_t1 = ad.slice_cols(stacked, n + 1, 2 * (n + 1))
        return ad.add(ce, temporal_smoothing(e_t, e_t1, n, self.temporal_alpha))

    def grid_energies(self, obs: np.ndarray) -> np.ndarray:
        """Inference-time energy landscape over the constant grid, (B, n)."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs.reshape(1, -1)
        cand = np.broadcast_to(self.grid.values, (obs.shape[0], self.grid.n))
        return self.energies(obs, cand).values

    def predict(self, obs: np.ndarray) -> np.ndarray:
        e = self.grid_energies(obs)
        return self.grid.values[e.argmin(axis=1)].copy()

    def infer(self, obs_row: np.ndarray) -> HeadOutput:
        e = self.grid_energies(np.asarray(obs_row).reshape(1, -1))[0]
        idx = argmin_energy(e)
        return HeadOutput(self.grid.bin_center(idx), {"energies": e.copy()})


# ---------------------------------------------------------------------------
# construction / checkpoints

HEAD_KINDS = ("regression", "classification", "mdn", "ebm")


def build_head(kind: str, obs_dim: int, config: BackboneConfig,
               grid: ActionGrid | None = None, **hyper):
    if kind == "regression":
        return RegressionHead(obs_dim, config, **hyper)
    if kind == "classification":
        return ClassificationHead(obs_dim, config, grid, **hyper)
    if kind == "mdn":
        return MDNHead(obs_dim, config, **hyper)
    if kind == "ebm":
        return EBMHead(obs_dim, config, grid, **hyper)
    raise ValueError(f"unknown head kind {kind!r}, options: {HEAD_KINDS}")


def set_parameters(head, arrays: dict[str, np.ndarray]) -> None:
    params = head.parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    for name, tensor in params.items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != tensor.shape:
            raise ValueError(f"parameter {name}: shape {arr.shape} vs {tensor.shape}")
        tensor.values[...] = arr
        tensor.zero_grad()
