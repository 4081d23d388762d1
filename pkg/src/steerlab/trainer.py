"""Training loop: Adam with decoupled weight decay, early stopping on
validation MAE, and checkpointed policies for closed-loop use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, heads
from .actions import make_grid
from .autodiff import Tensor, zero_grads
from .backbone import BackboneConfig
from .data import Normalizer, stack_frames
from .metrics import mae

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2


class Adam:
    """Bias-corrected Adam with decoupled weight decay (lr * wd * param)."""

    def __init__(self, params: dict[str, Tensor], config: AdamConfig | None = None):
        self.params = params
        self.config = config or AdamConfig()
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.step_count = 0
        self.skipped_steps = 0

    def step(self) -> bool:
        """Apply one update from accumulated grads; skip (and count) non-finite grads."""
        for p in self.params.values():
            if not np.all(np.isfinite(p.grad)):
                self.skipped_steps += 1
                log.warning("non-finite gradient, optimizer step skipped")
                return False
        c = self.config
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - c.beta1 ** t
        bc2 = 1.0 - c.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.values -= c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
            if c.weight_decay:
                p.values -= c.lr * c.weight_decay * p.values
        return True


@dataclass
class EarlyStop:
    """Stop after `patience` epochs without strict validation improvement."""

    patience: int
    best: float = float("inf")
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")

    def update(self, value: float) -> str:
        if value < self.best:
            self.best = value
            self.epochs_since_improvement = 0
            return "improved"
        self.epochs_since_improvement += 1
        if self.epochs_since_improvement >= self.patience:
            return "stop"
        return "continue"


# ---------------------------------------------------------------------------
# fit


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    predict_chunk: int = 1024


@dataclass
class FitResult:
    best_arrays: dict[str, np.ndarray]
    best_val_mae: float
    best_epoch: int
    curve: list[tuple[int, float, float]]  # (epoch, train loss, val MAE)
    normalizer: Normalizer
    stopped_early: bool


def predict_in_chunks(head, obs_norm: np.ndarray, chunk: int = 1024) -> np.ndarray:
    preds = [head.predict(obs_norm[i:i + chunk]) for i in range(0, len(obs_norm), chunk)]
    return np.concatenate(preds)


def validation_mae(head, normalizer: Normalizer, recordings, chunk: int = 1024) -> float:
    obs, labels = stack_frames(recordings)
    preds = predict_in_chunks(head, normalizer.transform(obs), chunk)
    return mae(preds, labels)


def snapshot_parameters(head) -> dict[str, np.ndarray]:
    return {name: p.values.copy() for name, p in head.parameters().items()}


def fit(head, train_recordings, val_recordings, config: TrainConfig) -> FitResult:
    """Train until early stop or max epochs; returns the best-validation weights.

    Validation MAE uses the head's own inference rule, not its training loss.
    """
    from .data import FrameSampler, PairSampler

    normalizer = Normalizer.fit(stack_frames(train_recordings)[0])
    sampler_cls = PairSampler if head.needs_pairs else FrameSampler
    sampler = sampler_cls(train_recordings, config.batch_size, seed=config.seed)
    negative_rng = np.random.default_rng((config.seed, 7))
    optimizer = Adam(head.parameters(), config.adam)
    stopper = EarlyStop(config.patience)

    total = sum(len(r) for r in train_recordings)
    steps_per_epoch = max(1, total // (config.batch_size * (2 if head.needs_pairs else 1)))

    initial_mae = validation_mae(head, normalizer, val_recordings, config.predict_chunk)
    best = snapshot_parameters(head)
    best_mae, best_epoch = initial_mae, 0
    curve: list[tuple[int, float, float]] = []
    divergent_epochs = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for _ in range(steps_per_epoch):
            obs, labels = sampler.next_batch()
            zero_grads(head.parameters())
            loss = head.loss(normalizer.transform(obs), labels, rng=negative_rng)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        val = validation_mae(head, normalizer, val_recordings, config.predict_chunk)
        curve.append((epoch, float(np.mean(losses)), val))
        if val < best_mae:
            best = snapshot_parameters(head)
            best_mae, best_epoch = val, epoch
        if val > 10.0 * max(initial_mae, 1e-9):
            divergent_epochs += 1
            if divergent_epochs >= 3:
                raise DivergenceError(
                    f"validation MAE {val:.3f} stayed above 10x initial "
                    f"({initial_mae:.3f}) for 3 epochs")
        else:
            divergent_epochs = 0
        if stopper.update(val) == "stop":
            stopped_early = True
            break

    heads.set_parameters(head, best)
    return FitResult(best, best_mae, best_epoch, curve, normalizer, stopped_early)


# ---------------------------------------------------------------------------
# deployable policy


class Policy:
    """A trained head plus its normalization stats; callable on raw observations."""

    def __init__(self, head, normalizer: Normalizer, meta: dict | None = None):
        self.head = head
        self.normalizer = normalizer
        self.meta = meta or {}

    def __call__(self, raw_obs: np.ndarray) -> float:
        obs = self.normalizer.transform(np.asarray(raw_obs).reshape(1, -1))
        return float(self.head.predict(obs)[0])

    def predict(self, raw_obs_batch: np.ndarray) -> np.ndarray:
        return self.head.predict(self.normalizer.transform(raw_obs_batch))

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta["constant_features"] = [int(i) for i in
                                     np.flatnonzero(self.normalizer.constant_features)]
        arrays = {f"param/{k}": v.values for k, v in self.head.parameters().items()}
        arrays["norm/mean"] = self.normalizer.mean
        arrays["norm/std"] = self.normalizer.std
        checkpoint.save_arrays(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "Policy":
        meta, arrays = checkpoint.load_arrays(path)
        grid = None
        if meta.get("grid"):
            g = meta["grid"]
            grid = make_grid(g["a_min"], g["a_max"], g["n"])
        backbone_cfg = BackboneConfig(**meta["backbone"])
        head = heads.build_head(meta["head"], meta["obs_dim"], backbone_cfg,
                                grid=grid, **meta.get("hyper", {}))
        heads.set_parameters(
            head, {k.removeprefix("param/"): v for k, v in arrays.items()
                   if k.startswith("param/")})
        mean, std = arrays["norm/mean"], arrays["norm/std"]
        constant = np.zeros(mean.shape, dtype=bool)
        constant[np.asarray(meta.get("constant_features", []), dtype=int)] = True
        return cls(head, Normalizer(mean, std, constant), meta)


def policy_meta(head_kind: str, obs_dim: int, backbone_cfg: BackboneConfig,
                grid=None, hyper: dict | None = None) -> dict:
    meta = {
        "head": head_kind,
        "obs_dim": int(obs_dim),
        "backbone": {
            "hidden": list(backbone_cfg.hidden),
            "fusion_width": backbone_cfg.fusion_width,
            "activation": backbone_cfg.activation,
            "seed": backbone_cfg.seed,
        },
        "hyper": hyper or {},
    }
    if grid is not None:
        meta["grid"] = {"a_min": grid.a_min, "a_max": grid.a_max, "n": grid.n}
    return meta
