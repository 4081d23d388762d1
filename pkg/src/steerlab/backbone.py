"""Shared observation encoder with a late action-fusion branch.

The encoder runs once per batch of observations; candidate actions are fused
after it, so the per-candidate cost is only the small fusion MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}

PREVIEW_POINTS = 24
PREVIEW_HORIZON_M = 40.0


@dataclass
class BackboneConfig:
    hidden: tuple[int, ...] = (64, 64)
    fusion_width: int = 64
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.fusion_width < 1:
            raise ValueError(f"fusion width must be positive, got {self.fusion_width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, "
                             f"options: {sorted(ACTIVATIONS)}")


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                name: str) -> tuple[Tensor, Tensor]:
    """Uniform fan-in init for weights, zero biases."""
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=f"{name}.w")
    b = Tensor(np.zeros((1, fan_out)), name=f"{name}.b")
    return w, b


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = ad.matmul(x, w)
    return ad.add(out, ad.repeat_rows(b, out.shape[0]))


@dataclass
class Backbone:
    """Observation MLP encoder plus an optional candidate-action fusion head."""

    obs_dim: int
    config: BackboneConfig
    with_fusion: bool = False
    params: dict[str, Tensor] = field(default_factory=dict)
    encode_calls: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.config.seed)
        widths = (self.obs_dim,) + self.config.hidden
        for i in range(len(widths) - 1):
            w, b = init_linear(rng, widths[i], widths[i + 1], f"enc{i}")
            self.params[f"enc{i}.w"] = w
            self.params[f"enc{i}.b"] = b
        if self.with_fusion:
            fw = self.config.fusion_width
            w, b = init_linear(rng, self.feature_dim + 1, fw, "fuse0")
            self.params["fuse0.w"] = w
            self.params["fuse0.b"] = b
            w, b = init_linear(rng, fw, 1, "fuse1")
            self.params["fuse1.w"] = w
            self.params["fuse1.b"] = b

    @property
    def feature_dim(self) -> int:
        return self.config.hidden[-1]

    def encode(self, obs) -> Tensor:
        """Encode a batch of observations (B, obs_dim) into features (B, feature_dim).

        Accepts an array or a Tensor (the latter keeps the input in the graph,
        e.g. for input-Jacobian checks).
        """
        if isinstance(obs, Tensor):
            x = obs
        else:
            arr = np.asarray(obs, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            x = Tensor(arr)
        if x.values.ndim != 2 or x.shape[1] != self.obs_dim:
            raise ValueError(f"encode: observation shape {x.shape}, "
                             f"expected (*, {self.obs_dim})")
        if not np.all(np.isfinite(x.values)):
            raise ValueError("encode: non-finite observation values")
        self.encode_calls += 1
        act = ACTIVATIONS[self.config.activation]
        for i in range(len(self.config.hidden)):
            x = act(linear(x, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"]))
        return x

    def fuse(self, features: Tensor, actions_norm: np.ndarray) -> Tensor:
        """One scalar per candidate action: features (B, F) x actions (B, m) -> (B, m).

        The encoder is not re-run here; feature rows are repeated per candidate.
        """
        if not self.with_fusion:
            raise ValueError("backbone built without a fusion head")
        actions_norm = np.asarray(actions_norm, dtype=np.float64)
        if actions_norm.ndim == 1:
            actions_norm = actions_norm.reshape(1, -1)
        batch, m = actions_norm.shape
        if m < 1:
            raise ValueError("fuse: empty candidate set")
        if features.shape[0] != batch:
            raise ValueError(f"fuse: features batch {features.shape[0]} vs actions batch {batch}")
        act = ACTIVATIONS[self.config.activation]
        tiled = ad.repeat_rows(features, m)  # (B*m, F), candidates contiguous per row
        a_col = Tensor(actions_norm.reshape(-1, 1))
        x = ad.concat_cols(tiled, a_col)
        x = act(linear(x, self.params["fuse0.w"], self.params["fuse0.b"]))
        x = linear(x, self.params["fuse1.w"], self.params["fuse1.b"])
        return ad.reshape(x, (batch, m))
