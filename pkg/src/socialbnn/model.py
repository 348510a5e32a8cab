"""Bayesian MLP with heteroscedastic per-action outputs.

The network maps a scene feature vector to two numbers per action: the
appropriateness estimate and the log-variance of that estimate. Hidden
layers use ReLU; outputs are linear and unbounded.

Forward and backward passes are vectorized over Monte Carlo weight draws:
noise arrays carry a leading sample axis ``S`` and activations have shape
``(S, B, width)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .variational import sigma_of_rho, sigmoid

CHECKPOINT_MAGIC = "SOCIALBNN-CKPT"
CHECKPOINT_VERSION = 1


class HeadMode(str, Enum):
    SHARED_OUTPUT = "shared_output"
    PER_TASK_HEADS = "per_task_heads"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 29
    hidden_dims: tuple[int, ...] = (64, 64)
    actions: tuple[int, ...] = tuple(range(16))
    head_mode: HeadMode = HeadMode.SHARED_OUTPUT
    mc_samples: int = 10
    # per_task_heads only: output positions owned by each head (default one head per action)
    head_groups: Optional[tuple[tuple[int, ...], ...]] = None
    # inputs are mapped affinely from [low, high] onto [0, 1]; None leaves them untouched
    input_low: Optional[tuple[float, ...]] = None
    input_high: Optional[tuple[float, ...]] = None
    mu_init_std: float = 0.1
    rho_init: float = -3.0

    def __post_init__(self):
        object.__setattr__(self, "head_mode", HeadMode(self.head_mode))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if self.head_groups is not None:
            object.__setattr__(self, "head_groups", tuple(tuple(int(i) for i in g) for g in self.head_groups))
        for name in ("input_low", "input_high"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(t) for t in v))
        if self.input_dim < 1 or not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("input_dim and hidden_dims must be positive and non-empty")
        if not 1 <= len(self.actions) <= 16:
            raise ValueError("between 1 and 16 actions are supported")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if (self.input_low is None) != (self.input_high is None):
            raise ValueError("input_low and input_high must be given together")
        if self.input_low is not None and not (len(self.input_low) == len(self.input_high) == self.input_dim):
            raise ValueError("input scaling vectors must have input_dim entries")
        if self.head_mode is HeadMode.PER_TASK_HEADS and self.head_groups is not None:
            flat = sorted(i for g in self.head_groups for i in g)
            if flat != list(range(len(self.actions))):
                raise ValueError("head_groups must partition the output positions")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def groups(self) -> tuple[tuple[int, ...], ...]:
        if self.head_mode is HeadMode.SHARED_OUTPUT:
            return (tuple(range(self.n_actions)),)
        if self.head_groups is None:
            return tuple((i,) for i in range(self.n_actions))
        return self.head_groups

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_mode"] = self.head_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def for_manners(cls, **overrides) -> "ModelConfig":
        """29-feature config with inputs scaled by the documented feature ranges."""
        from .scenegen import FEATURE_HIGH, FEATURE_LOW

        kw = dict(input_dim=29, input_low=tuple(FEATURE_LOW), input_high=tuple(FEATURE_HIGH))
        kw.update(overrides)
        return cls(**kw)


@dataclass
class BayesianLinear:
    mu_w: np.ndarray
    rho_w: np.ndarray
    mu_b: np.ndarray
    rho_b: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.mu_w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.mu_w.shape[0]

    @property
    def n_params(self) -> int:
        return self.out_dim * (self.in_dim + 1)

    def arrays(self):
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]

    def copy(self) -> "BayesianLinear":
        return BayesianLinear(*(a.copy() for a in self.arrays()))

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, rng: np.random.Generator, mu_std=0.1, rho=-3.0):
        return cls(
            mu_w=rng.normal(0.0, mu_std, size=(out_dim, in_dim)),
            rho_w=np.full((out_dim, in_dim), float(rho)),
            mu_b=rng.normal(0.0, mu_std, size=out_dim),
            rho_b=np.full(out_dim, float(rho)),
        )


@dataclass
class BnnModel:
    config: ModelConfig
    trunk: list[BayesianLinear]
    heads: list[BayesianLinear]

    def layers(self) -> list[BayesianLinear]:
        return self.trunk + self.heads

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers())

    def copy(self) -> "BnnModel":
        return BnnModel(self.config, [l.copy() for l in self.trunk], [l.copy() for l in self.heads])

    def equals(self, other: "BnnModel") -> bool:
        """Bitwise equality of configuration and every (mu, rho) array."""
        if self.config != other.config or len(self.layers()) != len(other.layers()):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for la, lb in zip(self.layers(), other.layers())
            for a, b in zip(la.arrays(), lb.arrays())
        )


def init_model(config: ModelConfig, seed: int) -> BnnModel:
    """Posterior means drawn from N(0, mu_init_std^2); every rho set to rho_init."""
    rng = np.random.default_rng(seed)
    dims = (config.input_dim,) + config.hidden_dims
    trunk = [
        BayesianLinear.initialize(i, o, rng, config.mu_init_std, config.rho_init)
        for i, o in zip(dims[:-1], dims[1:])
    ]
    heads = [
        BayesianLinear.initialize(dims[-1], 2 * len(g), rng, config.mu_init_std, config.rho_init)
        for g in config.groups()
    ]
    return BnnModel(config, trunk, heads)


# --------------------------------------------------------------------------
# noise bundles

NoiseBundle = list  # [(eps_w, eps_b), ...] aligned with model.layers()


def draw_noise(model: BnnModel, rng: np.random.Generator, n_samples: int) -> NoiseBundle:
    return [
        (rng.standard_normal((n_samples,) + l.mu_w.shape), rng.standard_normal((n_samples,) + l.mu_b.shape))
        for l in model.layers()
    ]


def zero_noise(model: BnnModel, n_samples: int = 1) -> NoiseBundle:
    return [
        (np.zeros((n_samples,) + l.mu_w.shape), np.zeros((n_samples,) + l.mu_b.shape))
        for l in model.layers()
    ]


def _as_batch(noise: NoiseBundle, model: BnnModel) -> NoiseBundle:
    layers = model.layers()
    if len(noise) != len(layers):
        raise ValueError(f"noise bundle has {len(noise)} layers, model has {len(layers)}")
    out = []
    for layer, (ew, eb) in zip(layers, noise):
        ew, eb = np.asarray(ew, dtype=np.float64), np.asarray(eb, dtype=np.float64)
        if ew.shape == layer.mu_w.shape:
            ew, eb = ew[None], eb[None]
        if ew.shape[1:] != layer.mu_w.shape or eb.shape[1:] != layer.mu_b.shape:
            raise ValueError("noise shapes do not match layer shapes")
        out.append((ew, eb))
    return out


# --------------------------------------------------------------------------
# forward / backward


def scale_inputs(config: ModelConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"expected inputs with {config.input_dim} features, got shape {x.shape}")
    if config.input_low is None:
        return x
    low = np.asarray(config.input_low)
    return (x - low) / (np.asarray(config.input_high) - low)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each trunk layer
    pre: list = field(default_factory=list)  # pre-activations of trunk layers
    weights: list = field(default_factory=list)  # sampled (W, b) per layer in model.layers() order
    hidden: Optional[np.ndarray] = None
    active_heads: tuple[int, ...] = ()


def forward_batch(model: BnnModel, x, noise: NoiseBundle, active_heads: Optional[Sequence[int]] = None):
    """Sampled forward pass.

    Returns ``(out, cache)`` with ``out`` of shape ``(S, B, n_actions, 2)``;
    ``out[..., 0]`` is the estimate and ``out[..., 1]`` the log-variance.
    Outputs of heads not listed in ``active_heads`` are NaN and their
    parameters are never read.
    """
    cfg = model.config
    noise = _as_batch(noise, model)
    h = scale_inputs(cfg, x)
    n_samples = noise[0][0].shape[0]
    cache = ForwardCache()
    n_trunk = len(model.trunk)
    for layer, (ew, eb) in zip(model.trunk, noise[:n_trunk]):
        w = layer.mu_w + sigma_of_rho(layer.rho_w) * ew
        b = layer.mu_b + sigma_of_rho(layer.rho_b) * eb
        a = h @ w.transpose(0, 2, 1) + b[:, None, :]
        cache.inputs.append(h)
        cache.pre.append(a)
        cache.weights.append((w, b))
        h = np.maximum(a, 0.0)
    if h.ndim == 2:  # no trunk layers drew noise over samples
        h = np.broadcast_to(h, (n_samples,) + h.shape)
    cache.hidden = h

    groups = cfg.groups()
    active = tuple(range(len(groups))) if active_heads is None else tuple(active_heads)
    cache.active_heads = active
    out = np.full((n_samples, h.shape[1], cfg.n_actions, 2), np.nan)
    for k, (layer, (ew, eb)) in enumerate(zip(model.heads, noise[n_trunk:])):
        if k not in active:
            cache.weights.append(None)
            continue
        w = layer.mu_w + sigma_of_rho(layer.rho_w) * ew
        b = layer.mu_b + sigma_of_rho(layer.rho_b) * eb
        z = h @ w.transpose(0, 2, 1) + b[:, None, :]
        cache.weights.append((w, b))
        out[:, :, list(groups[k]), :] = z.reshape(z.shape[0], z.shape[1], len(groups[k]), 2)
    return out, cache


def backward_batch(model: BnnModel, cache: ForwardCache, d_out: np.ndarray) -> list:
    """Gradient of a scalar loss with respect to every sampled weight.

    ``d_out`` has the shape of the forward output; NaN entries are not
    allowed (pass zeros for unsupervised outputs). Returns a list of
    ``(dW, db)`` per layer with the leading sample axis, or ``None`` for
    heads that were inactive in the forward pass.
    """
    groups = model.config.groups()
    n_trunk = len(model.trunk)
    h = cache.hidden
    grads: list = [None] * len(model.layers())
    dh = np.zeros_like(h)
    for k in cache.active_heads:
        w, _ = cache.weights[n_trunk + k]
        dz = d_out[:, :, list(groups[k]), :].reshape(d_out.shape[0], d_out.shape[1], -1)
        grads[n_trunk + k] = (dz.transpose(0, 2, 1) @ h, dz.sum(axis=1))
        dh = dh + dz @ w
    for i in range(n_trunk - 1, -1, -1):
        da = dh * (cache.pre[i] > 0)
        h_in = cache.inputs[i]
        if h_in.ndim == 2:
            dw = np.einsum("sbo,bi->soi", da, h_in)
        else:
            dw = da.transpose(0, 2, 1) @ h_in
        grads[i] = (dw, da.sum(axis=1))
        if i > 0:
            dh = da @ cache.weights[i][0]
    return grads


def weight_grads_to_param_grads(model: BnnModel, noise: NoiseBundle, weight_grads: list) -> list:
    """Sum per-sample weight gradients into (d_mu_w, d_rho_w, d_mu_b, d_rho_b) per layer."""
    noise = _as_batch(noise, model)
    out = []
    for layer, (ew, eb), g in zip(model.layers(), noise, weight_grads):
        if g is None:
            out.append(tuple(np.zeros_like(a) for a in layer.arrays()))
            continue
        dw, db = g
        out.append(
            (
                dw.sum(axis=0),
                (dw * ew).sum(axis=0) * sigmoid(layer.rho_w),
                db.sum(axis=0),
                (db * eb).sum(axis=0) * sigmoid(layer.rho_b),
            )
        )
    return out


def forward_sampled(model: BnnModel, x, eps_bundle: NoiseBundle) -> tuple[np.ndarray, np.ndarray]:
    """One sampled pass for a single input; returns (estimates, log-variances) per action."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.config.input_dim,):
        raise ValueError(f"expected a vector of {model.config.input_dim} features, got shape {x.shape}")
    out, _ = forward_batch(model, x, eps_bundle)
    if out.shape[0] != 1:
        raise ValueError("forward_sampled expects a single noise draw per parameter")
    return out[0, 0, :, 0], out[0, 0, :, 1]


@dataclass
class Prediction:
    mean_y: np.ndarray  # (B, n_actions)
    log_var: np.ndarray
    mc_std_y: np.ndarray


def predict(model: BnnModel, x, mc_samples: Optional[int] = None, seed: int = 0) -> Prediction:
    """Average ``mc_samples`` sampled passes; ``mc_std_y`` is the spread of the estimates."""
    mc_samples = model.config.mc_samples if mc_samples is None else mc_samples
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    rng = np.random.default_rng(seed)
    out, _ = forward_batch(model, x, draw_noise(model, rng, mc_samples))
    y = out[..., 0]
    return Prediction(mean_y=y.mean(axis=0), log_var=out[..., 1].mean(axis=0), mc_std_y=y.std(axis=0))


# --------------------------------------------------------------------------
# checkpoints
#
# npz archive holding:
#   __magic__    "SOCIALBNN-CKPT"
#   __version__  int64 scalar (currently 1)
#   config       JSON of ModelConfig
#   L{i}_{mu_w,rho_w,mu_b,rho_b}  float64 arrays, trunk layers then heads
# plus optional caller metadata under ``meta`` (JSON).


def save_checkpoint(model: BnnModel, path, meta: Optional[dict] = None) -> None:
    arrays = {
        "__magic__": np.array(CHECKPOINT_MAGIC),
        "__version__": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "config": np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for i, layer in enumerate(model.layers()):
        for name, a in zip(("mu_w", "rho_w", "mu_b", "rho_b"), layer.arrays()):
            arrays[f"L{i}_{name}"] = a
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[BnnModel, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__magic__" not in z or str(z["__magic__"]) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a socialbnn checkpoint")
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.from_dict(json.loads(str(z["config"])))
        meta = json.loads(str(z["meta"]))
        skeleton = init_model(config, 0)
        layers = [
            BayesianLinear(*(z[f"L{i}_{n}"].copy() for n in ("mu_w", "rho_w", "mu_b", "rho_b")))
            for i in range(len(skeleton.layers()))
        ]
    n_trunk = len(skeleton.trunk)
    model = BnnModel(config, layers[:n_trunk], layers[n_trunk:])
    for a, b in zip(model.layers(), skeleton.layers()):
        if a.mu_w.shape != b.mu_w.shape:
            raise ValueError(f"{path}: layer shapes do not match the stored config")
    return model, meta
