"""Variational objective with a heteroscedastic Gaussian likelihood.

For one Monte Carlo draw of the weights ``w``::

    L = scale * (p1 * sum log q(w) - p2 * sum log p(w))
        + p3 * mean_{supervised (k, a)} [ 0.5 * exp(-s) * (y - yhat)^2 + 0.5 * s ]

where ``s`` is the predicted log-variance. The reported loss is the mean of
``L`` over ``mc_samples`` draws. ``scale`` is 1 for a stand-alone evaluation;
the trainer sets it to ``1 / batches_per_epoch`` so the complexity cost is
counted once per epoch.

The network emits the log-variance ``log sigma^2`` directly; the log standard
deviation is half of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import BnnModel, NoiseBundle, backward_batch, draw_noise, forward_batch, weight_grads_to_param_grads
from .variational import PriorSpec, dlog_prior_dw, log_gaussian_density, log_prior_density, sigma_of_rho, sigmoid


@dataclass(frozen=True)
class LossConfig:
    p1: float = 0.001
    p2: float = 0.001
    p3: float = 0.05
    mc_samples: int = 10
    prior: PriorSpec = field(default_factory=PriorSpec)
    complexity_scale: float = 1.0

    def __post_init__(self):
        if min(self.p1, self.p2, self.p3) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass
class LossBreakdown:
    total: float
    log_q_term: float  # sum over all parameters of log q(w), averaged over draws
    log_prior_term: float  # same for log p(w)
    nll_term: float  # mean heteroscedastic NLL over supervised entries, averaged over draws
    residuals: np.ndarray  # (K, n_actions) mean of y - yhat over draws, NaN where unsupervised
    p1: float
    p2: float
    p3: float
    complexity_scale: float = 1.0

    def recompose(self) -> float:
        return self.complexity_scale * (self.p1 * self.log_q_term - self.p2 * self.log_prior_term) + self.p3 * self.nll_term


def heteroscedastic_nll(y, y_hat, log_var):
    """Elementwise ``0.5 * exp(-log_var) * (y - y_hat)^2 + 0.5 * log_var``."""
    r = np.asarray(y, dtype=np.float64) - y_hat
    return 0.5 * np.exp(-np.asarray(log_var, dtype=np.float64)) * r * r + 0.5 * log_var


def nll_gradient_wrt_outputs(y, y_hat, log_var):
    r = np.asarray(y, dtype=np.float64) - y_hat
    inv_var = np.exp(-np.asarray(log_var, dtype=np.float64))
    return (-r * inv_var)[()], (0.5 - 0.5 * r * r * inv_var)[()]


def _check_batch(model: BnnModel, x, y, mask):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
    mask = np.asarray(mask, dtype=bool).reshape(y.shape)
    if y.shape[1] != model.config.n_actions:
        raise ValueError(f"labels have {y.shape[1]} columns, model has {model.config.n_actions} actions")
    if not mask.any():
        raise ValueError("batch has no supervised labels")
    if not np.all(np.isfinite(y[mask])):
        raise ValueError("supervised labels must be finite")
    return x, y, mask


def _locate_non_finite(model: BnnModel, out: np.ndarray, what: str) -> str:
    for i, layer in enumerate(model.layers()):
        for name, a in zip(("mu_w", "rho_w", "mu_b", "rho_b"), layer.arrays()):
            bad = np.argwhere(~np.isfinite(a))
            if bad.size:
                return f"{what}: non-finite parameter layer {i} {name}{tuple(int(v) for v in bad[0])}"
    bad = np.argwhere(~np.isfinite(out))
    if bad.size:
        s, k, a, c = (int(v) for v in bad[0])
        return f"{what}: non-finite output at draw {s}, batch element {k}, action {a}, channel {c}"
    return f"{what}: non-finite value"


def evaluate(
    model: BnnModel,
    x,
    y,
    mask,
    cfg: LossConfig = LossConfig(),
    seed: int = 0,
    noise: Optional[NoiseBundle] = None,
    with_grad: bool = False,
    active_heads=None,
):
    """Loss breakdown and optionally the gradient for every (mu, rho).

    Returns ``(breakdown, grads)`` where ``grads`` is a list of
    ``(d_mu_w, d_rho_w, d_mu_b, d_rho_b)`` per layer, or ``None``.
    """
    x, y, mask = _check_batch(model, x, y, mask)
    if noise is None:
        noise = draw_noise(model, np.random.default_rng(seed), cfg.mc_samples)
    out, cache = forward_batch(model, x, noise, active_heads=active_heads)
    n_samples = out.shape[0]

    y_hat, log_var = out[..., 0], out[..., 1]
    y_filled = np.where(mask, y, 0.0)
    r = np.where(mask, y_filled - y_hat, 0.0)
    lv = np.where(mask, log_var, 0.0)
    inv_var = np.exp(-lv)
    n_sup = int(mask.sum())
    nll = (0.5 * r * r * inv_var + 0.5 * lv).sum(axis=(1, 2)) / n_sup
    nll_term = float(nll.mean())

    log_q = 0.0
    log_p = 0.0
    for layer, (ew, eb) in zip(model.layers(), noise):
        for mu, rho, eps in ((layer.mu_w, layer.rho_w, ew), (layer.mu_b, layer.rho_b, eb)):
            sig = sigma_of_rho(rho)
            w = mu + sig * eps
            log_q += float(log_gaussian_density(w, mu, sig).sum())
            log_p += float(log_prior_density(w, cfg.prior).sum())
    log_q /= n_samples
    log_p /= n_samples

    total = cfg.complexity_scale * (cfg.p1 * log_q - cfg.p2 * log_p) + cfg.p3 * nll_term
    if not np.isfinite(total):
        raise FloatingPointError(_locate_non_finite(model, np.where(mask, out[..., 0], 0.0), "loss"))
    residuals = np.where(mask, r.mean(axis=0), np.nan)
    bd = LossBreakdown(
        total=total,
        log_q_term=log_q,
        log_prior_term=log_p,
        nll_term=nll_term,
        residuals=residuals,
        p1=cfg.p1,
        p2=cfg.p2,
        p3=cfg.p3,
        complexity_scale=cfg.complexity_scale,
    )
    if not with_grad:
        return bd, None

    coef = cfg.p3 / (n_samples * n_sup)
    d_out = np.zeros_like(out)
    d_out[..., 0] = np.where(mask, -r * inv_var * coef, 0.0)
    d_out[..., 1] = np.where(mask, (0.5 - 0.5 * r * r * inv_var) * coef, 0.0)
    grads = weight_grads_to_param_grads(model, noise, backward_batch(model, cache, d_out))

    # complexity term: d log q / d mu = 0 and d log q / d sigma = -1 / sigma along w = mu + sigma * eps
    c = cfg.complexity_scale / n_samples
    full = []
    for layer, (ew, eb), (gmw, grw, gmb, grb) in zip(model.layers(), noise, grads):
        parts = []
        for mu, rho, eps, g_mu, g_rho in (
            (layer.mu_w, layer.rho_w, ew, gmw, grw),
            (layer.mu_b, layer.rho_b, eb, gmb, grb),
        ):
            sig = sigma_of_rho(rho)
            dprior = dlog_prior_dw(mu + sig * eps, cfg.prior)
            g_mu = g_mu - c * cfg.p2 * dprior.sum(axis=0)
            g_rho = g_rho + c * sigmoid(rho) * (-cfg.p1 * n_samples / sig - cfg.p2 * (dprior * eps).sum(axis=0))
            parts.append((g_mu, g_rho))
        full.append((parts[0][0], parts[0][1], parts[1][0], parts[1][1]))
    return bd, full


def elbo_loss(model: BnnModel, x, y, mask, cfg: LossConfig = LossConfig(), seed: int = 0, noise=None) -> LossBreakdown:
    return evaluate(model, x, y, mask, cfg, seed=seed, noise=noise)[0]
