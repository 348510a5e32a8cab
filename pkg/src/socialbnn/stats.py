"""Annotation reliability and correlation statistics.

Variances use the sample (n - 1) denominator throughout.
"""

from __future__ import annotations

import numpy as np


def cronbach_alpha(m) -> float:
    """Cronbach's alpha of an (n_subjects, k_raters) ratings matrix.

    ``alpha = k / (k - 1) * (1 - sum(rater variances) / variance(row totals))``
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"need at least 2 subjects and 2 raters, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("ratings matrix has missing entries")
    k = m.shape[1]
    total_var = m.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise ValueError("total-score variance is zero; alpha is undefined")
    return float(k / (k - 1) * (1.0 - m.var(axis=0, ddof=1).sum() / total_var))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for a constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("rmse of an empty series")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def alpha_by_mode(ratings: np.ndarray) -> dict[str, float]:
    """Alpha per action group; subjects are (scene, action) pairs and columns are raters.

    ``ratings`` has shape (n_scenes, 16, n_raters).
    """
    from .scenegen import ARROW_ACTIONS, CIRCLE_ACTIONS

    out = {}
    for name, acts in (("circle", CIRCLE_ACTIONS), ("arrow", ARROW_ACTIONS)):
        block = ratings[:, list(acts), :]
        out[name] = cronbach_alpha(block.reshape(-1, block.shape[2]))
    return out


# features for the correlation table and the predicate marking rows where the entity exists
CORRELATION_FEATURES = {
    "group_size": (8, lambda x: x[:, 3] >= 2),
    "group_radius": (9, lambda x: x[:, 3] >= 2),
    "dist_group": (10, lambda x: x[:, 3] >= 2),
    "robot_in_group": (11, lambda x: x[:, 3] >= 2),
    "robot_facing_group": (12, lambda x: x[:, 3] >= 2),
    "dist_child": (5, lambda x: x[:, 4] > 0),
    "dist_animal": (7, lambda x: x[:, 6] > 0),
    "dist_human_0": (13, lambda x: x[:, 3] >= 1),
    "dist_human_1": (14, lambda x: x[:, 3] >= 2),
    "dist_human_2": (15, lambda x: x[:, 3] >= 3),
}


def correlation_table(features: np.ndarray, labels: np.ndarray, present_only: bool = True) -> dict:
    """Pearson r between each action's mean rating and selected scene features.

    ``features`` (N, 29) and ``labels`` (N, 16) are row-aligned; NaN labels
    are skipped. With ``present_only`` a feature is correlated only over
    scenes where its entity exists, so absent-entity sentinels do not enter.
    Returns ``{action_index: {feature_name: r or nan}}``.
    """
    table = {}
    for a in range(labels.shape[1]):
        row = {}
        for name, (j, present) in CORRELATION_FEATURES.items():
            keep = ~np.isnan(labels[:, a])
            if present_only:
                keep &= present(features)
            try:
                row[name] = pearson(features[keep, j], labels[keep, a])
            except ValueError:
                row[name] = float("nan")
        table[a] = row
    return table
