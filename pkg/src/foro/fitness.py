"""Prompt fitness: cross-entropy plus activation-discrepancy regularizer.

The score of a candidate prompt is the mean cross-entropy of a throwaway
ridge classifier fitted on the current batch's projected features, plus a
lambda-weighted sum (over layers) of Euclidean distances between the batch's
CLS statistics and their exponentially-averaged history. The history is
updated once per task, after search finishes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from foro.backbone import Backbone, LayerStats
from foro.encoding import RandomProjection, nrp_project, one_hot, ridge_fit


class UninitializedHistoryError(ValueError):
    pass


class StatsShapeError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalStats:
    """EMA history of per-layer CLS mean/std; uninitialized before task 1."""

    alpha: float
    mu: np.ndarray | None = None     # (layers, embed_dim)
    sigma: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")

    @property
    def initialized(self) -> bool:
        return self.mu is not None


@dataclass(frozen=True)
class FitnessConfig:
    lam: float = 0.3
    generations: int = 20
    eval_batch: int = 32

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise StatsShapeError(f"statistics shapes differ: {a.shape} vs {b.shape}")


def discrepancy(stats: LayerStats, hist: GlobalStats) -> float:
    """sum_l ( ||mu_l - mu_l^G|| + ||sigma_l - sigma_l^G|| )."""
    if not hist.initialized:
        raise UninitializedHistoryError("history has no statistics yet")
    _check_shapes(stats.mu, hist.mu)
    _check_shapes(stats.sigma, hist.sigma)
    mu_terms = np.linalg.norm(stats.mu - hist.mu, axis=1)
    sigma_terms = np.linalg.norm(stats.sigma - hist.sigma, axis=1)
    return float(mu_terms.sum() + sigma_terms.sum())


def cross_entropy(logits: np.ndarray, y_onehot: np.ndarray) -> float:
    """Mean -log softmax probability of the true class, clamped at 1e-12."""
    logits = np.asarray(logits, dtype=np.float64)
    y_onehot = np.asarray(y_onehot, dtype=np.float64)
    if logits.shape != y_onehot.shape:
        raise StatsShapeError(
            f"logits {logits.shape} vs labels {y_onehot.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    true_p = (probs * y_onehot).sum(axis=1)
    return float(-np.log(np.maximum(true_p, 1e-12)).mean())


def update_history(hist: GlobalStats, stats: LayerStats) -> GlobalStats:
    """EMA step mu^G <- alpha*mu + (1-alpha)*mu^G; first call seeds the history."""
    if not hist.initialized:
        return replace(hist, mu=stats.mu.copy(), sigma=stats.sigma.copy())
    _check_shapes(stats.mu, hist.mu)
    a = hist.alpha
    return replace(hist,
                   mu=a * stats.mu + (1.0 - a) * hist.mu,
                   sigma=a * stats.sigma + (1.0 - a) * hist.sigma)


def evaluate_prompt(prompts: np.ndarray,
                    patch_batch: np.ndarray,
                    labels: np.ndarray,
                    class_ids,
                    bb: Backbone,
                    proj: RandomProjection,
                    hist: GlobalStats,
                    lam: float,
                    gamma: float) -> tuple[float, LayerStats]:
    """Score one prompt matrix on one minibatch; returns (fitness, stats).

    The cross-entropy term uses a throwaway ridge head fitted on half of the
    batch's projected features (alternate rows) and scored on the held-out
    half, with the same gamma as the knowledge encoder; fitting and scoring
    on identical rows leaves almost no contrast between candidates, so the
    ranking would be noise. Batches too small to split are fitted and scored
    whole. The discrepancy term is skipped while the history is
    uninitialized (first task).
    """
    x_raw, stats = bb.batch_forward(prompts, patch_batch)
    h = nrp_project(proj, x_raw)
    y = one_hot(labels, class_ids)
    n = h.shape[0]
    if n >= 4:
        fit_rows = np.arange(0, n, 2)
        score_rows = np.arange(1, n, 2)
    else:
        fit_rows = score_rows = np.arange(n)
    w = ridge_fit(h[fit_rows], y[fit_rows], gamma)
    loss = cross_entropy(h[score_rows] @ w, y[score_rows])
    if lam > 0 and hist.initialized:
        loss += lam * discrepancy(stats, hist)
    return loss, stats


def evaluate_candidate(genome: np.ndarray,
                       num_prompts: int,
                       patch_batch: np.ndarray,
                       labels: np.ndarray,
                       class_ids,
                       bb: Backbone,
                       proj: RandomProjection,
                       hist: GlobalStats,
                       lam: float,
                       gamma: float) -> float:
    """Reshape a flat genome to a prompt matrix and score it."""
    d = bb.config.embed_dim
    prompts = np.asarray(genome, dtype=float).reshape(num_prompts, d)
    loss, _ = evaluate_prompt(prompts, patch_batch, labels, class_ids,
                              bb, proj, hist, lam, gamma)
    return loss
