"""Diagonal-covariance Gaussian mixtures trained by EM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-6
_LOG2PI = np.log(2 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    history: list[float] = field(default_factory=list)  # mean training log-likelihood per EM iteration

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def component_loglik(self, x) -> np.ndarray:
        """``log w_k + log N(x | mu_k, diag var_k)``, shape ``(n, K)``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inv = 1.0 / self.variances
        # (x - mu)^2 / var expanded to keep memory at O(n K)
        quad = (x ** 2) @ inv.T - 2 * x @ (self.means * inv).T + np.sum(self.means ** 2 * inv, axis=1)
        const = -0.5 * (self.means.shape[1] * _LOG2PI + np.sum(np.log(self.variances), axis=1))
        return np.log(np.maximum(self.weights, 1e-300)) + const - 0.5 * quad

    def loglik(self, x) -> np.ndarray:
        return logsumexp(self.component_loglik(x), axis=1)

    def responsibilities(self, x) -> np.ndarray:
        lc = self.component_loglik(x)
        return np.exp(lc - logsumexp(lc, axis=1, keepdims=True))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> GmmModel:
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float), np.asarray(d["variances"], float))


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: centres drawn with probability proportional to squared distance."""
    n = x.shape[0]
    centres = [x[rng.integers(n)]]
    d2 = np.sum((x - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centres.append(x[i])
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centres)


def fit_gmm(x, n_components: int = 32, seed: int = 0, max_iter: int = 50, tol: float = 1e-4,
            var_floor: float = VAR_FLOOR) -> GmmModel:
    """EM from a k-means++ start.

    Stops after ``max_iter`` iterations or when the mean log-likelihood per
    point improves by less than ``tol``. Variances are clamped at
    ``var_floor``; the clamped update is still the constrained maximiser, so
    the likelihood stays non-decreasing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    if n < n_components:
        raise ValueError(f"{n} points cannot train {n_components} components")
    rng = np.random.default_rng(seed)
    means = kmeans_pp(x, n_components, rng)
    # hard assignment to the nearest seed gives the starting weights and variances
    dist = np.sum(x ** 2, axis=1)[:, None] - 2 * x @ means.T + np.sum(means ** 2, axis=1)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), np.argmin(dist, axis=1)] = 1.0
    model = _m_step(x, resp, var_floor)
    prev = -np.inf
    for _ in range(max_iter):
        lc = model.component_loglik(x)
        ll_point = logsumexp(lc, axis=1)
        ll = float(np.mean(ll_point))
        model.history.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        resp = np.exp(lc - ll_point[:, None])
        history = model.history
        model = _m_step(x, resp, var_floor)
        model.history = history
    return model


def _m_step(x: np.ndarray, resp: np.ndarray, var_floor: float) -> GmmModel:
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, 1e-12)
    weights = nk / nk.sum()
    means = (resp.T @ x) / safe[:, None]
    var = np.stack([resp[:, k] @ (x - means[k]) ** 2 for k in range(resp.shape[1])]) / safe[:, None]
    # an empty component keeps a unit variance; its zero weight removes it from the mixture
    var[nk < 1e-12] = 1.0
    return GmmModel(weights, means, np.maximum(var, var_floor))
