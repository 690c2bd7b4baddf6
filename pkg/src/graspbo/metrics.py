"""Grasp quality metrics, force closure and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import hull
from .contact import WrenchSet

METRIC_NAMES = ("q_iso", "q_eps", "q_v", "q_uni")


def _sv_ratio(M: np.ndarray, rank: int) -> float:
    """``sigma_min / sigma_max`` over the first ``rank`` singular values (zero-padded)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] <= 0:
        return 0.0
    s = np.concatenate([s, np.zeros(max(0, rank - len(s)))])
    return float(s[rank - 1] / s[0])


def q_isotropy(G: np.ndarray) -> float:
    """Grasp isotropy index: ratio of extreme singular values of the 6-row grasp matrix."""
    return _sv_ratio(G, 6)


def q_uniformity(J: np.ndarray) -> float:
    """Reciprocal condition number of the hand Jacobian (larger is better)."""
    J = np.asarray(J, dtype=float)
    return _sv_ratio(J, J.shape[1])


def _points(W) -> np.ndarray:
    return W.primitives if isinstance(W, WrenchSet) else np.asarray(W, dtype=float)


def force_closure(W) -> int:
    P = _points(W)
    if P.size == 0:
        return 0
    return int(hull.contains_origin(P))


def q_epsilon(W, method: str = "exact", n_dirs: int = 4096, rng=None) -> float:
    """Largest-minimum resisted wrench; zero without force closure.

    ``method="exact"`` uses the facet distance, ``"support"`` the sampled
    support-function bound.
    """
    P = _points(W)
    if P.size == 0 or not hull.contains_origin(P):
        return 0.0
    if method == "exact":
        try:
            return hull.min_facet_distance(hull.convex_hull(P))
        except (hull.Degenerate, hull.OriginOutside):
            return 0.0
    if method == "support":
        rng = np.random.default_rng(0) if rng is None else rng
        return hull.support_epsilon(P, n_dirs, rng)
    raise ValueError(f"unknown epsilon method {method!r}")


def q_volume(W, n_samples: int, rng: np.random.Generator, method: str = "radial") -> float:
    P = _points(W)
    if P.size == 0:
        return 0.0
    est, _ = hull.mc_volume(P, n_samples, rng, method=method)
    return max(est, 0.0)


@dataclass(frozen=True)
class MetricWeights:
    w1: float = 0.0
    w2: float = 1.0
    w3: float = 0.0
    w4: float = 0.0

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0):
            raise ValueError("metric weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"metric weights must sum to 1, got {w.sum()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4], dtype=float)

    @classmethod
    def single(cls, index: int) -> "MetricWeights":
        """Unit weight on metric ``index`` (0-based over iso, eps, v, uni)."""
        w = [0.0] * 4
        w[index] = 1.0
        return cls(*w)


@dataclass(frozen=True)
class QualityVector:
    """Raw and normalized metrics plus the closure flag."""

    raw: np.ndarray
    normalized: np.ndarray
    q_f: int

    def __post_init__(self):
        if self.q_f not in (0, 1):
            raise ValueError("q_f is binary")
        if self.raw[1] > 0 and self.q_f != 1:
            raise ValueError("positive q_eps implies force closure")


def combine(q_normalized, w: MetricWeights) -> float:
    """Weighted sum of normalized metrics."""
    return float(np.asarray(q_normalized, dtype=float) @ w.as_array())


class MetricScaler(TransformerMixin, BaseEstimator):
    """Per-metric min/max scaling to ``[0, 1]`` with clamping.

    ``mode="fixed"``: bounds come from :meth:`fit` (or ``bounds``) and stay
    put. ``mode="running"``: :meth:`partial_fit` widens them with every new
    evaluation. A metric with an empty range maps to 0.5.

    Parameters
    ----------
    mode : {"fixed", "running"}
    bounds : array-like of shape (2, n_metrics), optional
        Reference ``[min, max]`` rows used instead of fitting.
    """

    def __init__(self, mode="fixed", bounds=None):
        self.mode = mode
        self.bounds = bounds

    def fit(self, X, y=None):
        if self.mode not in ("fixed", "running"):
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            self.data_min_, self.data_max_ = b[0].copy(), b[1].copy()
            self.n_features_in_ = b.shape[1]
            return self
        X = check_array(X, ensure_min_samples=1)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def partial_fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if not hasattr(self, "data_min_"):
            return self.fit(X)
        self.data_min_ = np.minimum(self.data_min_, X.min(axis=0))
        self.data_max_ = np.maximum(self.data_max_, X.max(axis=0))
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, ensure_min_samples=1)
        rng = self.data_max_ - self.data_min_
        out = np.full(X.shape, 0.5)
        ok = rng > 0
        out[:, ok] = (X[:, ok] - self.data_min_[ok]) / rng[ok]
        return np.clip(out, 0.0, 1.0)


def normalize(value: float, state: MetricScaler, metric_id: int) -> float:
    """Scale one raw metric value with a fitted :class:`MetricScaler`."""
    check_is_fitted(state, "data_min_")
    lo, hi = state.data_min_[metric_id], state.data_max_[metric_id]
    if hi <= lo:
        return 0.5
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))
