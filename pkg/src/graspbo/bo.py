"""Expected-Improvement Bayesian optimization over a box.

The surrogate always works on unit-box coordinates; :class:`Bounds` maps them
to and from the problem's native units.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from .gp import GaussianProcessSurrogate, PredictiveMixture

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("bounds need lo < hi in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def from_unit(self, u) -> np.ndarray:
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass
class HistoryEntry:
    iteration: int
    x: np.ndarray
    record: Any
    y: float
    incumbent: float


@dataclass
class History:
    """Append-only trace of evaluations with the running incumbent."""

    entries: list = field(default_factory=list)

    def append(self, x, record, y) -> HistoryEntry:
        inc = y if not self.entries else max(self.entries[-1].incumbent, y)
        e = HistoryEntry(len(self.entries), np.asarray(x, dtype=float), record, float(y), float(inc))
        self.entries.append(e)
        return e

    def __len__(self):
        return len(self.entries)

    @property
    def X(self) -> np.ndarray:
        return np.array([e.x for e in self.entries])

    @property
    def y(self) -> np.ndarray:
        return np.array([e.y for e in self.entries])

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        i = int(np.argmax(self.y))
        return self.entries[i].x, self.entries[i].y


def _ei_terms(mu: np.ndarray, s: np.ndarray, rho: float) -> np.ndarray:
    diff = mu - rho
    pos = s > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(pos, diff / np.where(pos, s, 1.0), 0.0)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    ei = np.where(pos, diff * ndtr(z) + s * pdf, np.maximum(diff, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(mix: PredictiveMixture, rho: float) -> np.ndarray:
    """Mixture EI, ``mean_i[(mu_i - rho) Phi(z_i) + s_i phi(z_i)]`` with ``z_i = (mu_i - rho)/s_i``.

    Samples with zero predictive spread contribute ``max(0, mu_i - rho)``.
    """
    mu = np.atleast_2d(mix.means)
    s = np.sqrt(np.maximum(np.atleast_2d(mix.variances), 0.0))
    return _ei_terms(mu, s, rho).mean(axis=0)


def initial_design(bounds: Bounds, n0: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube design of ``n0`` points inside ``bounds``."""
    if n0 < 1:
        raise ValueError("the initial design needs at least one point")
    sampler = qmc.LatinHypercube(d=bounds.dim, seed=rng)
    return bounds.from_unit(sampler.random(n0))


def _lex_order(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    # descending value, then ascending coordinates
    keys = [points[:, j] for j in range(points.shape[1] - 1, -1, -1)] + [-values]
    return np.lexsort(keys)


def maximize_acquisition(model: GaussianProcessSurrogate, rho: float, bounds: Bounds,
                         rng: np.random.Generator, seen=None, n_candidates: int = 1024,
                         n_starts: int = 8, maxiter: int = 60, dup_tol: float = 1e-6) -> np.ndarray:
    """Approximate argmax of EI over ``bounds``.

    Scores ``n_candidates`` uniform unit-box points, refines the best
    ``n_starts`` by bounded Nelder-Mead, and returns the best point that is
    not within ``dup_tol`` (unit-box distance) of an already evaluated one.
    """
    d = bounds.dim
    U = rng.random((n_candidates, d))
    ei = expected_improvement(model.predict_mixture(U), rho)
    order = _lex_order(ei, U)
    pool = [U]
    pool_vals = [ei]
    box = [(0.0, 1.0)] * d

    point = model.point_predictor()

    def neg_ei(u):
        mu, var = point(np.clip(u, 0.0, 1.0))
        return -_ei_terms(mu, np.sqrt(var), rho).mean()

    for i in order[:n_starts]:
        if ei[i] <= 0:
            continue
        res = minimize(neg_ei, U[i], method="Nelder-Mead", bounds=box,
                       options={"maxiter": maxiter, "xatol": 1e-4, "fatol": 1e-12})
        u = np.clip(res.x, 0.0, 1.0)
        pool.append(u[None])
        pool_vals.append(np.array([-res.fun]))
    P = np.vstack(pool)
    V = np.concatenate(pool_vals)
    seen_u = None if seen is None or len(seen) == 0 else bounds.to_unit(np.asarray(seen))
    for i in _lex_order(V, P):
        if seen_u is not None and np.min(np.linalg.norm(seen_u - P[i], axis=1)) <= dup_tol:
            continue
        return bounds.from_unit(P[i])
    return bounds.from_unit(P[_lex_order(V, P)[0]])


def _safe_evaluate(evaluator, x):
    try:
        return evaluator(x)
    except Exception as err:  # evaluator failures become zero-outcome records
        log.warning("evaluation failed at %s: %s", x, err)
        return {"failure": repr(err)}, 0.0


def optimize(evaluator: Callable, bounds: Bounds, n0: int, iters: int,
             rng: np.random.Generator, surrogate: GaussianProcessSurrogate | None = None,
             n_candidates: int = 1024, n_starts: int = 8, callback=None) -> History:
    """Run the BO loop; ``evaluator(x) -> (record, y)``.

    The surrogate is fitted on the initial design, then updated after every
    acquisition-driven evaluation. Returns the full :class:`History`.
    """
    surrogate = GaussianProcessSurrogate() if surrogate is None else surrogate
    history = History()
    for x in initial_design(bounds, n0, rng):
        rec, y = _safe_evaluate(evaluator, x)
        e = history.append(x, rec, y)
        if callback:
            callback(e)
    if iters == 0:
        return history
    model = surrogate.set_params(random_state=rng).fit(bounds.to_unit(history.X), history.y)
    for _ in range(iters):
        rho = float(history.y.max())
        x = maximize_acquisition(model, rho, bounds, rng, seen=history.X,
                                 n_candidates=n_candidates, n_starts=n_starts)
        rec, y = _safe_evaluate(evaluator, x)
        e = history.append(x, rec, y)
        if callback:
            callback(e)
        if len(history) < n0 + iters:
            model = model.update(bounds.to_unit(x), y)
    return history


class BayesianOptimizer(BaseEstimator):
    """Estimator wrapper around :func:`optimize`.

    ``fit(evaluator, bounds)`` runs the loop and stores ``history_``,
    ``best_x_`` and ``best_y_``.
    """

    def __init__(self, n_initial=20, n_iter=50, n_candidates=1024, n_starts=8,
                 kernel="matern52", n_hyper_samples=10, refit_every=1, random_state=None):
        self.n_initial = n_initial
        self.n_iter = n_iter
        self.n_candidates = n_candidates
        self.n_starts = n_starts
        self.kernel = kernel
        self.n_hyper_samples = n_hyper_samples
        self.refit_every = refit_every
        self.random_state = random_state

    def fit(self, evaluator, bounds: Bounds):
        rng = (self.random_state if isinstance(self.random_state, np.random.Generator)
               else np.random.default_rng(self.random_state))
        gp = GaussianProcessSurrogate(kernel=self.kernel, n_hyper_samples=self.n_hyper_samples,
                                      refit_every=self.refit_every)
        t0 = time.perf_counter()
        self.history_ = optimize(evaluator, bounds, self.n_initial, self.n_iter, rng, gp,
                                 n_candidates=self.n_candidates, n_starts=self.n_starts)
        self.wall_time_ = time.perf_counter() - t0
        self.best_x_, self.best_y_ = self.history_.incumbent
        return self
