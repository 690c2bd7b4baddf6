"""Gaussian-process surrogate with slice-sampled kernel hyperparameters.

Hyperparameters live in log space as ``[log l_1..l_d, log s_f^2, log s_n^2]``
(the noise entry is dropped when the noise is fixed). Each posterior sample
gets its own Cholesky factorization; predictions are returned per sample as a
:class:`PredictiveMixture`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import SingularKernel

KERNELS = ("matern52", "squared_exponential")

_SQRT5 = np.sqrt(5.0)
_JITTER_LEVELS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# log-normal priors as (mean, std) of the log value, and hard log-space bounds
_PRIOR_LS = (np.log(0.3), 1.0)
_PRIOR_SF2 = (np.log(0.1), 1.5)
_PRIOR_SN2 = (np.log(1e-3), 2.0)
_BOUNDS_LS = (np.log(1e-2), np.log(10.0))
_BOUNDS_SF2 = (np.log(1e-4), np.log(10.0))


@dataclass(frozen=True)
class PredictiveMixture:
    """Per-sample predictive means and variances, each ``(m, n_points)``."""

    means: np.ndarray
    variances: np.ndarray

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


def _as_generator(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def kernel_matrix(kernel: str, A: np.ndarray, B: np.ndarray, ls: np.ndarray,
                  sf2: np.ndarray) -> np.ndarray:
    """Batched ARD kernel. ``ls`` is ``(m, d)``, ``sf2`` ``(m,)``; returns ``(m, len(A), len(B))``."""
    As = A[None, :, :] / ls[:, None, :]
    Bs = B[None, :, :] / ls[:, None, :]
    r2 = (np.sum(As * As, axis=-1)[:, :, None] + np.sum(Bs * Bs, axis=-1)[:, None, :]
          - 2.0 * np.einsum("mid,mjd->mij", As, Bs))
    r2 = np.maximum(r2, 0.0)
    if kernel == "matern52":
        r = np.sqrt(r2)
        k = (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
    elif kernel == "squared_exponential":
        k = np.exp(-0.5 * r2)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return sf2[:, None, None] * k


def _kernel_and_grads(kernel: str, X: np.ndarray, ls: np.ndarray, sf2: float,
                      with_grads: bool = True):
    """Kernel matrix on ``X`` and its derivatives w.r.t. ``log l_j`` and ``log sf2``."""
    D = (X[:, None, :] - X[None, :, :]) / ls
    D2 = D * D
    r2 = D2.sum(axis=-1)
    if kernel == "matern52":
        r = np.sqrt(r2)
        e = np.exp(-_SQRT5 * r)
        K = sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * e
        if not with_grads:
            return K, None
        pref = sf2 * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
    elif kernel == "squared_exponential":
        K = sf2 * np.exp(-0.5 * r2)
        if not with_grads:
            return K, None
        pref = K
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    dls = [pref * D2[:, :, j] for j in range(X.shape[1])]
    return K, dls + [K]


def robust_cholesky(K: np.ndarray, scale: float, max_jitter: float = 1e-6):
    """Cholesky factor of ``K + jitter * scale * I`` with escalating jitter.

    Returns ``(L, jitter)``. A factor is accepted when its smallest pivot is
    not negligible relative to the largest.

    Raises
    ------
    SingularKernel
        If no jitter level up to ``max_jitter`` gives a usable factor.
    """
    n = len(K)
    eye = np.eye(n)
    for jit in _JITTER_LEVELS:
        if jit > max_jitter:
            break
        try:
            L = np.linalg.cholesky(K + jit * scale * eye)
        except np.linalg.LinAlgError:
            continue
        d = np.diag(L)
        if d.min() ** 2 > 1e-12 * d.max() ** 2:
            return L, jit
    raise SingularKernel(f"kernel matrix not positive definite with jitter <= {max_jitter}")


def _slice_step(logp, x: np.ndarray, lp: float, i: int, rng: np.random.Generator,
                width: float = 1.0, max_steps: int = 8):
    """One univariate slice-sampling update of coordinate ``i`` (stepping out + shrinkage)."""
    log_u = lp + np.log(rng.random())
    left = x[i] - width * rng.random()
    right = left + width
    j = int(np.floor(max_steps * rng.random()))
    k = max_steps - 1 - j

    def at(v):
        y = x.copy()
        y[i] = v
        return y

    while j > 0 and logp(at(left)) > log_u:
        left -= width
        j -= 1
    while k > 0 and logp(at(right)) > log_u:
        right += width
        k -= 1
    while True:
        v = left + (right - left) * rng.random()
        cand = at(v)
        lc = logp(cand)
        if lc > log_u:
            return cand, lc
        if v < x[i]:
            left = v
        else:
            right = v
        if right - left < 1e-12:
            return x, lp


class GaussianProcessSurrogate(RegressorMixin, BaseEstimator):
    """Zero-mean GP regressor averaging over hyperparameter samples.

    Parameters
    ----------
    kernel : {"matern52", "squared_exponential"}
        ARD covariance family.
    n_hyper_samples : int
        Number of posterior hyperparameter samples kept (``m``).
    n_burnin : int
        Slice-sampling sweeps discarded on a cold start.
    n_warm_burnin : int
        Sweeps discarded when the chain is warm-started by :meth:`update`.
    fixed_noise : float or None
        Observation noise variance; ``None`` samples it with the other
        hyperparameters (bounded below by ``noise_lower``).
    hyperparameters : tuple or None
        ``(lengthscales, signal_variance, noise_variance)`` to use instead of
        sampling.
    refit_every : int
        :meth:`update` resamples hyperparameters every ``refit_every`` new
        observations and otherwise extends the factorizations.
    max_jitter : float
        Largest diagonal jitter (relative to the signal variance).
    random_state : int, Generator or None
    """

    def __init__(self, kernel="matern52", n_hyper_samples=10, n_burnin=20, n_warm_burnin=3,
                 fixed_noise=None, noise_lower=1e-6, hyperparameters=None, refit_every=1,
                 max_jitter=1e-6, random_state=None):
        self.kernel = kernel
        self.n_hyper_samples = n_hyper_samples
        self.n_burnin = n_burnin
        self.n_warm_burnin = n_warm_burnin
        self.fixed_noise = fixed_noise
        self.noise_lower = noise_lower
        self.hyperparameters = hyperparameters
        self.refit_every = refit_every
        self.max_jitter = max_jitter
        self.random_state = random_state

    # -- hyperparameter posterior --------------------------------------------

    def _unpack(self, phi: np.ndarray, d: int):
        ls = np.exp(phi[:d])
        sf2 = np.exp(phi[d])
        sn2 = float(self.fixed_noise) if self.fixed_noise is not None else np.exp(phi[d + 1])
        return ls, sf2, sn2

    def _log_bounds(self, d: int):
        lo = [_BOUNDS_LS[0]] * d + [_BOUNDS_SF2[0]]
        hi = [_BOUNDS_LS[1]] * d + [_BOUNDS_SF2[1]]
        if self.fixed_noise is None:
            lo.append(np.log(self.noise_lower))
            hi.append(0.0)
        return np.array(lo), np.array(hi)

    def _log_prior(self, phi: np.ndarray, d: int) -> float:
        lp = -0.5 * np.sum(((phi[:d] - _PRIOR_LS[0]) / _PRIOR_LS[1]) ** 2)
        lp -= 0.5 * ((phi[d] - _PRIOR_SF2[0]) / _PRIOR_SF2[1]) ** 2
        if self.fixed_noise is None:
            lp -= 0.5 * ((phi[d + 1] - _PRIOR_SN2[0]) / _PRIOR_SN2[1]) ** 2
        return float(lp)

    def log_marginal_likelihood(self, phi, X=None, y=None, eval_gradient=False):
        """Log evidence at log-hyperparameters ``phi`` (optionally with gradient)."""
        X = self.X_train_ if X is None else np.asarray(X, dtype=float)
        y = self.y_train_ if y is None else np.asarray(y, dtype=float)
        phi = np.asarray(phi, dtype=float)
        n, d = X.shape
        ls, sf2, sn2 = self._unpack(phi, d)
        K, grads = _kernel_and_grads(self.kernel, X, ls, sf2, eval_gradient)
        L, jit = robust_cholesky(K + sn2 * np.eye(n), sf2, self.max_jitter)
        alpha = cho_solve((L, True), y)
        lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
        if not eval_gradient:
            return float(lml)
        if self.fixed_noise is None:
            grads = grads + [sn2 * np.eye(n)]
        Kinv = cho_solve((L, True), np.eye(n))
        W = np.outer(alpha, alpha) - Kinv
        g = np.array([0.5 * np.sum(W * dK) for dK in grads])
        return float(lml), g

    def _lml_from_sq(self, phi: np.ndarray, D2: np.ndarray, y: np.ndarray) -> float:
        # log evidence from precomputed squared coordinate differences (n, n, d)
        n, d = len(y), D2.shape[-1]
        ls, sf2, sn2 = self._unpack(phi, d)
        r2 = D2 @ (1.0 / ls ** 2)
        if self.kernel == "matern52":
            r = np.sqrt(r2)
            K = sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
        else:
            K = sf2 * np.exp(-0.5 * r2)
        K[np.diag_indices(n)] += sn2
        L, _ = robust_cholesky(K, sf2, self.max_jitter)
        a = solve_triangular(L, y, lower=True)
        return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi))

    def _log_posterior(self, phi, lo, hi, d, D2=None) -> float:
        if np.any(phi < lo) or np.any(phi > hi):
            return -np.inf
        try:
            if D2 is None:
                lml = self.log_marginal_likelihood(phi)
            else:
                lml = self._lml_from_sq(phi, D2, self.y_train_)
            return lml + self._log_prior(phi, d)
        except SingularKernel:
            return -np.inf

    def _sample_hyperparameters(self, rng, init=None, n_burnin=None) -> np.ndarray:
        X = self.X_train_
        d = X.shape[1]
        lo, hi = self._log_bounds(d)
        if init is None:
            init = [_PRIOR_LS[0]] * d + [_PRIOR_SF2[0]]
            if self.fixed_noise is None:
                init.append(_PRIOR_SN2[0])
        x = np.clip(np.asarray(init, dtype=float), lo, hi)
        D2 = (X[:, None, :] - X[None, :, :]) ** 2

        def logp(p):
            return self._log_posterior(p, lo, hi, d, D2)

        lp = logp(x)
        if not np.isfinite(lp):
            raise SingularKernel("initial hyperparameters give a singular kernel")
        burn = self.n_burnin if n_burnin is None else n_burnin
        samples = []
        for sweep in range(burn + self.n_hyper_samples):
            for i in range(len(x)):
                x, lp = _slice_step(logp, x, lp, i, rng)
            if sweep >= burn:
                samples.append(x.copy())
        return np.array(samples)

    # -- factorization ---------------------------------------------------------

    def _factorize(self):
        X, y = self.X_train_, self.y_train_
        n, d = X.shape
        m = len(self.log_hyper_samples_)
        self.lengthscales_ = np.empty((m, d))
        self.signal_variances_ = np.empty(m)
        self.noise_variances_ = np.empty(m)
        self.L_ = np.empty((m, n, n))
        self.Linv_ = np.empty((m, n, n))
        self.alpha_ = np.empty((m, n))
        jitters = []
        for i, phi in enumerate(self.log_hyper_samples_):
            ls, sf2, sn2 = self._unpack(phi, d)
            K = kernel_matrix(self.kernel, X, X, ls[None], np.array([sf2]))[0]
            L, jit = robust_cholesky(K + sn2 * np.eye(n), sf2, self.max_jitter)
            self.lengthscales_[i], self.signal_variances_[i] = ls, sf2
            self.noise_variances_[i] = sn2 + jit * sf2
            self.L_[i] = L
            self.Linv_[i] = solve_triangular(L, np.eye(n), lower=True)
            self.alpha_[i] = cho_solve((L, True), y)
            jitters.append(jit)
        self.jitter_ = max(jitters)

    def _extend_factorization(self, x_new: np.ndarray, y_new: float):
        """Append one observation to each sample's Cholesky factor."""
        X_old = self.X_train_[:-1]
        n = len(self.X_train_)
        m = len(self.log_hyper_samples_)
        L_new = np.zeros((m, n, n))
        Linv_new = np.zeros((m, n, n))
        alpha = np.empty((m, n))
        for i in range(m):
            ls, sf2 = self.lengthscales_[i], self.signal_variances_[i]
            kx = kernel_matrix(self.kernel, X_old, x_new[None], ls[None], np.array([sf2]))[0, :, 0]
            l_vec = self.Linv_[i] @ kx
            s2 = sf2 + self.noise_variances_[i] - l_vec @ l_vec
            if s2 <= 1e-12 * sf2:
                raise SingularKernel("rank-one extension lost positive definiteness")
            s = np.sqrt(s2)
            L_new[i, :-1, :-1] = self.L_[i]
            L_new[i, -1, :-1] = l_vec
            L_new[i, -1, -1] = s
            Linv_new[i, :-1, :-1] = self.Linv_[i]
            Linv_new[i, -1, :-1] = -(l_vec @ self.Linv_[i]) / s
            Linv_new[i, -1, -1] = 1.0 / s
            alpha[i] = cho_solve((L_new[i], True), self.y_train_)
        self.L_, self.Linv_, self.alpha_ = L_new, Linv_new, alpha

    # -- estimator API -------------------------------------------------------

    def fit(self, X, y, init=None):
        """Sample hyperparameters given ``(X, y)`` and factorize each sample.

        ``init`` optionally warm-starts the slice sampler at a log-hyperparameter
        vector (the burn-in then shortens to ``n_warm_burnin``).
        """
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=1)
        self.X_train_, self.y_train_ = X, y.astype(float)
        self.n_features_in_ = X.shape[1]
        self._rng = _as_generator(self.random_state)
        if self.hyperparameters is not None:
            ls, sf2, sn2 = self.hyperparameters
            ls = np.broadcast_to(np.asarray(ls, dtype=float), (X.shape[1],))
            phi = list(np.log(ls)) + [np.log(sf2)]
            if self.fixed_noise is None:
                phi.append(np.log(max(sn2, self.noise_lower)))
            self.log_hyper_samples_ = np.array([phi])
        else:
            burn = None if init is None else self.n_warm_burnin
            self.log_hyper_samples_ = self._sample_hyperparameters(self._rng, init, burn)
        self.n_updates_ = 0
        self._factorize()
        return self

    def update(self, x_new, y_new):
        """Return a new model conditioned on one extra observation."""
        check_is_fitted(self, "X_train_")
        x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
        new = copy.copy(self)
        new.X_train_ = np.vstack([self.X_train_, x_new])
        new.y_train_ = np.append(self.y_train_, float(y_new))
        new.n_updates_ = self.n_updates_ + 1
        if self.hyperparameters is None and new.n_updates_ % self.refit_every == 0:
            new.log_hyper_samples_ = new._sample_hyperparameters(
                new._rng, self.log_hyper_samples_[-1], self.n_warm_burnin)
            new._factorize()
        else:
            try:
                new._extend_factorization(x_new[0], float(y_new))
            except SingularKernel:
                new._factorize()
        return new

    def predict_mixture(self, X) -> PredictiveMixture:
        check_is_fitted(self, "X_train_")
        return self._predict_unchecked(check_array(X))

    def _predict_unchecked(self, X: np.ndarray) -> PredictiveMixture:
        # hot path for the acquisition optimizer: no input validation
        ls = self.lengthscales_[:, None, :]
        D = (X[None, :, None, :] - self.X_train_[None, None, :, :]) / ls[:, :, None, :]
        r2 = np.einsum("mpnd,mpnd->mpn", D, D)
        if self.kernel == "matern52":
            r = np.sqrt(r2)
            k = (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
        else:
            k = np.exp(-0.5 * r2)
        Ks = self.signal_variances_[:, None, None] * k
        means = np.matmul(Ks, self.alpha_[:, :, None])[..., 0]
        V = np.matmul(self.Linv_, Ks.transpose(0, 2, 1))
        var = self.signal_variances_[:, None] - np.einsum("mnp,mnp->mp", V, V)
        return PredictiveMixture(means, np.maximum(var, 0.0))

    def point_predictor(self):
        """Fast ``u -> (means, variances)`` for one unvalidated point, each ``(m,)``."""
        check_is_fitted(self, "X_train_")
        inv_ls = 1.0 / self.lengthscales_
        Xs = self.X_train_[None, :, :] * inv_ls[:, None, :]
        sf2, alpha, Linv = self.signal_variances_, self.alpha_, self.Linv_
        matern = self.kernel == "matern52"

        def f(u):
            D = Xs - (u * inv_ls)[:, None, :]
            r2 = np.einsum("mnd,mnd->mn", D, D)
            if matern:
                r = np.sqrt(r2)
                k = (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
            else:
                k = np.exp(-0.5 * r2)
            k *= sf2[:, None]
            v = np.matmul(Linv, k[:, :, None])[..., 0]
            return np.einsum("mn,mn->m", k, alpha), np.maximum(sf2 - np.einsum("mn,mn->m", v, v), 0.0)

        return f

    def predict(self, X, return_std=False):
        mix = self.predict_mixture(X)
        mean = mix.means.mean(axis=0)
        if not return_std:
            return mean
        second = np.mean(mix.variances + mix.means ** 2, axis=0)
        return mean, np.sqrt(np.maximum(second - mean ** 2, 0.0))
