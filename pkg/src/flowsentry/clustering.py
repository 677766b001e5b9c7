"""Diagonal Gaussian mixtures fitted by EM, silhouette scoring, and
silhouette-driven choice of the number of clusters."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


class DegenerateDataWarning(UserWarning):
    pass


def canonical_order(X: np.ndarray) -> np.ndarray:
    """Row order that depends only on the set of rows (lexicographic)."""
    if X.shape[0] == 0:
        return np.arange(0)
    return np.lexsort(X.T[::-1])


def kmeans_plusplus(X: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centre uniform, then D^2-weighted draws."""
    n = X.shape[0]
    centers = np.empty((n_clusters, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


class DiagonalGaussianMixture(ClusterMixin, BaseEstimator):
    """Gaussian mixture with diagonal covariances fitted by EM.

    Means start from k-means++ seeds, weights uniform, every variance from
    the global per-dimension variance. EM stops when the relative change of
    the mean log-likelihood falls below ``tol`` or after ``max_iter``
    iterations. Variances are floored at ``var_floor``. With ``n_init > 1``
    EM is restarted from independent seeds and the run with the highest
    final log-likelihood is kept. Rows are put into a
    canonical order before fitting, so the result does not depend on the
    order of the input points.

    Attributes
    ----------
    weights_ : ndarray (K,)
    means_ : ndarray (K, d)
    variances_ : ndarray (K, d)
    log_likelihood_curve_ : list of float
        Mean per-point log-likelihood evaluated at each iteration's
        parameters; non-decreasing up to rounding.
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, n_components=1, tol=1e-6, max_iter=200, var_floor=1e-6, n_init=1, seed=0):
        self.n_components = n_components
        self.n_init = n_init
        self.tol = tol
        self.max_iter = max_iter
        self.var_floor = var_floor
        self.seed = seed

    def _log_prob(self, X):
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights_)
        maha = np.empty((X.shape[0], len(self.weights_)))
        for k in range(len(self.weights_)):
            maha[:, k] = ((X - self.means_[k]) ** 2 / self.variances_[k]).sum(axis=1)
        log_det = np.log(self.variances_).sum(axis=1)
        return log_w - 0.5 * (X.shape[1] * LOG_2PI + log_det + maha)

    def _e_step(self, X):
        lp = self._log_prob(X)
        norm = logsumexp(lp, axis=1)
        return float(norm.mean()), np.exp(lp - norm[:, None])

    def _m_step(self, X, resp):
        nk = resp.sum(axis=0)
        self.weights_ = nk / nk.sum()
        live = nk > 0
        means = (resp.T @ X)[live] / nk[live, None]
        var = np.empty((int(live.sum()), X.shape[1]))
        for j, k in enumerate(np.flatnonzero(live)):
            var[j] = resp[:, k] @ (X - means[j]) ** 2 / nk[k]
        self.means_[live] = means
        self.variances_[live] = np.maximum(var, self.var_floor)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        K = int(self.n_components)
        if K < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if n < K:
            raise ValueError(f"need at least n_components={K} points, got {n}")
        X = X[canonical_order(X)]
        if len(np.unique(X, axis=0)) < K:
            warnings.warn(f"fewer than {K} distinct points; components will coincide", DegenerateDataWarning)
        self.n_features_in_ = d
        best = None
        for seed in np.random.SeedSequence(self.seed).spawn(self.n_init) if self.n_init > 1 else [self.seed]:
            run = self._em(X, np.random.default_rng(seed))
            if best is None or run[-1][-1] > best[-1][-1]:
                best = run
        self.weights_, self.means_, self.variances_, self.converged_, self.log_likelihood_curve_ = best
        self.n_iter_ = len(self.log_likelihood_curve_)
        if np.all(self.variances_ <= self.var_floor):
            warnings.warn("all variances hit the floor; data is degenerate", DegenerateDataWarning)
        return self

    def _em(self, X, rng):
        K = int(self.n_components)
        self.means_ = kmeans_plusplus(X, K, rng)
        self.weights_ = np.full(K, 1.0 / K)
        self.variances_ = np.tile(np.maximum(X.var(axis=0), self.var_floor), (K, 1))
        curve: list[float] = []
        converged = False
        prev = None
        for _ in range(self.max_iter):
            ll, resp = self._e_step(X)
            curve.append(ll)
            if prev is not None and abs(ll - prev) <= self.tol * max(abs(prev), 1e-300):
                converged = True
                break
            self._m_step(X, resp)
            prev = ll
        else:
            curve.append(self._e_step(X)[0])
        return self.weights_, self.means_, self.variances_, converged, curve

    def _check(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.means_.shape[1]:
            raise ValueError(f"expected {self.means_.shape[1]} dimensions, got {X.shape[1]}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        return self._e_step(self._check(X))[1]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)

    def score_samples(self, X) -> np.ndarray:
        return logsumexp(self._log_prob(self._check(X)), axis=1)

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).mean())

    def to_dict(self) -> dict:
        check_is_fitted(self, "means_")
        return {
            "config": self.get_params(),
            "weights": self.weights_.tolist(),
            "means": self.means_.tolist(),
            "variances": self.variances_.tolist(),
            "log_likelihood_curve": list(self.log_likelihood_curve_),
            "converged": bool(self.converged_),
        }

    @classmethod
    def from_dict(cls, d) -> "DiagonalGaussianMixture":
        gmm = cls(**d["config"])
        gmm.weights_ = np.asarray(d["weights"], dtype=np.float64)
        gmm.means_ = np.asarray(d["means"], dtype=np.float64)
        gmm.variances_ = np.asarray(d["variances"], dtype=np.float64)
        gmm.log_likelihood_curve_ = list(d["log_likelihood_curve"])
        gmm.converged_ = d["converged"]
        gmm.n_iter_ = len(gmm.log_likelihood_curve_)
        gmm.n_features_in_ = gmm.means_.shape[1]
        return gmm


def fit_gmm(points, K: int, seed: int = 0, **kwargs) -> DiagonalGaussianMixture:
    return DiagonalGaussianMixture(n_components=K, seed=seed, **kwargs).fit(points)


def predict_cluster(gmm: DiagonalGaussianMixture, point) -> tuple[int, np.ndarray]:
    resp = gmm.predict_proba(np.atleast_2d(np.asarray(point, dtype=np.float64)))[0]
    return int(np.argmax(resp)), resp


def silhouette_samples(X, labels) -> np.ndarray:
    """Per-point silhouette with Euclidean distance; singletons score 0."""
    X = check_array(X, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise ValueError("labels and X differ in length")
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    D = cdist(X, X)
    sizes = np.bincount(inv, minlength=len(uniq))
    # sums[i, c] = total distance from point i to members of cluster c
    sums = np.zeros((len(X), len(uniq)))
    for c in range(len(uniq)):
        sums[:, c] = D[:, inv == c].sum(axis=1)
    own = sizes[inv]
    idx = np.arange(len(X))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[idx, inv] / (own - 1)
        means = sums / sizes
    means[idx, inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (b - a) / denom
    s[(own == 1) | ~np.isfinite(s)] = 0.0
    return s


def silhouette_score(X, labels) -> float:
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise ValueError("empty input")
    return float(silhouette_samples(X, labels).mean())


@dataclass
class ClusterSelection:
    k_candidates: list[int]
    silhouette_by_k: dict[int, float]
    chosen_k: int
    model: DiagonalGaussianMixture = field(repr=False)
    n_points: int = 0
    n_scored: int = 0

    def to_dict(self) -> dict:
        return {
            "k_candidates": list(self.k_candidates),
            "silhouette_by_k": {str(k): v for k, v in sorted(self.silhouette_by_k.items())},
            "chosen_k": self.chosen_k,
            "n_points": self.n_points,
            "n_scored": self.n_scored,
        }


def select_k(points, k_range=range(2, 11), seed: int = 0, subsample_cap: int = 2000, **gmm_kwargs) -> ClusterSelection:
    """Fit one mixture per candidate K and keep the best mean silhouette.

    Silhouettes are computed on at most ``subsample_cap`` points (a seeded
    draw from the canonically ordered data). A fit whose hard assignment
    collapses to a single cluster scores -1. Ties go to the smaller K.
    """
    X = check_array(points, dtype=np.float64)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("empty k range")
    n = len(X)
    if len(ks) > 1 and (ks[0] < 2 or ks[-1] > n - 1):
        raise ValueError(f"k range must lie within [2, {n - 1}]")
    X = X[canonical_order(X)]
    scored = np.arange(n)
    if n > subsample_cap:
        scored = np.sort(np.random.default_rng(seed).choice(n, size=subsample_cap, replace=False))
    scores: dict[int, float] = {}
    models: dict[int, DiagonalGaussianMixture] = {}
    best_k, best = ks[0], -np.inf
    for k in ks:
        gmm = DiagonalGaussianMixture(n_components=k, seed=seed, **gmm_kwargs).fit(X)
        labels = gmm.predict(X[scored])
        score = silhouette_score(X[scored], labels) if len(np.unique(labels)) >= 2 else -1.0
        scores[k], models[k] = score, gmm
        logger.debug("k=%d silhouette=%.4f", k, score)
        if score > best:
            best_k, best = k, score
    return ClusterSelection(ks, scores, best_k, models[best_k], n, len(scored))
