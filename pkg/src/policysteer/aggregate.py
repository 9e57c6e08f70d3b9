"""Dynamic time warping and time-series k-means over action plans.

The DTW recursion runs in a small compiled kernel. Cluster centers are updated by averaging member
points along their DTW alignment paths onto the center's time axis; an update
is kept only when it does not raise the cluster's total cost, which keeps the
inertia nonincreasing from one iteration to the next.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_is_fitted, check_positive_int, check_random_state
from .exceptions import ConfigurationError
from .policy import ActionPlan

logger = logging.getLogger(__name__)


def _as_sequence(x):
    arr = np.asarray(x.actions if isinstance(x, ActionPlan) else x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or len(arr) == 0:
        raise ConfigurationError(f"expected a nonempty (T, d) sequence, got shape {arr.shape}")
    return arr


def _as_batch(plans):
    if isinstance(plans, np.ndarray) and plans.ndim == 3:
        return np.asarray(plans, dtype=np.float64)
    seqs = [_as_sequence(p) for p in plans]
    if not seqs:
        raise ConfigurationError("no plans given")
    if len({s.shape for s in seqs}) != 1:
        raise ConfigurationError("all plans must share the same shape")
    return np.stack(seqs)


def _check_band(band):
    if band is None:
        return None
    if isinstance(band, bool) or not isinstance(band, (int, np.integer)) or band < 1:
        raise ConfigurationError(f"band must be an integer >= 1 or None, got {band!r}")
    return int(band)


def _band_width(n, m, band):
    return -1 if band is None else max(band, abs(n - m))


@njit(cache=True)
def _dtw_table(a, b, width):
    n, m, d = a.shape[0], b.shape[0], a.shape[1]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if width >= 0 and abs(i - j) > width:
                continue
            acc = 0.0
            for k in range(d):
                diff = a[i - 1, k] - b[j - 1, k]
                acc += diff * diff
            best = min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            D[i, j] = math.sqrt(acc) + best
    return D


@njit(cache=True)
def _pairwise(X, Y, width):
    out = np.empty((X.shape[0], Y.shape[0]))
    for p in range(X.shape[0]):
        for q in range(Y.shape[0]):
            out[p, q] = _dtw_table(X[p], Y[q], width)[-1, -1]
    return out


@njit(cache=True)
def _backtrack(D):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = np.empty((i + j, 2), dtype=np.int64)
    k = 0
    path[k, 0], path[k, 1] = i - 1, j - 1
    while i > 1 or j > 1:
        diag, up, left = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
        if i == 1:
            j -= 1
        elif j == 1:
            i -= 1
        elif diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
        k += 1
        path[k, 0], path[k, 1] = i - 1, j - 1
    return path[: k + 1][::-1]


def dtw_table(a, b, band=None):
    """Accumulated-cost table of shape (n + 1, m + 1); ``D[0, 0] = 0``, borders infinite.

    Local cost is the Euclidean distance between time steps.
    """
    a, b = _as_sequence(a), _as_sequence(b)
    band = _check_band(band)
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError("sequences must have the same feature dimension")
    return _dtw_table(np.ascontiguousarray(a), np.ascontiguousarray(b), _band_width(len(a), len(b), band))


def dtw_distance(a, b, band=None):
    """DTW alignment cost between two sequences (Euclidean local cost, no normalization)."""
    return float(dtw_table(a, b, band)[-1, -1])


def pairwise_dtw(X, Y, band=None):
    """(len(X), len(Y)) matrix of DTW costs."""
    X, Y = _as_batch(X), _as_batch(Y)
    band = _check_band(band)
    width = _band_width(X.shape[1], Y.shape[1], band)
    return _pairwise(np.ascontiguousarray(X), np.ascontiguousarray(Y), width)


def alignment_path(a, b, band=None):
    """Optimal warping path as (i, j) index pairs from start to end.

    Ties prefer the diagonal move, then the step in ``i``.
    """
    return _backtrack(dtw_table(a, b, band))


def _dba_update(center, members, band):
    """Average members onto the center's time axis along their DTW paths."""
    total = np.zeros_like(center)
    count = np.zeros(len(center))
    for member in members:
        path = alignment_path(center, member, band)
        np.add.at(total, path[:, 0], member[path[:, 1]])
        np.add.at(count, path[:, 0], 1.0)
    return total / count[:, None]


def _kmeans_pp(X, k, rng, band):
    n = len(X)
    chosen = [int(rng.integers(n))]
    closest = pairwise_dtw(X, X[chosen], band)[:, 0]
    while len(chosen) < k:
        weights = closest**2
        weights[chosen] = 0.0
        if weights.sum() <= 0:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        else:
            nxt = int(rng.choice(n, p=weights / weights.sum()))
        chosen.append(nxt)
        closest = np.minimum(closest, pairwise_dtw(X, X[[nxt]], band)[:, 0])
    return X[chosen].copy()


@dataclass
class PlanClusterings:
    assignments: list
    centers: list
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=len(self.centers))


class TimeSeriesKMeans(ClusterMixin, BaseEstimator):
    """K-means over equal-length sequences with DTW assignment.

    Parameters
    ----------
    n_clusters : int
    max_iter : int
    band : int, optional
        Sakoe-Chiba band half-width; ``None`` means exact DTW.
    random_state : int
    """

    def __init__(self, n_clusters=6, max_iter=20, band=None, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.band = band
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _as_batch(X)
        k = check_positive_int(self.n_clusters, "n_clusters")
        max_iter = check_positive_int(self.max_iter, "max_iter", minimum=0)
        band = _check_band(self.band)
        if len(X) < k:
            raise ConfigurationError(f"need at least {k} plans to form {k} clusters, got {len(X)}")
        rng = check_random_state(self.random_state)

        centers = _kmeans_pp(X, k, rng, band)
        dist = pairwise_dtw(X, centers, band)
        labels, centers, dist = self._assign(X, centers, dist, band)
        history = [float(dist[np.arange(len(X)), labels].sum())]

        n_iter = 0
        for n_iter in range(1, max_iter + 1):
            new_centers = centers.copy()
            for c in range(k):
                members = X[labels == c]
                if len(members) == 0:
                    continue
                candidate = _dba_update(centers[c], members, band)
                new_cost = pairwise_dtw(members, candidate[None], band).sum()
                if new_cost <= dist[labels == c, c].sum():
                    new_centers[c] = candidate
            dist = pairwise_dtw(X, new_centers, band)
            new_labels, new_centers, dist = self._assign(X, new_centers, dist, band)
            inertia = float(dist[np.arange(len(X)), new_labels].sum())
            history.append(inertia)
            converged = np.array_equal(new_labels, labels) and np.array_equal(new_centers, centers)
            labels, centers = new_labels, new_centers
            if converged:
                break

        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        logger.info(
            "dtw k-means: k=%d n=%d iters=%d inertia=%.4f sizes=%s",
            k, len(X), n_iter, self.inertia_, np.bincount(labels, minlength=k).tolist(),
        )
        return self

    @staticmethod
    def _assign(X, centers, dist, band):
        """Nearest-center labels (lowest index wins ties); empty clusters are re-seeded."""
        k = len(centers)
        labels = np.argmin(dist, axis=1)
        forced = {}
        for _ in range(k):
            sizes = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(sizes == 0)
            if len(empty) == 0:
                break
            own = dist[np.arange(len(X)), labels]
            donors = sizes[labels] > 1
            own = np.where(donors, own, -np.inf)
            far = int(np.argmax(own))
            centers = centers.copy()
            centers[empty[0]] = X[far]
            dist = dist.copy()
            dist[:, empty[0]] = pairwise_dtw(X, X[[far]], band)[:, 0]
            labels = np.argmin(dist, axis=1)
            # a duplicate of ``far`` may sit in a lower-index cluster and win the tie
            forced[far] = empty[0]
            for idx, c in forced.items():
                labels[idx] = c
        return labels, centers, dist

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.argmin(pairwise_dtw(_as_batch(X), self.cluster_centers_, self.band), axis=1)


def cluster_plans(plans, k, max_iter=20, rng_seed=0, band=None):
    """Reduce sampled plans to ``k`` DTW k-means centers."""
    km = TimeSeriesKMeans(n_clusters=k, max_iter=max_iter, band=band, random_state=rng_seed).fit(plans)
    return PlanClusterings(
        assignments=km.labels_.tolist(),
        centers=[ActionPlan(c) for c in km.cluster_centers_],
        inertia=km.inertia_,
        inertia_history=list(km.inertia_history_),
        n_iter=km.n_iter_,
    )


def nms_filter(clusterings, dtw_eps, band=None):
    """Drop centers within ``dtw_eps`` of an already kept (larger) cluster's center.

    Returns the indices of kept centers, largest clusters first.
    """
    sizes = clusterings.sizes
    order = sorted(range(len(clusterings.centers)), key=lambda c: (-sizes[c], c))
    kept = []
    for c in order:
        if all(dtw_distance(clusterings.centers[c], clusterings.centers[q], band) > dtw_eps for q in kept):
            kept.append(c)
    return kept
