"""Dynamic orientation determination.

A two-component Gaussian mixture is fitted to the pooled, normalized
endpoints of every training pair of one measurement. The vector between the
two mixture centroids is the measurement orientation. During training each
(augmented) pair is relabelled by the order of its endpoints' projections on
that vector, so landmark classes stay geometrically consistent under any
rotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pairs, check_points, check_random_state
from .core import LandmarkPair, MeasurementKind, NormalizedPoint
from .exceptions import ConvergenceError, DegenerateOrientationError, DomainError

MIN_SEPARATION = 1e-3  # normalized units
ORDERINGS = ("abs", "signed")
ORIGINS = ("corner", "midpoint")


@dataclass(frozen=True)
class GmmFitConfig:
    max_iterations: int = 500
    log_likelihood_tolerance: float = 1e-10
    covariance_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not (self.log_likelihood_tolerance > 0 and self.covariance_floor > 0):
            raise DomainError("tolerances must be positive")


@dataclass
class GmmResult:
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    log_likelihoods: list
    converged: bool

    @property
    def n_iter(self):
        return len(self.log_likelihoods)


def _log_gaussian(X, mean, cov):
    # log N(x | mean, cov) for 2D points, via Cholesky
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (X - mean).T)
    maha = np.sum(z * z, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (maha + log_det + X.shape[1] * np.log(2 * np.pi))


def _floor_eigenvalues(cov, floor):
    # Closest covariance (in the M-step objective) whose eigenvalues are >= floor.
    w, V = np.linalg.eigh(cov)
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def _kmeans_pp_seeds(X, rng):
    first = X[rng.integers(len(X))]
    d2 = np.sum((X - first) ** 2, axis=1)
    total = d2.sum()
    if total <= 0:
        raise DegenerateOrientationError("all landmark points coincide")
    second = X[rng.choice(len(X), p=d2 / total)]
    return np.stack([first, second])


def _m_step(X, resp, floor):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((2, 2, 2))
    for k in range(2):
        diff = X - means[k]
        S = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k] = _floor_eigenvalues(S, floor)
    return means, covs, weights


def _e_step(X, means, covs, weights):
    log_prob = np.column_stack(
        [_log_gaussian(X, means[k], covs[k]) + np.log(weights[k]) for k in range(2)]
    )
    log_norm = logsumexp(log_prob, axis=1)
    return np.exp(log_prob - log_norm[:, None]), float(np.mean(log_norm))


def fit_gmm(X, config: GmmFitConfig = GmmFitConfig()) -> GmmResult:
    """Fit a two-component full-covariance Gaussian mixture with EM.

    Seeding is 2-means++ from ``config.seed``; the first M-step uses the hard
    nearest-seed assignment. The returned ``log_likelihoods`` holds the mean
    per-point log-likelihood after every E-step and never decreases.

    Raises
    ------
    DegenerateOrientationError
        If every point coincides.
    ConvergenceError
        If the log-likelihood change is still above tolerance after
        ``config.max_iterations`` iterations. ``err.last`` holds the iterate.
    """
    X = check_points(X)
    if len(X) < 2:
        raise DegenerateOrientationError("need at least two points")
    rng = check_random_state(config.seed)
    seeds = _kmeans_pp_seeds(X, rng)
    d = np.sum((X[:, None, :] - seeds[None]) ** 2, axis=2)
    resp = np.zeros((len(X), 2))
    resp[np.arange(len(X)), np.argmin(d, axis=1)] = 1.0

    history = []
    for _ in range(config.max_iterations):
        means, covs, weights = _m_step(X, resp, config.covariance_floor)
        resp, ll = _e_step(X, means, covs, weights)
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < config.log_likelihood_tolerance:
            return GmmResult(means, covs, weights, history, True)
    last = GmmResult(means, covs, weights, history, False)
    raise ConvergenceError(
        f"EM did not converge in {config.max_iterations} iterations", last=last
    )


@dataclass(frozen=True, eq=False)
class OrientationModel:
    """Learned orientation of one measurement, in normalized image units.

    ``direction`` is ``centroid_2 - centroid_1`` with its first nonzero
    component positive.
    """

    centroid_1: NormalizedPoint
    centroid_2: NormalizedPoint
    covariances: np.ndarray
    weights: np.ndarray
    measurement: Optional[MeasurementKind] = None
    seed: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.measurement is not None:
            object.__setattr__(self, "measurement", MeasurementKind.parse(self.measurement))
        if np.linalg.norm(self.direction) <= 0:
            raise DomainError("orientation model has zero-length direction")

    @property
    def direction(self) -> np.ndarray:
        return self.centroid_2.as_array() - self.centroid_1.as_array()

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.centroid_1.as_array() + self.centroid_2.as_array())

    @property
    def angle_deg(self) -> float:
        d = self.direction
        return float(np.degrees(np.arctan2(d[1], d[0])))

    @classmethod
    def fixed(cls, direction, measurement=None) -> "OrientationModel":
        """A hand-set orientation, e.g. ``(1, 0)`` for horizontal ordering."""
        d = np.asarray(direction, dtype=float)
        d = 0.25 * d / np.linalg.norm(d)
        c = np.array([0.5, 0.5])
        return cls(
            NormalizedPoint(*(c - d)),
            NormalizedPoint(*(c + d)),
            covariances=np.stack([np.eye(2), np.eye(2)]) * 1e-2,
            weights=np.array([0.5, 0.5]),
            measurement=measurement,
            metadata={"fixed": True},
        )

    def to_dict(self) -> dict:
        return {
            "measurement": None if self.measurement is None else self.measurement.value,
            "centroid_1": [self.centroid_1.u, self.centroid_1.v],
            "centroid_2": [self.centroid_2.u, self.centroid_2.v],
            "direction": self.direction.tolist(),
            "covariances": self.covariances.tolist(),
            "weights": self.weights.tolist(),
            "seed": self.seed,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrientationModel":
        return cls(
            NormalizedPoint(*d["centroid_1"]),
            NormalizedPoint(*d["centroid_2"]),
            covariances=np.array(d["covariances"]),
            weights=np.array(d["weights"]),
            measurement=d.get("measurement"),
            seed=d.get("seed"),
            metadata=d.get("metadata", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "OrientationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def canonical_direction(d) -> np.ndarray:
    """Flip ``d`` so its first nonzero component is positive."""
    d = np.asarray(d, dtype=float)
    nz = np.flatnonzero(d)
    if len(nz) and d[nz[0]] < 0:
        return -d
    return d


def _model_from_gmm(res: GmmResult, measurement, seed, n_pairs) -> OrientationModel:
    c1, c2 = res.means
    d = c2 - c1
    if np.linalg.norm(d) <= MIN_SEPARATION:
        raise DegenerateOrientationError(
            f"centroid separation {np.linalg.norm(d):.3g} <= {MIN_SEPARATION}"
        )
    order = [0, 1]
    if not np.array_equal(canonical_direction(d), d):
        order = [1, 0]
    means = np.clip(res.means[order], 0.0, 1.0)
    return OrientationModel(
        NormalizedPoint(*means[0]),
        NormalizedPoint(*means[1]),
        covariances=res.covariances[order],
        weights=res.weights[order],
        measurement=measurement,
        seed=seed,
        metadata={
            "n_pairs": int(n_pairs),
            "n_iter": res.n_iter,
            "log_likelihood": res.log_likelihoods[-1],
            "converged": res.converged,
        },
    )


def fit_orientation_array(X, config: GmmFitConfig = GmmFitConfig(), measurement=None):
    """Fit an orientation model to normalized pairs of shape ``(n, 2, 2)``."""
    X = check_pairs(X)
    if len(X) < 2:
        raise DegenerateOrientationError("need at least two landmark pairs")
    if np.any(X < 0) or np.any(X > 1):
        raise DomainError("pairs must be normalized to [0, 1]^2 before fitting")
    points = X.reshape(-1, 2)
    if np.all(points == points[0]):
        raise DegenerateOrientationError("all landmark points coincide")
    res = fit_gmm(points, config)
    return _model_from_gmm(res, measurement, config.seed, len(X))


def fit_orientation(
    pairs: Sequence[LandmarkPair],
    sizes,
    config: GmmFitConfig = GmmFitConfig(),
) -> OrientationModel:
    """Learn the orientation of one measurement from training pairs.

    Parameters
    ----------
    pairs : sequence of LandmarkPair
        Training annotations, all of the same measurement kind.
    sizes : sequence of (width, height)
        Image size for each pair, used for normalization. A single
        ``(width, height)`` tuple applies to all pairs.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DegenerateOrientationError("need at least two landmark pairs")
    kinds = {p.measurement for p in pairs}
    if len(kinds) != 1:
        raise DomainError(f"pairs mix measurement kinds: {sorted(k.value for k in kinds)}")
    sizes = np.asarray(sizes, dtype=float)
    if sizes.ndim == 1:
        sizes = np.broadcast_to(sizes, (len(pairs), 2))
    X = np.stack([p.as_array() for p in pairs]) / sizes[:, None, :]
    return fit_orientation_array(X, config, measurement=kinds.pop())


def projection(points, direction, origin=(0.0, 0.0)) -> np.ndarray:
    """Scalar projections ``((p - origin) . d) / |d|`` for rows of ``points``."""
    d = np.asarray(direction, dtype=float)
    norm = np.hypot(d[0], d[1])
    if not norm > 0:
        raise DomainError("zero-length direction")
    p = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    return (p @ d) / norm


def _origin_for(model: OrientationModel, origin: str):
    if origin not in ORIGINS:
        raise DomainError(f"origin must be one of {ORIGINS}, got {origin!r}")
    return (0.0, 0.0) if origin == "corner" else model.midpoint


def project(p: NormalizedPoint, model: OrientationModel, origin: str = "corner") -> float:
    return float(projection(p.as_array()[None], model.direction, _origin_for(model, origin))[0])


def order_pairs(X, model: OrientationModel, ordering="abs", origin="corner", scale=None):
    """Reorder every pair in ``X`` so class 1 has the smaller sort key.

    ``X`` has shape ``(n, 2, 2)`` in pixels (pass ``scale=(width, height)``)
    or in normalized units. With ``ordering="abs"`` the key is ``|r|``,
    otherwise the signed projection ``r``. Equal keys fall back to ``(x, y)``.
    """
    if ordering not in ORDERINGS:
        raise DomainError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    X = check_pairs(X)
    norm = X if scale is None else X / np.asarray(scale, dtype=float)
    r = projection(norm.reshape(-1, 2), model.direction, _origin_for(model, origin))
    r = r.reshape(-1, 2)
    key = np.abs(r) if ordering == "abs" else r
    swap = key[:, 0] > key[:, 1]
    tie = key[:, 0] == key[:, 1]
    lex = (X[:, 0, 0] > X[:, 1, 0]) | ((X[:, 0, 0] == X[:, 1, 0]) & (X[:, 0, 1] > X[:, 1, 1]))
    swap = swap | (tie & lex)
    out = X.copy()
    out[swap] = X[swap][:, ::-1]
    return out


def reassign(
    pair: LandmarkPair,
    model: OrientationModel,
    width: Optional[float] = None,
    height: Optional[float] = None,
    ordering: str = "abs",
    origin: str = "corner",
) -> LandmarkPair:
    """Relabel a pair so the first landmark has the smaller projection key.

    Pixel pairs need ``width`` and ``height``; without them the pair is taken
    to be in normalized units already. Only labels move: the returned pair
    holds the same two points.
    """
    scale = None if width is None else (width, height)
    out = order_pairs(pair.as_array()[None], model, ordering, origin, scale)[0]
    if np.array_equal(out, pair.as_array()):
        return pair
    return pair.swapped()


class OrientationEstimator(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns the orientation, ``transform`` reorders.

    ``X`` is an array of normalized landmark pairs, shape ``(n, 2, 2)``.
    """

    def __init__(
        self,
        max_iterations=500,
        tol=1e-10,
        covariance_floor=1e-6,
        ordering="abs",
        origin="corner",
        random_state=0,
    ):
        self.max_iterations = max_iterations
        self.tol = tol
        self.covariance_floor = covariance_floor
        self.ordering = ordering
        self.origin = origin
        self.random_state = random_state

    def fit(self, X, y=None):
        config = GmmFitConfig(
            max_iterations=self.max_iterations,
            log_likelihood_tolerance=self.tol,
            covariance_floor=self.covariance_floor,
            seed=self.random_state,
        )
        self.model_ = fit_orientation_array(X, config)
        self.direction_ = self.model_.direction
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return order_pairs(X, self.model_, self.ordering, self.origin)

    def project(self, points):
        check_is_fitted(self, "model_")
        origin = _origin_for(self.model_, self.origin)
        return projection(check_points(points), self.model_.direction, origin)
