"""Simple co-kriging and drop-one cross-validation scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .asymmetry import AsymmetricCovariance, build_block_cov
from .covariance import radial_eval_many
from .data import ObservationSet
from .geometry import SpherePoint, geodesic_distance
from .simulate import robust_cholesky

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictionResult:
    mean: float
    variance: float
    target: tuple


@dataclass
class CvScores:
    """Drop-one scores pooled over all held-out observations and per variable."""

    mspe: float
    lscore: float
    n: int
    per_variable: dict = field(default_factory=dict)
    clamped: int = 0
    jitter: float = 0.0

    def to_dict(self) -> dict:
        return {"mspe": self.mspe, "lscore": self.lscore, "n": self.n,
                "per_variable": {str(k): v for k, v in self.per_variable.items()},
                "clamped": self.clamped, "jitter": self.jitter}


def target_covariances(model: AsymmetricCovariance, data: ObservationSet, site, var: int) -> np.ndarray:
    """``cov(Z_var(site), Z_{vars[r]}(sites[r]))`` for every observation ``r``."""
    x0 = site.coords if isinstance(site, SpherePoint) else np.asarray(site, dtype=float)
    x0 = x0 / np.linalg.norm(x0)
    t0 = model.rotations[var - 1] @ x0
    xr = model.rotate(data.sites, data.vars - 1)
    theta = geodesic_distance(xr, t0[None, :])
    return radial_eval_many(model.base, np.full(len(data), var - 1), data.vars - 1, theta)


def cokrige(model: AsymmetricCovariance, data: ObservationSet, target_site, target_var: int,
            jitter: float = 0.0) -> PredictionResult:
    """Zero-mean co-kriging predictor and its variance at one (site, variable)."""
    if len(data) == 0:
        raise ValueError("no observations to condition on")
    sigma = build_block_cov(model, data.sites, data.vars)
    chol, _ = robust_cholesky(sigma, jitter)
    k = target_covariances(model, data, target_site, target_var)
    mean = float(k @ cho_solve((chol, True), data.values))
    prior = float(model.base.sigma2[target_var - 1])
    var = prior - float(k @ cho_solve((chol, True), k))
    site = tuple(np.asarray(target_site.coords if isinstance(target_site, SpherePoint) else target_site,
                            dtype=float).tolist())
    return PredictionResult(mean, max(var, 0.0), (site, int(target_var)))


def drop_one_predictions(model: AsymmetricCovariance, data: ObservationSet, jitter: float = 0.0):
    """Held-out means and variances for every observation.

    Uses the identity that removing observation ``k`` gives residual
    ``(Q z)_k / Q_kk`` and variance ``1 / Q_kk`` with ``Q`` the inverse
    covariance of all observations.
    """
    if len(data) < 2:
        raise ValueError("drop-one needs at least two observations")
    sigma = build_block_cov(model, data.sites, data.vars)
    chol, applied = robust_cholesky(sigma, jitter)
    q = cho_solve((chol, True), np.eye(len(data)))
    qdiag = np.diag(q)
    resid = (q @ data.values) / qdiag
    mean = data.values - resid
    var = 1.0 / qdiag
    return mean, var, applied


def scores_from_predictions(data: ObservationSet, mean, var) -> CvScores:
    err = data.values - np.asarray(mean)
    var = np.asarray(var, dtype=float)
    clamped = int(np.sum(var <= VARIANCE_FLOOR))
    v = np.maximum(var, VARIANCE_FLOOR)
    ls = 0.5 * np.log(2 * np.pi * v) + err ** 2 / (2 * v)
    per = {}
    for label in np.unique(data.vars):
        m = data.vars == label
        per[int(label)] = {"mspe": float(np.mean(err[m] ** 2)), "lscore": float(np.mean(ls[m])),
                           "n": int(m.sum())}
    return CvScores(float(np.mean(err ** 2)), float(np.mean(ls)), int(err.size), per, clamped)


def drop_one_cv(model: AsymmetricCovariance, data: ObservationSet, jitter: float = 0.0) -> CvScores:
    """MSPE and log-score (mean Gaussian negative log predictive density)."""
    mean, var, applied = drop_one_predictions(model, data, jitter)
    scores = scores_from_predictions(data, mean, var)
    scores.jitter = applied
    return scores


def drop_one_table(model: AsymmetricCovariance, data: ObservationSet, jitter: float = 0.0) -> list:
    """Per-point rows ``(index, var, observed, predicted, variance, error)``."""
    mean, var, _ = drop_one_predictions(model, data, jitter)
    return [(k, int(v), float(z), float(m), float(s), float(z - m))
            for k, (v, z, m, s) in enumerate(zip(data.vars, data.values, mean, var))]
