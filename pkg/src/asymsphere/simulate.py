"""Exact simulation of Gaussian fields by Cholesky factorization.

Each replicate draws its standard normals from a Philox (counter-based)
generator keyed by ``(seed, replicate)``, so any replicate can be regenerated
on its own and in any order.
"""
from __future__ import annotations

import logging

import numpy as np

from .asymmetry import AsymmetricCovariance, build_block_cov
from .data import ObservationSet
from .geometry import as_points

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class FactorizationError(ArithmeticError):
    pass


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent, individually reproducible stream for one replicate."""
    ss = np.random.SeedSequence([int(seed), int(replicate)])
    return np.random.Generator(np.random.Philox(ss))


def robust_cholesky(cov: np.ndarray, jitter: float = 0.0):
    """Lower Cholesky factor of ``cov + j I``, escalating ``j`` on failure.

    Tries ``jitter`` first, then each ladder step ``f * trace / n`` that
    exceeds it. Returns ``(L, applied_jitter)``.
    """
    n = cov.shape[0]
    scale = np.trace(cov) / n if n else 1.0
    attempts = [jitter] + [f * scale for f in JITTER_LADDER if f * scale > jitter]
    eye = np.eye(n)
    for j in attempts:
        try:
            return np.linalg.cholesky(cov + j * eye), float(j)
        except np.linalg.LinAlgError:
            logger.debug("cholesky failed with jitter %.3g", j)
    raise FactorizationError(f"covariance not factorizable; last jitter tried {attempts[-1]:.3g}")


def full_layout(sites, p: int):
    """All ``(site, variable)`` combinations, variable-major."""
    x = as_points(sites)
    return np.tile(x, (p, 1)), np.repeat(np.arange(1, p + 1), x.shape[0])


class FieldSampler:
    """Factor the covariance of one ``(model, sites)`` design once, sample many times."""

    def __init__(self, model: AsymmetricCovariance, sites, jitter: float = 0.0):
        self.model = model
        self.sites, self.vars = full_layout(sites, model.p)
        cov = build_block_cov(model, self.sites, self.vars)
        self.chol, self.jitter = robust_cholesky(cov, jitter)

    def draw(self, seed: int, replicate: int = 0) -> ObservationSet:
        u = replicate_rng(seed, replicate).standard_normal(self.chol.shape[0])
        meta = {"seed": int(seed), "replicate": int(replicate), "jitter": self.jitter}
        return ObservationSet(self.sites, self.vars, self.chol @ u, meta)


def simulate_field(model: AsymmetricCovariance, sites, seed: int, jitter: float = 0.0,
                   replicate: int = 0) -> ObservationSet:
    """One realization at every site for every variable."""
    return FieldSampler(model, sites, jitter).draw(seed, replicate)


def simulate_replicates(model: AsymmetricCovariance, sites, n: int, seed: int,
                        jitter: float = 0.0) -> list:
    sampler = FieldSampler(model, sites, jitter)
    return [sampler.draw(seed, r) for r in range(n)]


def empirical_cross_cov(replicates, i: int, j: int, x: int, y: int) -> float:
    """Mean of ``Z_i(site x) * Z_j(site y)`` over replicates (zero-mean estimator).

    ``x`` and ``y`` are site ids as assigned by :class:`ObservationSet`.
    """
    if len(replicates) < 2:
        raise ValueError("need at least two replicates")
    first = replicates[0]
    for r in replicates[1:]:
        if not first.same_layout(r):
            raise ValueError("replicates do not share a site/variable layout")
    a = first.index_of(i, x)
    b = first.index_of(j, y)
    vals = np.stack([r.values for r in replicates])
    return float(np.mean(vals[:, a] * vals[:, b]))
