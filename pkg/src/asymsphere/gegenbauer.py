"""Ultraspherical polynomials and numerical Schoenberg coefficients.

A continuous radial matrix function on [0, pi] is a valid covariance on S^d
exactly when its expansion in ultraspherical polynomials of index
``(d - 1) / 2`` has positive semidefinite coefficient matrices. The
coefficients are recovered here by quadrature, which gives a check of the
parametric validity conditions that does not rely on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .covariance import RadialModelSpec, radial_eval_many


class QuadratureError(ValueError):
    pass


def ultraspherical_eval(lam: float, k: int, mu):
    """Ultraspherical polynomial ``P_k^lam(mu)``.

    ``lam = 0`` uses the Chebyshev convention ``P_k^0(cos t) = cos(k t)``;
    ``lam > 0`` uses the three-term recurrence.
    """
    if k < 0:
        raise ValueError("degree must be non-negative")
    mu_arr = np.asarray(mu, dtype=float)
    out = ultraspherical_table(lam, k, mu_arr)[k]
    return float(out) if out.ndim == 0 else out


def ultraspherical_table(lam: float, kmax: int, mu) -> np.ndarray:
    """Array of ``P_k^lam(mu)`` for ``k = 0..kmax``, stacked along axis 0."""
    mu = np.asarray(mu, dtype=float)
    out = np.empty((kmax + 1,) + mu.shape)
    if lam == 0.0:
        t = np.arccos(np.clip(mu, -1.0, 1.0))
        for k in range(kmax + 1):
            out[k] = np.cos(k * t)
        return out
    if lam < 0.0:
        raise ValueError("lambda must be non-negative")
    out[0] = 1.0
    if kmax >= 1:
        out[1] = 2.0 * lam * mu
    for k in range(2, kmax + 1):
        out[k] = (2.0 * mu * (k + lam - 1.0) * out[k - 1] - (k + 2.0 * lam - 2.0) * out[k - 2]) / k
    return out


def composite_gauss_legendre(a: float, b: float, n_quad: int, order: int = 20):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b].

    Uses ``n_quad // order`` equal panels of ``order`` nodes each (a single
    panel when ``n_quad < order``).
    """
    order = min(order, n_quad)
    panels = max(1, n_quad // order)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass
class SchoenbergSequence:
    """Coefficient matrices ``B_0..B_K`` and the truncation residual."""

    matrices: np.ndarray
    residual: float
    lam: float = 0.5
    norms: np.ndarray = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.matrices) - 1

    def reconstruct(self, theta) -> np.ndarray:
        """Truncated series ``sum_k B_k P_k(cos theta)``, shape ``theta.shape + (p, p)``."""
        theta = np.asarray(theta, dtype=float)
        basis = ultraspherical_table(self.lam, self.K, np.cos(theta))
        return np.tensordot(np.moveaxis(basis, 0, -1), self.matrices, axes=([-1], [0]))


RadialFunction = Callable[[np.ndarray], np.ndarray]


def spec_as_function(spec: RadialModelSpec) -> RadialFunction:
    """Wrap a model as ``theta (n,) -> C(theta) (n, p, p)``."""
    p = spec.p
    ii, jj = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")

    def cov(theta):
        th = np.asarray(theta, dtype=float)[:, None, None]
        return radial_eval_many(spec, ii[None], jj[None], np.broadcast_to(th, (th.shape[0], p, p)))

    return cov


def extract_schoenberg(cov: Union[RadialFunction, RadialModelSpec], d: int = 2, K: int = 50,
                       n_quad: int = 400, n_check: int = 256) -> SchoenbergSequence:
    """Project a radial matrix function onto ultraspherical polynomials.

    ``B_k = int C(t) P_k(cos t) sin(t)^(d-1) dt / int P_k(cos t)^2 sin(t)^(d-1) dt``
    with both integrals taken by composite Gauss-Legendre quadrature over
    [0, pi]. ``cov`` maps an array of angles of shape ``(n,)`` to matrices of
    shape ``(n, p, p)`` (scalar outputs are treated as p = 1), or is a
    :class:`RadialModelSpec`.
    """
    if d not in (1, 2):
        raise ValueError("only S^1 and S^2 are supported")
    if K < 0:
        raise ValueError("K must be non-negative")
    if n_quad < max(4 * K, 4):
        raise QuadratureError(f"n_quad={n_quad} too small for K={K}; need at least {max(4 * K, 4)}")
    if isinstance(cov, RadialModelSpec):
        cov = spec_as_function(cov)
    lam = (d - 1) / 2.0
    nodes, weights = composite_gauss_legendre(0.0, np.pi, n_quad)
    w = weights * np.sin(nodes) ** (d - 1)
    values = _as_matrix_values(cov(nodes), nodes.size)
    basis = ultraspherical_table(lam, K, np.cos(nodes))
    norms = (basis ** 2) @ w
    proj = np.einsum("kn,n,nij->kij", basis, w, values)
    mats = proj / norms[:, None, None]

    seq = SchoenbergSequence(matrices=mats, residual=0.0, lam=lam, norms=norms)
    grid = np.linspace(0.0, np.pi, n_check)
    approx = seq.reconstruct(grid)
    exact = _as_matrix_values(cov(grid), grid.size)
    seq.residual = float(np.max(np.abs(approx - exact)))
    return seq


def _as_matrix_values(vals, n: int) -> np.ndarray:
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        return vals.reshape(n, 1, 1)
    return vals


@dataclass
class PsdReport:
    failures: list
    min_eigenvalues: np.ndarray
    tol: float

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.ok


def check_psd_sequence(seq: Union[SchoenbergSequence, np.ndarray, list], tol: float = None) -> PsdReport:
    """Flag degrees whose symmetrized ``B_k`` has an eigenvalue below ``-tol``.

    The default tolerance is ``1e-6`` times the largest diagonal entry in the
    sequence.
    """
    mats = seq.matrices if isinstance(seq, SchoenbergSequence) else seq
    mats = np.asarray(mats, dtype=float)
    if mats.size == 0:
        return PsdReport(failures=[], min_eigenvalues=np.empty(0), tol=0.0 if tol is None else tol)
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    if tol is None:
        tol = 1e-6 * float(np.max(np.abs(np.diagonal(sym, axis1=-2, axis2=-1))))
    mins = np.linalg.eigvalsh(sym)[:, 0]
    failures = [(k, float(m)) for k, m in enumerate(mins) if m < -tol]
    return PsdReport(failures=failures, min_eigenvalues=mins, tol=float(tol))
