"""Rotation-induced asymmetric cross-covariances.

Component ``i`` of the asymmetric field is the symmetric field's component
evaluated at a rotated site, ``Z_i(R_i x)``, so that

    F_ij(x, y) = C_ij(theta(R_i x, R_j y)) = C_ij(theta(x, R_i^T R_j y)).

All rotations share one axis and their angles sum to zero. For two variables
the angles are ``eta / 2`` and ``-eta / 2``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .covariance import RadialModelSpec, radial_eval_many, _check_index
from .geometry import (GeometryError, SpherePoint, as_points, axis_from_angles,
                       distance_matrix, geodesic_distance, rotation_s1, rotation_s2)


@dataclass(frozen=True)
class AsymmetrySpec:
    """Rotation parameters.

    ``eta`` is the relative rotation angle between the two components,
    ``alpha1``/``alpha2`` the azimuth and colatitude of the shared axis (S^2
    only). For ``p > 2`` pass ``deltas``, the first ``p - 1`` per-component
    angles; the last one is fixed by the zero-sum constraint.
    """

    eta: float = 0.0
    alpha1: float = np.pi / 2
    alpha2: float = np.pi / 2
    deltas: Optional[Sequence[float]] = None

    def angles(self, p: int) -> np.ndarray:
        if self.deltas is not None:
            free = np.asarray(self.deltas, dtype=float)
            if free.size != p - 1:
                raise ValueError(f"expected {p - 1} free rotation angles for p={p}")
            return np.append(free, -free.sum())
        if p == 1:
            return np.zeros(1)
        if p != 2:
            if self.eta == 0.0:
                return np.zeros(p)
            raise ValueError("eta alone only parameterizes p = 2; pass deltas for p > 2")
        return np.array([self.eta / 2.0, -self.eta / 2.0])

    def axis(self) -> np.ndarray:
        return axis_from_angles(self.alpha1 % (2 * np.pi), self.alpha2).coords

    def to_dict(self) -> dict:
        out = {"eta": float(self.eta), "alpha1": float(self.alpha1), "alpha2": float(self.alpha2)}
        if self.deltas is not None:
            out["deltas"] = [float(d) for d in self.deltas]
        return out


@dataclass(frozen=True)
class AsymmetricCovariance:
    """A symmetric base model plus optional per-component rotations."""

    base: RadialModelSpec
    asym: Optional[AsymmetrySpec] = None
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GeometryError("only S^1 and S^2 are supported")
        if self.asym is not None:
            eta = self.asym.eta
            if self.dim == 2 and not 0.0 <= eta < np.pi:
                raise GeometryError(f"eta={eta} outside [0, pi) on S^2")
            if self.dim == 1 and not -np.pi < eta < np.pi:
                raise GeometryError(f"eta={eta} outside (-pi, pi) on S^1")

    @cached_property
    def rotations(self) -> np.ndarray:
        """Stack of the p rotation matrices ``R_i``."""
        p = self.base.p
        if self.asym is None:
            rots = np.broadcast_to(np.eye(self.dim + 1), (p, self.dim + 1, self.dim + 1)).copy()
        else:
            deltas = self.asym.angles(p)
            if self.dim == 1:
                rots = np.stack([rotation_s1(dl) for dl in deltas])
            else:
                ax = self.asym.axis()
                rots = np.stack([rotation_s2(ax, dl) for dl in deltas])
        rots.setflags(write=False)
        return rots

    @property
    def p(self) -> int:
        return self.base.p

    @property
    def symmetric(self) -> bool:
        return self.asym is None

    def rotate(self, sites, vars0) -> np.ndarray:
        """Rows ``R_{v} x`` for 0-based variable indices ``vars0``."""
        x = np.asarray(sites, dtype=float)
        v = np.asarray(vars0)
        out = np.empty_like(x)
        for k in range(self.p):
            m = v == k
            if np.any(m):
                out[m] = x[m] @ self.rotations[k].T
        return out


def cross_cov(model: AsymmetricCovariance, i: int, j: int, x, y) -> float:
    """``cov(Z_i(x), Z_j(y))`` for 1-based variables."""
    _check_index(model.base, i, j)
    xa = x.coords if isinstance(x, SpherePoint) else np.asarray(x, dtype=float)
    ya = y.coords if isinstance(y, SpherePoint) else np.asarray(y, dtype=float)
    if xa.shape[-1] != model.dim + 1 or ya.shape[-1] != model.dim + 1:
        raise GeometryError(f"points are not on S^{model.dim}")
    rel = model.rotations[i - 1].T @ model.rotations[j - 1]
    theta = geodesic_distance(xa, ya @ rel.T)
    return radial_eval_many(model.base, np.asarray(i - 1), np.asarray(j - 1), theta)[()]


def effective_distances(model: AsymmetricCovariance, sites, vars0) -> np.ndarray:
    """Matrix of ``theta(R_{v_l} x_l, R_{v_r} x_r)`` over all observation pairs."""
    xr = model.rotate(sites, vars0)
    return distance_matrix(xr)


def build_block_cov(model: AsymmetricCovariance, sites, vars, warn: bool = True) -> np.ndarray:
    """Covariance matrix of the observations ``(vars[l], sites[l])``.

    ``vars`` holds 1-based variable labels. Entry ``(l, r)`` is
    ``F_{vars[l] vars[r]}(sites[l], sites[r])``; the matrix is symmetric even
    though ``F_ij(x, y) != F_ji(x, y)`` in general.
    """
    x = as_points(sites)
    v0 = np.asarray(vars, dtype=int) - 1
    if x.shape[0] != v0.size:
        raise ValueError("sites and vars must have equal length")
    if x.shape[1] != model.dim + 1:
        raise GeometryError(f"points are not on S^{model.dim}")
    if np.any(v0 < 0) or np.any(v0 >= model.p):
        raise ValueError(f"variable labels must lie in 1..{model.p}")
    if warn:
        _warn_duplicates(x, v0)
    theta = effective_distances(model, x, v0)
    cov = radial_eval_many(model.base, v0[:, None], v0[None, :], theta)
    return 0.5 * (cov + cov.T)


def _warn_duplicates(x: np.ndarray, v0: np.ndarray) -> None:
    keys = np.round(np.column_stack([x, v0]), 12)
    if np.unique(keys, axis=0).shape[0] < keys.shape[0]:
        warnings.warn("duplicate (site, variable) observations; covariance matrix is singular",
                      RuntimeWarning, stacklevel=3)


def s1_cross_cosine(x, y, delta_i: float, delta_j: float) -> float:
    """Closed-form ``x^T R_i^T R_j y`` on the circle."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = delta_j - delta_i
    return float(np.dot(x, y) * np.cos(d) + (x[0] * y[1] - x[1] * y[0]) * np.sin(d))
