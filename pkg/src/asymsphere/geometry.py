"""Points, geodesic distances and rotations on the circle and the 2-sphere.

Sites are carried around as plain ``numpy`` arrays of shape ``(n, d + 1)``
whose rows are unit vectors; :class:`SpherePoint` is a thin wrapper for
single sites that renormalizes its coordinates on construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6378.0


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, angle out of range)."""


@dataclass(frozen=True)
class SpherePoint:
    """A site on the unit sphere S^d, d in {1, 2}."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1)
        if c.size not in (2, 3):
            raise GeometryError(f"expected 2 or 3 coordinates, got {c.size}")
        norm = np.linalg.norm(c)
        if not np.isfinite(norm) or norm == 0.0:
            raise GeometryError("cannot normalize a zero or non-finite vector")
        c = c / norm
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.size - 1

    @classmethod
    def from_lonlat(cls, lon_deg: float, lat_deg: float) -> "SpherePoint":
        return cls(lonlat_to_xyz(lon_deg, lat_deg))

    @classmethod
    def from_angle(cls, angle: float) -> "SpherePoint":
        return cls(np.array([np.cos(angle), np.sin(angle)]))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def as_points(points) -> np.ndarray:
    """Stack sites into an ``(n, d + 1)`` float array of unit rows."""
    if isinstance(points, SpherePoint):
        return points.coords[None, :].copy()
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], SpherePoint):
        arr = np.stack([p.coords for p in points])
    else:
        arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.shape[-1] not in (2, 3):
        raise GeometryError(f"points must have 2 or 3 coordinates, got {arr.shape[-1]}")
    return arr / np.linalg.norm(arr, axis=-1, keepdims=True)


def _coords(x) -> np.ndarray:
    if isinstance(x, SpherePoint):
        return x.coords
    return np.asarray(x, dtype=float)


def _angle(xa: np.ndarray, ya: np.ndarray) -> np.ndarray:
    # 2 atan2(|x - y|, |x + y|) equals arccos(x . y) for unit vectors but stays
    # accurate near 0 and pi, and is exactly 0 for identical points
    return 2.0 * np.arctan2(np.linalg.norm(xa - ya, axis=-1), np.linalg.norm(xa + ya, axis=-1))


def geodesic_distance(x, y) -> np.ndarray | float:
    """Great-circle distance ``arccos(x . y)`` in [0, pi].

    Evaluated through the half-chord identity, which agrees with the clamped
    arccos of the dot product to rounding but loses no precision for nearly
    coincident or nearly antipodal points. Broadcasts over leading axes.
    """
    xa, ya = _coords(x), _coords(y)
    if xa.shape[-1] != ya.shape[-1]:
        raise GeometryError(
            f"points live on different spheres (S^{xa.shape[-1] - 1} vs S^{ya.shape[-1] - 1})"
        )
    theta = _angle(xa, ya)
    return float(theta) if np.ndim(theta) == 0 else theta


def distance_matrix(x, y=None) -> np.ndarray:
    """Pairwise geodesic distances between rows of ``x`` and ``y``."""
    xa = as_points(x)
    ya = xa if y is None else as_points(y)
    if xa.shape[1] != ya.shape[1]:
        raise GeometryError("point sets live on different spheres")
    return _angle(xa[:, None, :], ya[None, :, :])


def rotation_s1(delta: float) -> np.ndarray:
    """Planar rotation ``[[cos d, sin d], [-sin d, cos d]]``."""
    c, s = np.cos(delta), np.sin(delta)
    return np.array([[c, s], [-s, c]])


def skew(axis) -> np.ndarray:
    """Cross-product matrix ``W`` with ``W @ v == np.cross(axis, v)``."""
    w1, w2, w3 = _coords(axis)
    return np.array([[0.0, -w3, w2], [w3, 0.0, -w1], [-w2, w1, 0.0]])


def rotation_s2(axis, delta: float) -> np.ndarray:
    """Rodrigues rotation ``I + sin(d) W + (1 - cos(d)) W^2`` about a unit axis."""
    w = skew(axis)
    return np.eye(3) + np.sin(delta) * w + (1.0 - np.cos(delta)) * (w @ w)


def axis_from_angles(alpha1: float, alpha2: float) -> SpherePoint:
    """Unit axis ``(cos a1 sin a2, sin a1 sin a2, cos a2)``.

    ``alpha1`` is the azimuth in [0, 2*pi) and ``alpha2`` the colatitude in [0, pi].
    """
    if not 0.0 <= alpha1 < 2 * np.pi:
        raise GeometryError(f"alpha1={alpha1} outside [0, 2pi)")
    if not 0.0 <= alpha2 <= np.pi:
        raise GeometryError(f"alpha2={alpha2} outside [0, pi]")
    return SpherePoint(np.array([np.cos(alpha1) * np.sin(alpha2),
                                 np.sin(alpha1) * np.sin(alpha2),
                                 np.cos(alpha2)]))


def is_rotation(mat, atol: float = 1e-10) -> bool:
    mat = np.asarray(mat, dtype=float)
    eye = np.eye(mat.shape[0])
    return bool(np.allclose(mat.T @ mat, eye, rtol=0.0, atol=atol)
                and abs(np.linalg.det(mat) - 1.0) <= atol)


def paper_grid(n_per_axis: int = 15, pole_safe: bool = True) -> np.ndarray:
    """Longitude x colatitude grid on S^2.

    Longitudes are ``2*pi*(k-1)/n``. With ``pole_safe`` the colatitudes are
    cell midpoints ``pi*(2k-1)/(2n)``; otherwise they are ``pi*(k-1)/n`` and
    the coincident points of the colatitude-0 row are merged into one pole.
    """
    if n_per_axis < 2:
        raise GeometryError("n_per_axis must be at least 2")
    k = np.arange(n_per_axis)
    lon = 2 * np.pi * k / n_per_axis
    if pole_safe:
        colat = np.pi * (2 * k + 1) / (2 * n_per_axis)
    else:
        colat = np.pi * k / n_per_axis
    cl, ln = np.meshgrid(colat, lon, indexing="ij")
    pts = np.column_stack([
        (np.sin(cl) * np.cos(ln)).ravel(),
        (np.sin(cl) * np.sin(ln)).ravel(),
        np.cos(cl).ravel(),
    ])
    if pole_safe:
        return pts
    keep = []
    for idx, p in enumerate(pts):
        if not any(np.allclose(p, pts[j], atol=1e-12) for j in keep):
            keep.append(idx)
    return pts[keep]


def lonlat_to_xyz(lon_deg, lat_deg) -> np.ndarray:
    """Convert degrees of longitude/latitude to unit vectors in R^3."""
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    colat = np.pi / 2 - np.radians(np.asarray(lat_deg, dtype=float))
    return np.stack([np.sin(colat) * np.cos(lon),
                     np.sin(colat) * np.sin(lon),
                     np.cos(colat)], axis=-1)


def xyz_to_lonlat(xyz) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`lonlat_to_xyz`; longitudes land in [-180, 180)."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    lat = np.degrees(np.arcsin(np.clip(xyz[:, 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    lon = np.where(lon >= 180.0, lon - 360.0, lon)
    return lon, lat


def angle_to_xy(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def xy_to_angle(xy) -> np.ndarray:
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    return np.arctan2(xy[:, 1], xy[:, 0])


def km_to_radians(km: float, radius: float = EARTH_RADIUS_KM) -> float:
    return km / radius
