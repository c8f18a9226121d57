"""Geodesically isotropic matrix-valued covariance families on spheres.

Three families are provided (Matern, generalized Cauchy and Wendland), each
evaluated through a radial part ``C_ij(theta)``. The presets ``M1``, ``M2`` and
``M3`` fix the shape parameters and fold an effective-range factor into the
scale, so that ``C_ij(theta) / C_ij(0)`` is small (M1, M2) or zero (M3) for
``theta > c_ij``.

Variable indices in the public API are 1-based labels, matching the ``var``
column of observation files.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special

FAMILIES = ("matern", "cauchy", "wendland")


class ModelError(ValueError):
    """Malformed model specification or argument outside its domain."""


@dataclass(frozen=True)
class RadialModelSpec:
    """Parameters of a p-variate geodesically isotropic model.

    Attributes
    ----------
    family : one of ``"matern"``, ``"cauchy"``, ``"wendland"``
    sigma2 : marginal variances, length p
    rho : p x p collocated correlation matrix (unit diagonal)
    c_marginal : marginal scales ``c_ii`` in radians
    nu : smoothness (Matern), decay (Cauchy) or shape (Wendland)
    gamma : Cauchy shape in (0, 1]; ignored by the other families
    separable : force every ``c_ij`` to the common scale ``c_marginal[0]``
    range_factor : the scale is divided by this constant before evaluation
        (3 for M1, 19 for M2, 1 otherwise)
    c_cross : optional explicit p x p cross-scale matrix overriding the
        parsimonious max/mean rule
    name : preset label, informational only
    """

    family: str
    sigma2: np.ndarray
    rho: np.ndarray
    c_marginal: np.ndarray
    nu: float
    gamma: float = 1.0
    separable: bool = False
    range_factor: float = 1.0
    c_cross: Optional[np.ndarray] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float)).copy()
        p = sigma2.size
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 0:
            if p != 2:
                raise ModelError("a scalar rho is only meaningful for p = 2")
            rho = np.array([[1.0, float(rho)], [float(rho), 1.0]])
        if rho.shape != (p, p):
            raise ModelError(f"rho must be {p}x{p}, got {rho.shape}")
        c = np.atleast_1d(np.asarray(self.c_marginal, dtype=float)).copy()
        if c.size == 1 and p > 1:
            c = np.repeat(c, p)
        if c.size != p:
            raise ModelError(f"c_marginal must have {p} entries, got {c.size}")
        if self.separable:
            c = np.full(p, c[0])
        cc = None
        if self.c_cross is not None:
            cc = np.asarray(self.c_cross, dtype=float).copy()
            if cc.shape != (p, p):
                raise ModelError(f"c_cross must be {p}x{p}")
            cc[np.diag_indices(p)] = c
            cc.setflags(write=False)
        for arr in (sigma2, c):
            arr.setflags(write=False)
        rho = rho.copy()
        rho.setflags(write=False)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "c_marginal", c)
        object.__setattr__(self, "c_cross", cc)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "range_factor", float(self.range_factor))

    @property
    def p(self) -> int:
        return self.sigma2.size

    def scale_matrix(self) -> np.ndarray:
        """p x p matrix of ``c_ij`` under the active cross-scale rule."""
        if self.c_cross is not None:
            return np.array(self.c_cross)
        c = self.c_marginal
        if self.separable:
            return np.full((self.p, self.p), c[0])
        if self.family == "cauchy":
            out = 0.5 * (c[:, None] + c[None, :])
        else:
            out = np.maximum(c[:, None], c[None, :])
        out[np.diag_indices(self.p)] = c
        return out

    def coef_matrix(self) -> np.ndarray:
        """p x p matrix of ``sigma_i sigma_j rho_ij`` (the zero-lag covariance)."""
        s = np.sqrt(self.sigma2)
        out = s[:, None] * s[None, :] * self.rho
        out[np.diag_indices(self.p)] = self.sigma2 * np.diag(self.rho)
        return out

    def with_params(self, **kw) -> "RadialModelSpec":
        return replace(self, **kw)


def cross_scale(spec: RadialModelSpec, i: int, j: int) -> float:
    """Scale ``c_ij`` for 1-based variables ``i`` and ``j``."""
    _check_index(spec, i, j)
    return float(spec.scale_matrix()[i - 1, j - 1])


def _check_index(spec: RadialModelSpec, *idx: int) -> None:
    for k in idx:
        if not 1 <= k <= spec.p:
            raise ModelError(f"variable index {k} outside 1..{spec.p}")


def correlation_kernel(family: str, t: np.ndarray, nu: float, gamma: float = 1.0) -> np.ndarray:
    """Normalized radial profile evaluated at ``t = theta / effective_scale``.

    For the Cauchy family ``t`` is ``theta**gamma / effective_scale``.
    """
    t = np.asarray(t, dtype=float)
    if family == "matern":
        if nu == 0.5:
            return np.exp(-t)
        out = np.ones_like(t)
        pos = t > 0
        tp = t[pos]
        out[pos] = 2.0 ** (1.0 - nu) / special.gamma(nu) * tp ** nu * special.kv(nu, tp)
        return out
    if family == "cauchy":
        return (1.0 + t) ** (-nu)
    if family == "wendland":
        base = np.clip(1.0 - t, 0.0, None)
        return base ** nu * (1.0 + nu * t)
    raise ModelError(f"unknown family {family!r}")


def radial_eval_many(spec: RadialModelSpec, vi, vj, theta) -> np.ndarray:
    """Vectorized ``C_{vi vj}(theta)`` for 0-based index arrays, no range checks."""
    vi = np.asarray(vi)
    vj = np.asarray(vj)
    coef = spec.coef_matrix()[vi, vj]
    scale = spec.scale_matrix()[vi, vj] / spec.range_factor
    theta = np.asarray(theta, dtype=float)
    if spec.family == "cauchy":
        t = theta ** spec.gamma / scale
    else:
        t = theta / scale
    return coef * correlation_kernel(spec.family, t, spec.nu, spec.gamma)


def radial_eval(spec: RadialModelSpec, i: int, j: int, theta):
    """Radial part ``C_ij(theta)`` for 1-based ``i``, ``j`` and ``theta`` in [0, pi]."""
    _check_index(spec, i, j)
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0.0) or np.any(th > np.pi) or np.any(~np.isfinite(th)):
        raise ModelError("theta must lie in [0, pi]")
    out = radial_eval_many(spec, np.full(th.shape, i - 1), np.full(th.shape, j - 1), th)
    return float(out) if out.ndim == 0 else out


def radial_matrix(spec: RadialModelSpec, theta: float) -> np.ndarray:
    """p x p matrix ``C(theta)``."""
    p = spec.p
    ii, jj = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    return radial_eval_many(spec, ii, jj, np.full((p, p), float(theta)))


@dataclass(frozen=True)
class Violation:
    constraint: str
    margin: float
    message: str


@dataclass
class ValidityReport:
    """Outcome of :func:`validate_params`; truthy when every constraint holds.

    ``margin`` is positive when a constraint holds with room to spare and
    negative by the amount it is violated.
    """

    violations: list = field(default_factory=list)
    checked: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def _check(self, name: str, margin: float, message: str) -> None:
        margin = float(margin)
        self.checked.append((name, margin))
        if not margin >= 0.0:
            self.violations.append(Violation(name, margin, message))

    def summary(self) -> str:
        if self.ok:
            return "ok" + ("".join(f"; {n}" for n in self.notes))
        return "; ".join(f"{v.message} (margin {v.margin:.4g})" for v in self.violations)


def validate_params(spec: RadialModelSpec) -> ValidityReport:
    """Check the type invariants and the family cross-correlation condition.

    Never raises on bad values: every violated constraint is reported with its
    margin.
    """
    rep = ValidityReport()
    p = spec.p
    for k, s2 in enumerate(spec.sigma2):
        rep._check(f"sigma2[{k + 1}]>0", s2 if np.isfinite(s2) else -np.inf,
                   f"variance sigma2[{k + 1}] must be positive")
    rho = spec.rho
    for k in range(p):
        rep._check(f"rho[{k + 1},{k + 1}]=1", -abs(rho[k, k] - 1.0),
                   "collocated correlation diagonal must equal 1")
    for a in range(p):
        for b in range(a + 1, p):
            rep._check(f"rho[{a + 1},{b + 1}] symmetric", -abs(rho[a, b] - rho[b, a]),
                       "collocated correlation matrix must be symmetric")
            r = rho[a, b]
            rep._check(f"|rho[{a + 1},{b + 1}]|<=1", 1.0 - abs(r) if np.isfinite(r) else -np.inf,
                       "collocated correlation out of [-1,1]")
    cmat = spec.scale_matrix()
    for a in range(p):
        for b in range(a, p):
            rep._check(f"c[{a + 1},{b + 1}]>0", cmat[a, b] if np.isfinite(cmat[a, b]) else -np.inf,
                       f"scale c[{a + 1},{b + 1}] must be positive")
    if rep.violations:
        return rep

    nu, gamma = spec.nu, spec.gamma
    if spec.family == "matern":
        rep._check("0<nu", nu, "Matern smoothness must be positive")
        rep._check("nu<=1/2", 0.5 - nu, "Matern smoothness must not exceed 1/2 on the sphere")
    elif spec.family == "cauchy":
        rep._check("0<nu", nu, "Cauchy decay parameter must be positive")
        rep._check("0<gamma", gamma, "Cauchy gamma must be positive")
        rep._check("gamma<=1", 1.0 - gamma, "Cauchy gamma must not exceed 1")
    else:
        rep._check("nu>=2", nu - 2.0, "Wendland shape must be at least 2")
        for a in range(p):
            for b in range(a, p):
                rep._check(f"c[{a + 1},{b + 1}]<=pi", np.pi - cmat[a, b],
                           f"Wendland support c[{a + 1},{b + 1}] must not exceed pi")
    if rep.violations or p == 1:
        return rep

    if spec.family == "wendland":
        total = 0.0
        for a in range(p):
            for b in range(p):
                if a != b:
                    total += abs(rho[a, b]) * (cmat[a, a] / cmat[a, b]) ** (nu + 1.0)
        rep._check("wendland cross condition", 1.0 - total,
                   "sum_{i!=j} |rho_ij| (c_ii/c_ij)^(nu+1) exceeds 1")
        return rep

    for a in range(p):
        for b in range(a + 1, p):
            bound = (cmat[a, a] * cmat[b, b] / cmat[a, b] ** 2) ** nu
            if spec.family == "matern":
                rep._check(f"matern cross condition [{a + 1},{b + 1}]", bound - abs(rho[a, b]),
                           f"|rho_{a + 1}{b + 1}| exceeds (c_ii c_jj / c_ij^2)^nu = {bound:.6g}")
            else:
                rep._check(f"cauchy cross condition [{a + 1},{b + 1}]", bound - rho[a, b] ** 2,
                           f"rho_{a + 1}{b + 1}^2 exceeds (c_ii c_jj / c_ij^2)^nu = {bound:.6g}")
    if p > 2:
        rep.notes.append("pairwise-only validation")
    return rep


PRESETS = {
    "M1": dict(family="matern", nu=0.5, gamma=1.0, range_factor=3.0),
    "M2": dict(family="cauchy", nu=1.0, gamma=1.0, range_factor=19.0),
    "M3": dict(family="wendland", nu=4.0, gamma=1.0, range_factor=1.0),
}


def preset(name: str, sigma2=(1.0, 1.0), rho12: float = 0.5, c=(0.1, 0.2),
           separable: bool = False) -> RadialModelSpec:
    """Bivariate model from a named preset ("M1", "M2" or "M3").

    Defaults are the simulation-study settings. With ``separable`` the common
    scale is ``c[0]`` when ``c`` is a sequence.
    """
    key = name.upper()
    if key not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    c_arr = np.atleast_1d(np.asarray(c, dtype=float))
    return RadialModelSpec(sigma2=np.asarray(sigma2, dtype=float), rho=float(rho12),
                           c_marginal=c_arr, separable=separable, name=key, **PRESETS[key])


def spec_to_dict(spec: RadialModelSpec) -> dict:
    out = {
        "family": spec.family,
        "sigma2": spec.sigma2.tolist(),
        "rho": spec.rho.tolist(),
        "c_marginal": spec.c_marginal.tolist(),
        "nu": spec.nu,
        "gamma": spec.gamma,
        "separable": spec.separable,
        "range_factor": spec.range_factor,
    }
    if spec.c_cross is not None:
        out["c_cross"] = spec.c_cross.tolist()
    if spec.name:
        out["name"] = spec.name
    return out


def spec_from_dict(doc: dict) -> RadialModelSpec:
    """Build a spec from a JSON mapping.

    Either ``{"preset": "M1", ...overrides}`` with optional ``sigma2``,
    ``rho12``, ``c`` and ``separable``, or the full field set of
    :class:`RadialModelSpec`.
    """
    if "preset" in doc:
        kw = {k: doc[k] for k in ("sigma2", "rho12", "c", "separable") if k in doc}
        return preset(doc["preset"], **kw)
    fields = {"family", "sigma2", "rho", "c_marginal", "nu", "gamma", "separable",
              "range_factor", "c_cross", "name"}
    unknown = set(doc) - fields - {"eta", "alpha1", "alpha2", "deltas"}
    if unknown:
        raise ModelError(f"unknown model fields: {sorted(unknown)}")
    missing = {"family", "sigma2", "rho", "c_marginal", "nu"} - set(doc)
    if missing:
        raise ModelError(f"missing model fields: {sorted(missing)}")
    return RadialModelSpec(**{k: v for k, v in doc.items() if k in fields})


def matern_rho_bound(c11: float, c22: float, c12: float, nu: float) -> float:
    return (c11 * c22 / c12 ** 2) ** nu


def wendland_rho_bound(c11: float, c22: float, c12: float, nu: float) -> float:
    return 1.0 / ((c11 / c12) ** (nu + 1) + (c22 / c12) ** (nu + 1))


__all__ = [
    "FAMILIES", "ModelError", "RadialModelSpec", "cross_scale", "correlation_kernel",
    "radial_eval", "radial_eval_many", "radial_matrix", "Violation", "ValidityReport",
    "validate_params", "PRESETS", "preset", "spec_to_dict", "spec_from_dict",
    "matern_rho_bound", "wendland_rho_bound",
]
