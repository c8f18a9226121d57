"""Pairwise composite likelihood and its maximization.

The objective sums bivariate Gaussian log-densities over every unordered
pair of observations whose sites are within ``cutoff`` radians of each other
(collocated pairs of different variables included). Parameters are searched
by Nelder-Mead on unconstrained coordinates; invalid parameter vectors get an
objective of ``-inf`` and are never passed to the density.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .asymmetry import AsymmetricCovariance, AsymmetrySpec
from .covariance import RadialModelSpec, correlation_kernel, preset, validate_params
from .data import ObservationSet
from .geometry import distance_matrix, geodesic_distance

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
TWO_PI = 2.0 * np.pi


class EstimationError(ValueError):
    pass


# --------------------------------------------------------------------------
# variants and parameter vectors


@dataclass(frozen=True)
class Variant:
    asymmetric: bool
    separable: bool

    @classmethod
    def parse(cls, text: str) -> "Variant":
        """Accepts e.g. ``"asym-nonsep"``, ``"sym x sep"``, ``"asymxsep"``."""
        t = text.lower().replace(" ", "").replace("_", "-")
        for sep in ("x", "-", ","):
            if sep in t:
                a, _, b = t.partition(sep)
                if a in ("sym", "asym") and b in ("sep", "nonsep"):
                    return cls(asymmetric=a == "asym", separable=b == "sep")
        raise EstimationError(f"cannot parse variant {text!r}; use e.g. 'asym-nonsep'")

    @property
    def label(self) -> str:
        return f"{'asym' if self.asymmetric else 'sym'}-{'sep' if self.separable else 'nonsep'}"

    def names(self, dim: int = 2) -> tuple:
        out = ["sigma2_1", "sigma2_2", "rho12"]
        out += ["c"] if self.separable else ["c11", "c22"]
        if self.asymmetric:
            out += ["eta", "alpha1", "alpha2"] if dim == 2 else ["eta"]
        return tuple(out)


VARIANTS = tuple(Variant(a, s) for a in (False, True) for s in (True, False))


@dataclass(frozen=True)
class ParameterVector:
    """Named parameter values of one fitted variant."""

    variant: Variant
    values: tuple
    dim: int = 2

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(self.names):
            raise EstimationError(f"{self.variant.label} expects {len(self.names)} values, got {len(vals)}")
        object.__setattr__(self, "values", vals)

    @property
    def names(self) -> tuple:
        return self.variant.names(self.dim)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    @classmethod
    def from_dict(cls, variant: Variant, doc: dict, dim: int = 2) -> "ParameterVector":
        names = variant.names(dim)
        d = dict(doc)
        if variant.separable and "c" not in d and "c11" in d:
            d["c"] = d["c11"]
        if not variant.separable and "c11" not in d and "c" in d:
            d["c11"] = d["c22"] = d["c"]
        missing = [n for n in names if n not in d]
        if missing:
            raise EstimationError(f"missing parameters for {variant.label}: {missing}")
        return cls(variant, tuple(d[n] for n in names), dim)

    def to_model(self, family: str) -> AsymmetricCovariance:
        """Build the covariance model for preset ``family`` ("M1", "M2", "M3")."""
        d = self.as_dict()
        c = (d["c"],) if self.variant.separable else (d["c11"], d["c22"])
        base = preset(family, sigma2=(d["sigma2_1"], d["sigma2_2"]), rho12=d["rho12"],
                      c=c, separable=self.variant.separable)
        asym = None
        if self.variant.asymmetric:
            if self.dim == 2:
                asym = AsymmetrySpec(eta=d["eta"], alpha1=d["alpha1"] % TWO_PI, alpha2=d["alpha2"])
            else:
                asym = AsymmetrySpec(eta=d["eta"])
        return AsymmetricCovariance(base, asym, dim=self.dim)

    def to_unconstrained(self) -> np.ndarray:
        out = []
        for name, v in zip(self.names, self.values):
            if name.startswith(("sigma2", "c")):
                out.append(np.log(v))
            elif name == "rho12":
                out.append(np.arctanh(np.clip(v, -1 + 1e-12, 1 - 1e-12)))
            elif name in ("eta", "alpha2") and self.dim == 2:
                out.append(logit(np.clip(v / np.pi, 1e-12, 1 - 1e-12)))
            elif name == "eta":
                out.append(np.arctanh(np.clip(v / np.pi, -1 + 1e-12, 1 - 1e-12)))
            else:
                out.append(v)
        return np.asarray(out, dtype=float)

    @classmethod
    def from_unconstrained(cls, variant: Variant, u, dim: int = 2) -> "ParameterVector":
        """Inverse of :meth:`to_unconstrained`: log for variances and scales,
        tanh for rho, pi * logistic for eta and alpha2 (S^2), alpha1 mod 2 pi."""
        vals = []
        for name, x in zip(variant.names(dim), u):
            if name.startswith(("sigma2", "c")):
                vals.append(np.exp(x))
            elif name == "rho12":
                vals.append(np.tanh(x))
            elif name in ("eta", "alpha2") and dim == 2:
                vals.append(np.pi * expit(x))
            elif name == "eta":
                vals.append(np.pi * np.tanh(x))
            else:
                a = x % TWO_PI
                vals.append(0.0 if a == TWO_PI else a)  # -tiny % 2pi rounds up to 2pi
        return cls(variant, tuple(vals), dim)


def params_from_model(model: AsymmetricCovariance, variant: Variant) -> ParameterVector:
    base = model.base
    vals = [base.sigma2[0], base.sigma2[1], base.rho[0, 1]]
    vals += [base.c_marginal[0]] if variant.separable else list(base.c_marginal[:2])
    if variant.asymmetric:
        a = model.asym or AsymmetrySpec()
        vals += [a.eta, a.alpha1, a.alpha2] if model.dim == 2 else [a.eta]
    return ParameterVector(variant, tuple(vals), model.dim)


# --------------------------------------------------------------------------
# composite likelihood


@dataclass
class PairSet:
    """Observation pairs ``l < r`` whose sites are within ``cutoff``."""

    left: np.ndarray
    right: np.ndarray
    cutoff: float
    include_collocated: bool = True

    def __len__(self) -> int:
        return self.left.size


def build_pairs(data: ObservationSet, cutoff: float, include_collocated: bool = True) -> PairSet:
    if not 0.0 < cutoff <= np.pi:
        raise EstimationError(f"cutoff {cutoff} outside (0, pi]")
    dist = distance_matrix(data.sites)
    ll, rr = np.triu_indices(len(data), k=1)
    keep = dist[ll, rr] <= cutoff
    if not include_collocated:
        keep &= data.site_ids[ll] != data.site_ids[rr]
    return PairSet(ll[keep], rr[keep], float(cutoff), include_collocated)


class CompositeLikelihood:
    """Pairwise CL of one data set, with pair geometry cached across evaluations.

    Pairs are sorted into contiguous groups by variable combination so that
    each group is evaluated with scalar parameters. Cross-variable pairs use

        x . R_w(d) y = cos(d) x.y - sin(d) w.(x cross y) + (1 - cos d)(x.w)(y.w)

    on S^2 (``cos(d) x.y + sin(d)(x1 y2 - x2 y1)`` on S^1) with
    ``d = delta_j - delta_i``, which avoids rotating the sites.
    """

    def __init__(self, data: ObservationSet, cutoff: float = 1.0, include_collocated: bool = True,
                 pairs: Optional[PairSet] = None):
        self.data = data
        self.pairs = pairs if pairs is not None else build_pairs(data, cutoff, include_collocated)
        if len(self.pairs) == 0:
            raise EstimationError("cutoff excludes all pairs")
        self.p_data = int(data.vars.max())
        v0 = data.vars - 1
        code = v0[self.pairs.left] * self.p_data + v0[self.pairs.right]
        order = np.argsort(code, kind="stable")
        l, r = self.pairs.left[order], self.pairs.right[order]
        self.left, self.right = l, r
        code = code[order]
        x = data.sites
        zl, zr = data.values[l], data.values[r]
        self.zl2, self.zr2, self.zlzr = zl * zl, zr * zr, zl * zr
        self.cos_sym = np.clip(np.einsum("ij,ij->i", x[l], x[r]), -1.0, 1.0)
        self.theta_sym = geodesic_distance(x[l], x[r])
        if data.dim == 2:
            self.cross = np.cross(x[l], x[r])
        else:
            self.cross = x[l, 0] * x[r, 1] - x[l, 1] * x[r, 0]
        self.groups = []
        for c in np.unique(code):
            idx = np.flatnonzero(code == c)
            self.groups.append((int(c) // self.p_data, int(c) % self.p_data,
                                slice(int(idx[0]), int(idx[-1]) + 1)))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def __call__(self, model: AsymmetricCovariance) -> float:
        if model.p < self.p_data:
            raise EstimationError("model has fewer variables than the data")
        if model.dim != self.data.dim:
            raise EstimationError("model and data live on different spheres")
        if not validate_params(model.base):
            return -np.inf
        total = pairwise_loglik(self, model)
        return total if np.isfinite(total) else -np.inf

    def _rotation_terms(self, model: AsymmetricCovariance):
        if model.asym is None:
            return None
        deltas = model.asym.angles(model.p)
        if model.dim == 2:
            w = model.asym.axis()
            return deltas, w, self.data.sites @ w
        return deltas, None, None

    def group_distances(self, model: AsymmetricCovariance, i: int, j: int, sl: slice,
                        terms=None) -> np.ndarray:
        """Effective distances ``theta(R_i x_l, R_j x_r)`` for one pair group."""
        if model.asym is None or i == j:
            return self.theta_sym[sl]
        deltas, w, proj = terms if terms is not None else self._rotation_terms(model)
        d = deltas[j] - deltas[i]
        if d == 0.0:
            return self.theta_sym[sl]
        cd, sd = np.cos(d), np.sin(d)
        if model.dim == 2:
            c = (cd * self.cos_sym[sl] - sd * (self.cross[sl] @ w)
                 + (1.0 - cd) * proj[self.left[sl]] * proj[self.right[sl]])
        else:
            c = cd * self.cos_sym[sl] + sd * self.cross[sl]
        return np.arccos(np.clip(c, -1.0, 1.0))

    def pair_distances(self, model: AsymmetricCovariance) -> np.ndarray:
        """Effective distances for all pairs, in the internal (grouped) order."""
        terms = self._rotation_terms(model)
        return np.concatenate([self.group_distances(model, i, j, sl, terms)
                               for i, j, sl in self.groups])


def pairwise_loglik(cl: CompositeLikelihood, model: AsymmetricCovariance) -> float:
    """Sum of pair log-densities for an already validated model."""
    base = model.base
    coef = base.coef_matrix()
    scale = base.scale_matrix() / base.range_factor
    sig = base.sigma2
    terms = cl._rotation_terms(model)
    total = 0.0
    for i, j, sl in cl.groups:
        theta = cl.group_distances(model, i, j, sl, terms)
        t = theta ** base.gamma / scale[i, j] if base.family == "cauchy" else theta / scale[i, j]
        cov = coef[i, j] * correlation_kernel(base.family, t, base.nu, base.gamma)
        si, sj = sig[i], sig[j]
        det = si * sj - cov * cov
        if not np.all(det > 1e-12 * si * sj):
            return -np.inf
        quad = (sj * cl.zl2[sl] - 2.0 * cov * cl.zlzr[sl] + si * cl.zr2[sl]) / det
        total += -(det.size * LOG_2PI) - 0.5 * np.sum(np.log(det)) - 0.5 * np.sum(quad)
    return float(total)


def cl_objective(model: AsymmetricCovariance, data: ObservationSet, cutoff: float = 1.0,
                 include_collocated: bool = True) -> float:
    """Log pairwise composite likelihood; ``-inf`` for invalid parameters."""
    return CompositeLikelihood(data, cutoff, include_collocated)(model)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    converged: bool


def nelder_mead(fun, x0, step: float = 0.5, max_evals: int = 5000, xtol: float = 1e-6,
                ftol: float = 1e-8) -> SimplexResult:
    """Minimize ``fun`` by the Nelder-Mead simplex method.

    Stops when the simplex diameter (max-norm distance to the best vertex)
    drops below ``xtol`` or the spread of vertex values below ``ftol``,
    whichever happens first. ``inf`` values are allowed and simply rank last.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    sim = np.vstack([x0, x0 + step * np.eye(n)])
    fsim = np.array([fun(v) for v in sim])
    nfev = n + 1
    nit = 0
    converged = False
    while nfev < max_evals:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        diam = np.max(np.abs(sim[1:] - sim[0]))
        if np.isfinite(fsim[-1]):
            spread = fsim[-1] - fsim[0]
        else:
            spread = np.inf
        if diam < xtol or spread < ftol:
            converged = True
            break
        nit += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = fun(xr)
        nfev += 1
        if fr < fsim[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = fun(xe)
            nfev += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-1]:
            xc = centroid + 0.5 * (xr - centroid)
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
        fc = fun(xc)
        nfev += 1
        if fc < min(fr, fsim[-1]):
            sim[-1], fsim[-1] = xc, fc
            continue
        sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
        fsim[1:] = [fun(v) for v in sim[1:]]
        nfev += n
    best = int(np.argmin(fsim))
    return SimplexResult(sim[best].copy(), float(fsim[best]), nfev, nit, converged)


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitResult:
    estimate: ParameterVector
    objective: float
    n_pairs: int
    iterations: int
    converged: bool
    identifiability_notes: tuple = ()
    n_evals: int = 0
    family: str = "M1"

    def model(self) -> AsymmetricCovariance:
        return self.estimate.to_model(self.family)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "variant": self.estimate.variant.label,
            "estimate": self.estimate.as_dict(),
            "objective": self.objective,
            "n_pairs": self.n_pairs,
            "iterations": self.iterations,
            "n_evals": self.n_evals,
            "converged": self.converged,
            "identifiability_notes": list(self.identifiability_notes),
            "n_parameters": len(self.estimate.values),
        }


def auto_init(family: str, variant: Variant, data: ObservationSet) -> ParameterVector:
    """Moment-based starting point.

    Variances from per-variable sample variances, rho from collocated pairs,
    scales at a third of the median pairwise distance, ``eta = 0.05`` and both
    axis angles at ``pi / 2``.
    """
    if len(data) == 0:
        raise EstimationError("no observations")
    s2 = []
    for v in (1, 2):
        z = data.values[data.vars == v]
        if z.size < 2:
            raise EstimationError(f"variable {v} has fewer than 2 observations")
        s2.append(float(np.var(z, ddof=1)))
    rho = 0.0
    by_site = {}
    for sid, v, z in zip(data.site_ids, data.vars, data.values):
        by_site.setdefault(int(sid), {})[int(v)] = z
    pairs = np.array([(d[1], d[2]) for d in by_site.values() if 1 in d and 2 in d])
    if len(pairs) >= 2:
        rho = float(np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1])
        if not np.isfinite(rho):
            rho = 0.0
    dist = distance_matrix(np.unique(np.round(data.sites, 12), axis=0))
    iu = np.triu_indices(dist.shape[0], k=1)
    med = float(np.median(dist[iu])) if iu[0].size else 1.0
    c0 = med / 3.0
    doc = {"sigma2_1": s2[0], "sigma2_2": s2[1], "rho12": rho, "c": c0, "c11": c0, "c22": c0,
           "eta": 0.05, "alpha1": np.pi / 2, "alpha2": np.pi / 2}
    return ParameterVector.from_dict(variant, doc, data.dim)


def _repair(family: str, pv: ParameterVector, notes: list) -> ParameterVector:
    """Shrink rho towards 0 until the start point satisfies the validity conditions."""
    d = pv.as_dict()
    for _ in range(200):
        cand = ParameterVector.from_dict(pv.variant, d, pv.dim)
        try:
            if validate_params(cand.to_model(family).base):
                return cand
        except ValueError:
            pass
        d["rho12"] *= 0.9
        for k in ("sigma2_1", "sigma2_2", "c", "c11", "c22"):
            if k in d and not (np.isfinite(d[k]) and d[k] > 0):
                d[k] = 0.1
    notes.append("start point could not be repaired")
    return pv


def embed_parameters(pv: ParameterVector, target: Variant, eta: float = 0.0,
                     alpha1: float = np.pi / 2, alpha2: float = np.pi / 2) -> ParameterVector:
    """Express a fit of a nested variant as a point of a larger ``target`` variant.

    A separable scale fills both marginal scales and a symmetric fit gains the
    given rotation (``eta = 0`` reproduces the nested model's objective).
    """
    if (pv.variant.asymmetric and not target.asymmetric) or (not pv.variant.separable and target.separable):
        raise EstimationError(f"{pv.variant.label} is not nested in {target.label}")
    doc = dict(eta=eta, alpha1=alpha1, alpha2=alpha2)
    doc.update(pv.as_dict())
    return ParameterVector.from_dict(target, doc, pv.dim)


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` roughly uniform unit vectors on S^2 as ``(alpha1, alpha2)`` rows."""
    k = np.arange(n) + 0.5
    alpha2 = np.arccos(1.0 - 2.0 * k / n)
    alpha1 = (np.pi * (1.0 + 5.0 ** 0.5) * k) % TWO_PI
    return np.column_stack([alpha1, alpha2])


def asymmetry_scan(family: str, variant: Variant, cl: CompositeLikelihood,
                   symmetric: ParameterVector, etas=(0.1, 0.3, 0.6, 1.0, 1.6),
                   n_axes: int = 24, rho_boost=(1.0, 1.5), keep: int = 2) -> list:
    """Coarse grid search over the rotation, holding the symmetric fit's other parameters.

    Rotation decorrelates collocated pairs, so a symmetric fit underestimates
    ``rho``; each grid point is also tried with ``rho`` inflated by the
    factors in ``rho_boost`` (capped at 0.95). Returns the ``keep`` best grid
    points as parameter vectors of ``variant``, best first.
    """
    if not variant.asymmetric:
        raise EstimationError("asymmetry scan needs an asymmetric variant")
    base = symmetric.as_dict()
    dim = cl.data.dim
    axes = fibonacci_directions(n_axes) if dim == 2 else np.zeros((1, 2))
    signed = [e for eta in etas for e in ((eta, -eta) if dim == 1 else (eta,))]
    scored = []
    for boost in rho_boost:
        rho = float(np.clip(base["rho12"] * boost, -0.95, 0.95))
        for eta in signed:
            for a1, a2 in axes:
                doc = dict(base, rho12=rho, eta=eta, alpha1=a1, alpha2=a2)
                pv = ParameterVector.from_dict(variant, doc, dim)
                try:
                    val = cl(pv.to_model(family))
                except ValueError:
                    continue
                if np.isfinite(val):
                    scored.append((val, len(scored), pv))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [pv for _, _, pv in scored[:keep]]


def fit(family: str, variant, data: ObservationSet, cutoff: float = 1.0,
        init: Optional[ParameterVector] = None, budget: int = 5000, starts: int = 5,
        seed: int = 0, include_collocated: bool = True, step: float = 0.5,
        perturb_scale: float = 0.5, objective: Optional[CompositeLikelihood] = None,
        extra_starts=()) -> FitResult:
    """Maximize the pairwise CL of a bivariate preset model.

    Runs ``starts`` simplex searches: one from ``init`` (or :func:`auto_init`)
    and the rest from Gaussian perturbations of it in unconstrained
    coordinates, followed by one search from each of ``extra_starts``.
    ``budget`` caps objective evaluations per start; with ``budget=0`` the
    start point is returned as is.
    """
    if isinstance(variant, str):
        variant = Variant.parse(variant)
    if data.p < 2 or not {1, 2} <= set(np.unique(data.vars).tolist()):
        raise EstimationError("bivariate fits need observations of variables 1 and 2")
    cl = objective if objective is not None else CompositeLikelihood(data, cutoff, include_collocated)
    dim = data.dim
    notes: list = []
    start = init if init is not None else auto_init(family, variant, data)
    start = _repair(family, start, notes)

    def negcl(u):
        pv = ParameterVector.from_unconstrained(variant, u, dim)
        try:
            model = pv.to_model(family)
        except ValueError:
            return np.inf
        val = cl(model)
        return -val if np.isfinite(val) else np.inf

    u0 = start.to_unconstrained()
    if budget <= 0:
        val = cl(start.to_model(family))
        return FitResult(start, float(val), cl.n_pairs, 0, False, tuple(notes), 1, family)

    rng = np.random.default_rng([int(seed), 7919])
    points = [u0 if s == 0 else u0 + perturb_scale * rng.standard_normal(u0.size)
              for s in range(max(1, starts))]
    for pv in extra_starts:
        if pv.variant != variant:
            raise EstimationError(f"extra start is {pv.variant.label}, expected {variant.label}")
        points.append(_repair(family, pv, notes).to_unconstrained())
    best = None
    total_evals = total_iters = 0
    for s, x0 in enumerate(points):
        res = nelder_mead(negcl, x0, step=step, max_evals=budget)
        total_evals += res.nfev
        total_iters += res.nit
        logger.debug("start %d: -CL=%.6f converged=%s nfev=%d", s, res.fun, res.converged, res.nfev)
        if best is None or res.fun < best.fun:
            best = res
    est = ParameterVector.from_unconstrained(variant, best.x, dim)
    d = est.as_dict()
    if variant.asymmetric and dim == 2:
        if d["eta"] < 0.01:
            notes.append("eta < 0.01: rotation axis angles unidentifiable")
        if min(d["alpha2"], np.pi - d["alpha2"]) < 1e-6:
            notes.append("alpha2 at a pole: alpha1 free")
    objective_value = -best.fun if np.isfinite(best.fun) else -np.inf
    return FitResult(est, float(objective_value), cl.n_pairs, total_iters,
                     bool(best.converged and np.isfinite(best.fun)), tuple(notes), total_evals, family)
