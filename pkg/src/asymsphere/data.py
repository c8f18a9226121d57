"""Observation sets and their CSV/JSON representation."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import angle_to_xy, as_points, lonlat_to_xyz, xy_to_angle, xyz_to_lonlat


class IngestionError(ValueError):
    """Raised when an observation file cannot be parsed; names the offending row."""


@dataclass
class ObservationSet:
    """Observed values of a p-variate field.

    ``sites`` is ``(n, d + 1)``, ``vars`` holds 1-based variable labels and
    ``values`` the observations; row ``k`` of each belongs together.
    """

    sites: np.ndarray
    vars: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    site_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sites = as_points(self.sites)
        self.vars = np.asarray(self.vars, dtype=int).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        n = self.sites.shape[0]
        if not (self.vars.size == n == self.values.size):
            raise ValueError(f"length mismatch: {n} sites, {self.vars.size} vars, "
                             f"{self.values.size} values")
        if n and self.vars.min() < 1:
            raise ValueError("variable labels are 1-based")
        _, first, inverse = np.unique(np.round(self.sites, 12), axis=0,
                                      return_index=True, return_inverse=True)
        # relabel so site ids follow order of first appearance
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        self.site_ids = rank[np.asarray(inverse).reshape(-1)]

    def __len__(self) -> int:
        return self.values.size

    @property
    def dim(self) -> int:
        return self.sites.shape[1] - 1

    @property
    def p(self) -> int:
        return int(self.vars.max()) if len(self) else 0

    @property
    def n_sites(self) -> int:
        return int(self.site_ids.max()) + 1 if len(self) else 0

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return ObservationSet(self.sites[mask], self.vars[mask], self.values[mask], dict(self.meta))

    def with_values(self, values) -> "ObservationSet":
        return ObservationSet(self.sites, self.vars, values, dict(self.meta))

    def index_of(self, var: int, site_id: int) -> int:
        hit = np.flatnonzero((self.vars == var) & (self.site_ids == site_id))
        if hit.size == 0:
            raise KeyError(f"no observation of variable {var} at site {site_id}")
        return int(hit[0])

    def same_layout(self, other: "ObservationSet") -> bool:
        return (self.sites.shape == other.sites.shape
                and np.array_equal(self.sites, other.sites)
                and np.array_equal(self.vars, other.vars))


def write_csv(obs: ObservationSet, path, sidecar: Optional[dict] = None) -> Path:
    """Write ``lon_deg, lat_deg, var, value`` (S^2) or ``angle_rad, var, value`` (S^1).

    Floats are written with ``repr`` so values round-trip exactly. ``sidecar``,
    when given, is stored next to the CSV as ``<name>.json``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        if obs.dim == 2:
            lon, lat = xyz_to_lonlat(obs.sites)
            w.writerow(["lon_deg", "lat_deg", "var", "value"])
            for a, b, v, z in zip(lon, lat, obs.vars, obs.values):
                w.writerow([repr(float(a)), repr(float(b)), int(v), repr(float(z))])
        else:
            ang = xy_to_angle(obs.sites)
            w.writerow(["angle_rad", "var", "value"])
            for a, v, z in zip(ang, obs.vars, obs.values):
                w.writerow([repr(float(a)), int(v), repr(float(z))])
    os.replace(tmp, path)
    if sidecar is not None:
        write_json(path.with_suffix(".json"), sidecar)
    return path


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        val = float(text)
    except (TypeError, ValueError):
        raise IngestionError(f"row {row}: column {col!r} is not numeric: {text!r}") from None
    if not math.isfinite(val):
        raise IngestionError(f"row {row}: column {col!r} is not finite: {text!r}")
    return val


def read_csv(path, min_rows: int = 1) -> ObservationSet:
    """Parse an observation CSV; rows are numbered from 2 (after the header)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        if {"lon_deg", "lat_deg", "var", "value"} <= set(header):
            coord_cols = ("lon_deg", "lat_deg")
        elif {"angle_rad", "var", "value"} <= set(header):
            coord_cols = ("angle_rad",)
        else:
            raise IngestionError(
                f"{path}: missing columns; need lon_deg, lat_deg, var, value "
                f"or angle_rad, var, value (got {header})")
        coords, vars_, values = [], [], []
        for row_no, row in enumerate(reader, start=2):
            c = [_parse_float(row.get(col), row_no, col) for col in coord_cols]
            v = _parse_float(row.get("var"), row_no, "var")
            if v != int(v) or v < 1:
                raise IngestionError(f"row {row_no}: var must be a positive integer, got {row.get('var')!r}")
            coords.append(c)
            vars_.append(int(v))
            values.append(_parse_float(row.get("value"), row_no, "value"))
    if len(values) < min_rows:
        raise IngestionError(f"{path}: {len(values)} observations, need at least {min_rows}")
    coords = np.asarray(coords, dtype=float)
    if coord_cols == ("lon_deg", "lat_deg"):
        sites = lonlat_to_xyz(coords[:, 0], coords[:, 1])
    else:
        sites = angle_to_xy(coords[:, 0])
    return ObservationSet(sites, np.asarray(vars_), np.asarray(values))


def write_json(path, doc) -> Path:
    """Atomically write ``doc`` as sorted, indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path
