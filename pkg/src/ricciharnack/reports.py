"""Result containers shared by the verification modules."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ResidualReport:
    """Max-norm and L2-norm residuals of named identities.

    ``norms[name] = (max_abs, l2)``. ``scales[name]`` is the max magnitude of
    the individual terms entering the identity, useful for relative readings.
    """

    norms: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def add(self, name, residual, weights=None, scale=None):
        residual = np.asarray(residual, dtype=float)
        mx = float(np.max(np.abs(residual))) if residual.size else 0.0
        if weights is None:
            l2 = float(np.sqrt(np.mean(residual**2))) if residual.size else 0.0
        else:
            w = np.broadcast_to(weights, residual.shape)
            l2 = float(np.sqrt(np.sum(w * residual**2) / np.sum(w)))
        self.norms[name] = (mx, l2)
        if scale is not None:
            self.scales[name] = float(scale)
        return self

    def max(self, name) -> float:
        return self.norms[name][0]

    def l2(self, name) -> float:
        return self.norms[name][1]

    def __getitem__(self, name):
        return self.norms[name][0]

    def names(self):
        return list(self.norms)


def convergence(coarse: ResidualReport, fine: ResidualReport, refinement: float = 2.0) -> dict:
    """Per-identity (ratio, order) of max-norm residuals between two resolutions."""
    out = {}
    for name in coarse.norms:
        if name not in fine.norms:
            continue
        a, b = coarse.max(name), fine.max(name)
        if b == 0.0:
            ratio = math.inf if a > 0 else 1.0
        else:
            ratio = a / b
        order = math.log(ratio, refinement) if 0 < ratio < math.inf else (math.inf if ratio == math.inf else 0.0)
        out[name] = (ratio, order)
    fine.ratios.update(out)
    return out


@dataclass
class HarnackReport:
    """Per-point values of a checked quantity with sign statistics.

    A violation is a value above ``tol`` when ``sense == "le0"`` (quantity
    should be nonpositive) or below ``-tol`` when ``sense == "ge0"`` (a margin
    that should be nonnegative).
    """

    name: str
    values: np.ndarray
    tol: float = 0.0
    sense: str = "le0"
    locations: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.sense not in ("le0", "ge0"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.values.size else math.nan

    @property
    def min(self) -> float:
        return float(np.min(self.values)) if self.values.size else math.nan

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values.size else math.nan

    @property
    def violations(self) -> np.ndarray:
        if self.sense == "le0":
            bad = self.values > self.tol
        else:
            bad = self.values < -self.tol
        return np.flatnonzero(bad)

    @property
    def violation_count(self) -> int:
        return int(self.violations.size)

    @property
    def passed(self) -> bool:
        return self.values.size > 0 and self.violation_count == 0

    def summary(self) -> dict:
        return {
            "name": self.name,
            "count": int(self.values.size),
            "max": self.max,
            "min": self.min,
            "mean": self.mean,
            "tol": self.tol,
            "sense": self.sense,
            "violations": self.violation_count,
            **self.meta,
        }

    def write_csv(self, path) -> None:
        extra = list(self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "location", "value", *extra])
            for i, v in enumerate(self.values):
                loc = self.locations[i] if i < len(self.locations) else ""
                w.writerow([i, _fmt_loc(loc), repr(float(v)), *(repr(float(self.columns[c][i])) for c in extra)])
            w.writerow([])
            for key, val in self.summary().items():
                w.writerow([f"# {key}", val if not isinstance(val, float) else repr(val)])


def _fmt_loc(loc):
    if isinstance(loc, (tuple, list)):
        return " ".join(_fmt_loc(v) for v in loc)
    if isinstance(loc, float):
        return repr(loc)
    return str(loc)
