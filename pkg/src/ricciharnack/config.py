"""
Experiment configuration (TOML).

Schema, all tables optional except ``[geometry]``::

    [geometry]
    family = "flat_torus"        # sphere | flat_torus | conformal_torus
    n = 2                        # sphere / flat torus dimension
    resolution = 64              # nodes per axis (sphere: polar nodes)
    lengths = [6.283185307179586, 6.283185307179586]
    r0 = 1.0                     # sphere initial radius
    phi0 = [[0.1, 1, 0]]         # conformal factor: sum of a * sin(kx x + ky y)

    [flow]
    T = 0.3
    dt = 0.0025

    [terminal]
    profile = "heat_kernel"      # gaussian | heat_kernel | constant | trig
    tau1 = 0.05
    center = [3.141592653589793, 3.141592653589793]
    amplitude = 0.5              # trig only
    value = 1.0                  # constant / trig scale

    [checks]
    select = ["all"]             # identities | harnack | ratio | localize | all
    tolerance = "auto"           # "auto" or a number A in tol = A (h^2 + dt^2)
    pairs = 100
    seed = 7
    region_radius = 1.5707963267948966   # ball for Gaussian-data residuals

    [localization]
    rho = 1.5707963267948966
    delta = 0.0625
    center = [3.141592653589793, 3.141592653589793]

    [output]
    dir = "out"
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, replace

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from .geometry import ConformalTorus2D, FlatTorus, RoundSphere
from .localization import validate_localization
from .ricci_flow import SPHERE_GUARD, extinction_time

OUT_ENV = "RICCIHARNACK_OUT"
CHECKS = ("identities", "harnack", "ratio", "localize")
FAMILIES = ("sphere", "flat_torus", "conformal_torus")
PROFILES = ("gaussian", "heat_kernel", "constant", "trig")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class GeometryConfig:
    family: str = "flat_torus"
    n: int = 2
    resolution: int = 64
    lengths: tuple = (2 * math.pi, 2 * math.pi)
    r0: float = 1.0
    phi0: tuple = ((0.1, 1, 0),)


@dataclass
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    T: float = 0.3
    dt: float = 0.0025
    profile: str = "heat_kernel"
    tau1: float = 0.05
    center: tuple | None = None
    amplitude: float = 0.5
    value: float = 1.0
    select: tuple = ("all",)
    tolerance: object = "auto"
    pairs: int = 100
    seed: int = 7
    region_radius: float | None = None
    rho: float | None = None
    delta: float | None = None
    loc_center: tuple | None = None
    out: str | None = None

    # -- derived -------------------------------------------------------

    @property
    def dim(self) -> int:
        return 2 if self.geometry.family == "conformal_torus" else int(self.geometry.n)

    @property
    def checks(self) -> tuple:
        sel = tuple(self.select)
        return CHECKS if "all" in sel else tuple(c for c in CHECKS if c in sel)

    @property
    def t1(self) -> float:
        return self.T - self.tau1

    def default_center(self):
        if self.center is not None:
            return tuple(float(v) for v in self.center)
        if self.geometry.family == "sphere":
            return (0.0,)
        return tuple(0.5 * L for L in self._lengths())

    def localization_center(self):
        return tuple(float(v) for v in self.loc_center) if self.loc_center is not None else self.default_center()

    def localization_rho(self) -> float:
        if self.rho is not None:
            return float(self.rho)
        if self.geometry.family == "sphere":
            return 0.25 * math.pi * self.geometry.r0
        return 0.25 * min(self._lengths())

    def localization_delta(self) -> float:
        return float(self.delta) if self.delta is not None else 1.0 / (8 * self.dim)

    def ball_radius(self) -> float | None:
        """Radius of the ball around the terminal center used for residual norms.

        Concentrated terminal data are not resolved near the cut locus of
        the center, so by default Gaussian-type profiles are checked on a
        quarter-period ball (half the polar range on the sphere); smooth
        profiles use the whole grid.
        """
        if self.region_radius is not None:
            return float(self.region_radius)
        if self.profile in ("constant", "trig"):
            return None
        if self.geometry.family == "sphere":
            return 0.5 * math.pi * self.geometry.r0
        return 0.25 * min(self._lengths())

    def _lengths(self):
        g = self.geometry
        if g.family == "conformal_torus":
            return tuple(g.lengths[:2])
        return tuple(g.lengths)

    def geometry_spec(self, resolution: int | None = None):
        g = self.geometry
        N = int(resolution or g.resolution)
        if g.family == "sphere":
            return RoundSphere(n=int(g.n), r0=float(g.r0), size=N)
        if g.family == "flat_torus":
            return FlatTorus(n=int(g.n), lengths=tuple(g.lengths), sizes=(N,) * int(g.n))
        terms = [tuple(t) for t in g.phi0]

        def phi0(x, y):
            return sum(a * np.sin(kx * x + ky * y) for a, kx, ky in terms) + 0.0 * x

        return ConformalTorus2D(sizes=(N, N), phi0=phi0, lengths=tuple(g.lengths[:2]))

    def output_dir(self, override=None) -> str:
        return override or self.out or os.environ.get(OUT_ENV) or "ricciharnack-out"

    def with_resolution(self, N: int) -> "ExperimentConfig":
        return replace(self, geometry=replace(self.geometry, resolution=int(N)))

    def echo(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def validate(cfg: ExperimentConfig) -> list:
    """Every violated precondition, as readable messages."""
    problems = []
    g = cfg.geometry
    if g.family not in FAMILIES:
        problems.append(f"geometry.family must be one of {FAMILIES} (got {g.family!r})")
    if g.resolution < 8:
        problems.append(f"geometry.resolution must be >= 8 (got {g.resolution})")
    if g.family == "sphere":
        if g.n < 2:
            problems.append(f"geometry.n must be >= 2 on the sphere (got {g.n})")
        if not g.r0 > 0:
            problems.append(f"geometry.r0 must be positive (got {g.r0})")
        elif g.n >= 2 and cfg.T > SPHERE_GUARD * extinction_time(g.n, g.r0):
            problems.append(
                f"flow.T = {cfg.T} exceeds {SPHERE_GUARD} x extinction time {extinction_time(g.n, g.r0)}"
            )
    elif g.family == "flat_torus":
        if g.n < 1:
            problems.append(f"geometry.n must be >= 1 (got {g.n})")
        if len(g.lengths) != g.n:
            problems.append(f"geometry.lengths needs {g.n} entries (got {len(g.lengths)})")
    if g.family in ("flat_torus", "conformal_torus") and any(not L > 0 for L in g.lengths):
        problems.append("geometry.lengths must be positive")
    if g.family == "conformal_torus":
        if len(g.lengths) < 2:
            problems.append("geometry.lengths needs 2 entries on the conformal torus")
        for t in g.phi0:
            if len(t) != 3:
                problems.append(f"geometry.phi0 terms are [amplitude, kx, ky] (got {list(t)})")
    if not cfg.T > 0:
        problems.append(f"flow.T must be positive (got {cfg.T})")
    if not cfg.dt > 0:
        problems.append(f"flow.dt must be positive (got {cfg.dt})")
    elif cfg.T > 0 and cfg.T / cfg.dt < 20:
        problems.append(f"flow.T / flow.dt must be at least 20 (got {cfg.T / cfg.dt:.3g})")
    if cfg.profile not in PROFILES:
        problems.append(f"terminal.profile must be one of {PROFILES} (got {cfg.profile!r})")
    if cfg.profile == "heat_kernel" and g.family != "flat_torus":
        problems.append("terminal.profile = 'heat_kernel' needs geometry.family = 'flat_torus'")
    if not 0 < cfg.tau1 < cfg.T:
        problems.append(f"terminal.tau1 must lie in (0, T) (got {cfg.tau1})")
    if cfg.profile == "trig" and not abs(cfg.amplitude) < 1:
        problems.append(f"terminal.amplitude must be below 1 in magnitude (got {cfg.amplitude})")
    if not cfg.value > 0:
        problems.append(f"terminal.value must be positive (got {cfg.value})")
    for c in cfg.select:
        if c not in CHECKS + ("all",):
            problems.append(f"checks.select entries must be in {CHECKS + ('all',)} (got {c!r})")
    if not (cfg.tolerance == "auto" or (isinstance(cfg.tolerance, (int, float)) and cfg.tolerance > 0)):
        problems.append(f"checks.tolerance must be 'auto' or a positive number (got {cfg.tolerance!r})")
    if cfg.pairs < 1:
        problems.append(f"checks.pairs must be >= 1 (got {cfg.pairs})")
    if not 0 <= cfg.seed < 2**64:
        problems.append(f"checks.seed must be an unsigned 64-bit integer (got {cfg.seed})")
    if g.family in FAMILIES:
        problems.extend(f"localization: {p}" for p in validate_localization(cfg.localization_rho(), cfg.localization_delta(), cfg.dim))
    return problems


def _tuple(v):
    if isinstance(v, list):
        return tuple(_tuple(x) for x in v)
    return v


def from_dict(data: dict) -> ExperimentConfig:
    known = {"geometry", "flow", "terminal", "checks", "localization", "output"}
    unknown = set(data) - known
    problems = [f"unknown table [{k}]" for k in sorted(unknown)]
    geo = dict(data.get("geometry", {}))
    gdefaults = GeometryConfig()
    family = geo.get("family", gdefaults.family)
    n = int(geo.get("n", 2))
    lengths = geo.get("lengths")
    if lengths is None:
        lengths = (2 * math.pi,) * (2 if family == "conformal_torus" else n)
    gcfg = GeometryConfig(
        family=family,
        n=n,
        resolution=int(geo.get("resolution", gdefaults.resolution)),
        lengths=tuple(float(v) for v in lengths),
        r0=float(geo.get("r0", 1.0)),
        phi0=_tuple(geo.get("phi0", [list(t) for t in gdefaults.phi0])),
    )
    flow = data.get("flow", {})
    term = data.get("terminal", {})
    checks = data.get("checks", {})
    loc = data.get("localization", {})
    out = data.get("output", {})
    select = checks.get("select", ["all"])
    if isinstance(select, str):
        select = [select]
    cfg = ExperimentConfig(
        geometry=gcfg,
        T=float(flow.get("T", 0.3)),
        dt=float(flow.get("dt", 0.0025)),
        profile=term.get("profile", {"flat_torus": "heat_kernel", "sphere": "gaussian"}.get(family, "trig")),
        tau1=float(term.get("tau1", 0.05)),
        center=_tuple(term.get("center")),
        amplitude=float(term.get("amplitude", 0.5)),
        value=float(term.get("value", 1.0)),
        select=tuple(select),
        tolerance=checks.get("tolerance", "auto"),
        pairs=int(checks.get("pairs", 100)),
        seed=int(checks.get("seed", 7)),
        region_radius=checks.get("region_radius"),
        rho=loc.get("rho"),
        delta=loc.get("delta"),
        loc_center=_tuple(loc.get("center")),
        out=out.get("dir"),
    )
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return from_dict(tomllib.load(fh))
