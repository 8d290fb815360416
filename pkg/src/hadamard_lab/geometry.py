"""Graph-bounded strip domains, their perturbations and the normal displacement.

Every domain has the form ``{(x, y) : 0 < x < T, h(x) < y < R}``; only the
bottom graph ``h`` is ever perturbed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import AmplitudeTooLarge, LadderTooShort, NoIntersection


# ---------------------------------------------------------------------------
# periodic waveforms (period 1, values in [0, 1])
# ---------------------------------------------------------------------------

def _cos_eta(X):
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * X))


def _cos_deta(X):
    return np.pi * np.sin(2.0 * np.pi * X)


def _tent_eta(X):
    t = np.mod(X, 1.0)
    return np.where(t < 0.25, 8.0 * t**2,
                    np.where(t < 0.75, 1.0 - 8.0 * (t - 0.5) ** 2, 8.0 * (1.0 - t) ** 2))


def _tent_deta(X):
    t = np.mod(X, 1.0)
    return np.where(t < 0.25, 16.0 * t,
                    np.where(t < 0.75, -16.0 * (t - 0.5), -16.0 * (1.0 - t)))


@dataclass(frozen=True)
class Waveform:
    name: str
    eta: object
    deta: object
    mean: float
    lo: float
    hi: float
    slope_max: float


WAVEFORMS = {
    "cos": Waveform("cos", _cos_eta, _cos_deta, 0.5, 0.0, 1.0, math.pi),
    # C^1 piecewise quadratic
    "tent": Waveform("tent", _tent_eta, _tent_deta, 0.5, 0.0, 1.0, 4.0),
}


def waveform(name: str) -> Waveform:
    try:
        return WAVEFORMS[name]
    except KeyError:
        raise ValueError(f"unknown waveform {name!r}; expected one of {sorted(WAVEFORMS)}") from None


# ---------------------------------------------------------------------------
# boundary profiles
# ---------------------------------------------------------------------------

class Family(str, Enum):
    FLAT = "flat"
    SMOOTH_BUMP = "smooth_bump"
    OSCILLATORY = "oscillatory"
    UNIFORM_SHIFT = "uniform_shift"


def _bump(t):
    """C-infinity bump exp(1 - 1/(1-t^2)) supported on |t| < 1, peak 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    s = np.where(inside, 1.0 - t**2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / s), 0.0)


def _dbump(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    s = np.where(inside, 1.0 - t**2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / s) * (-2.0 * t / s**2), 0.0)


@dataclass(frozen=True)
class BoundaryProfile:
    """Bottom graph ``y = h(x)``.

    ``amplitude`` is the bump height, the oscillation amplitude ``d`` or the
    shift amount depending on ``family``.  ``shape`` selects the bump kind
    (``"gaussian"`` or ``"compact"``) and ``waveform`` the periodic profile of
    the oscillatory family.  A profile may sit on top of a ``base`` profile.
    """

    family: Family = Family.FLAT
    amplitude: float = 0.0
    center: float = 0.5
    width: float = 0.125
    shape: str = "gaussian"
    wavelength: float = 1.0
    waveform: str = "cos"
    base: Optional["BoundaryProfile"] = None

    # constructors -------------------------------------------------------
    @classmethod
    def flat(cls) -> "BoundaryProfile":
        return cls(Family.FLAT)

    @classmethod
    def uniform_shift(cls, amount: float) -> "BoundaryProfile":
        """``h = -amount``: a positive amount lowers the bottom (domain grows)."""
        return cls(Family.UNIFORM_SHIFT, amplitude=float(amount))

    @classmethod
    def smooth_bump(cls, amplitude: float, center: float, width: float,
                    shape: str = "gaussian") -> "BoundaryProfile":
        if shape not in ("gaussian", "compact"):
            raise ValueError(f"unknown bump shape {shape!r}")
        return cls(Family.SMOOTH_BUMP, amplitude=float(amplitude), center=float(center),
                   width=float(width), shape=shape)

    @classmethod
    def oscillatory(cls, amplitude: float, wavelength: float,
                    waveform: str = "cos") -> "BoundaryProfile":
        if waveform not in WAVEFORMS:
            raise ValueError(f"unknown waveform {waveform!r}")
        return cls(Family.OSCILLATORY, amplitude=float(amplitude),
                   wavelength=float(wavelength), waveform=waveform)

    def on(self, base: Optional["BoundaryProfile"]) -> "BoundaryProfile":
        if base is None or (base.family is Family.FLAT and base.base is None):
            return replace(self, base=None)
        return replace(self, base=base)

    def scaled(self, factor: float) -> "BoundaryProfile":
        """Own term multiplied by ``factor`` (the base is kept as is)."""
        return replace(self, amplitude=self.amplitude * factor)

    # evaluation ---------------------------------------------------------
    def _own(self, x):
        x = np.asarray(x, dtype=float)
        f = self.family
        if f is Family.FLAT:
            return np.zeros_like(x)
        if f is Family.UNIFORM_SHIFT:
            return np.full_like(x, -self.amplitude)
        if f is Family.SMOOTH_BUMP:
            t = (x - self.center) / self.width
            g = np.exp(-(t**2)) if self.shape == "gaussian" else _bump(t)
            return self.amplitude * g
        w = WAVEFORMS[self.waveform]
        return self.amplitude * w.eta(x / self.wavelength)

    def _own_slope(self, x):
        x = np.asarray(x, dtype=float)
        f = self.family
        if f in (Family.FLAT, Family.UNIFORM_SHIFT):
            return np.zeros_like(x)
        if f is Family.SMOOTH_BUMP:
            t = (x - self.center) / self.width
            dg = -2.0 * t * np.exp(-(t**2)) if self.shape == "gaussian" else _dbump(t)
            return self.amplitude * dg / self.width
        w = WAVEFORMS[self.waveform]
        return self.amplitude / self.wavelength * w.deta(x / self.wavelength)

    def __call__(self, x):
        v = self._own(x)
        return v if self.base is None else v + self.base(x)

    def slope(self, x):
        """Closed-form derivative h'(x)."""
        v = self._own_slope(x)
        return v if self.base is None else v + self.base.slope(x)

    @property
    def is_flat(self) -> bool:
        return self.family is Family.FLAT and self.base is None

    def sample_points(self, T: float, n: int = 4096) -> np.ndarray:
        """Abscissae dense enough to resolve every oscillation of the profile."""
        m = n
        p: Optional[BoundaryProfile] = self
        while p is not None:
            if p.family is Family.OSCILLATORY:
                m = max(m, int(64 * T / p.wavelength) + 1)
            p = p.base
        return np.linspace(0.0, T, m)

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"family": self.family.value, "amplitude": self.amplitude}
        if self.family is Family.SMOOTH_BUMP:
            d.update(center=self.center, width=self.width, shape=self.shape)
        elif self.family is Family.OSCILLATORY:
            d.update(wavelength=self.wavelength, waveform=self.waveform)
        if self.base is not None:
            d["base"] = self.base.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryProfile":
        base = cls.from_dict(d["base"]) if d.get("base") else None
        kw = {k: d[k] for k in ("amplitude", "center", "width", "shape", "wavelength", "waveform")
              if k in d}
        return cls(Family(d.get("family", "flat")), base=base, **kw)


class SideCondition(str, Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class DomainSpec:
    width: float = 1.0
    height: float = 1.0
    bottom: BoundaryProfile = field(default_factory=BoundaryProfile.flat)
    side_condition: SideCondition = SideCondition.PERIODIC

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width and height must be positive")
        x = self.bottom.sample_points(self.width, 1025)
        if np.max(np.abs(self.bottom(x))) >= self.height / 2:
            raise AmplitudeTooLarge("sup|h| must stay below R/2")

    @property
    def T(self) -> float:
        return self.width

    @property
    def R(self) -> float:
        return self.height

    def with_bottom(self, bottom: BoundaryProfile) -> "DomainSpec":
        return replace(self, bottom=bottom)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "bottom": self.bottom.to_dict(),
                "side_condition": self.side_condition.value}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(width=float(d.get("width", 1.0)), height=float(d.get("height", 1.0)),
                   bottom=BoundaryProfile.from_dict(d.get("bottom", {"family": "flat"})),
                   side_condition=SideCondition(d.get("side_condition", "periodic")))


# ---------------------------------------------------------------------------
# regimes and pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    kind: str  # "lipschitz" | "c1" | "c1alpha" | "smooth"
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("lipschitz", "c1", "c1alpha", "smooth"):
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.kind == "c1alpha" and not (self.alpha is not None and 0.0 < self.alpha < 1.0):
            raise ValueError("C1Alpha regime needs alpha in (0, 1)")

    @classmethod
    def parse(cls, text: str) -> "Regime":
        t = text.strip().lower().replace("_", "")
        if t.startswith("c1alpha"):
            a = t[len("c1alpha"):].strip("(): =")
            return cls("c1alpha", float(a) if a else 0.5)
        return cls(t)

    def __str__(self) -> str:
        return f"c1alpha({self.alpha:g})" if self.kind == "c1alpha" else self.kind

    def wavelength(self, d: float) -> Optional[float]:
        """Oscillation wavelength delta(d) for the oscillatory regimes."""
        if self.kind == "lipschitz":
            return d
        if self.kind == "c1":
            # d = o(delta); see the decisions ledger
            return math.sqrt(d)
        if self.kind == "c1alpha":
            return d ** (1.0 - self.alpha)
        return None


@dataclass(frozen=True)
class DomainPair:
    reference: DomainSpec
    perturbed: DomainSpec
    d: float
    regime: Regime
    delta: Optional[float] = None
    shape: Optional[BoundaryProfile] = None
    waveform: str = "cos"

    def __post_init__(self):
        r, p = self.reference, self.perturbed
        if (r.width, r.height, r.side_condition) != (p.width, p.height, p.side_condition):
            raise ValueError("reference and perturbed domains must share T, R and side condition")

    @property
    def h1(self) -> BoundaryProfile:
        return self.reference.bottom

    @property
    def h2(self) -> BoundaryProfile:
        return self.perturbed.bottom

    @property
    def T(self) -> float:
        return self.reference.width

    @property
    def R(self) -> float:
        return self.reference.height

    @property
    def n_cells(self) -> Optional[int]:
        return None if self.delta is None else int(round(self.T / self.delta))

    def sample_points(self, n: int = 4096) -> np.ndarray:
        a = self.h1.sample_points(self.T, n)
        b = self.h2.sample_points(self.T, n)
        return a if a.size >= b.size else b

    def to_dict(self) -> dict:
        return {"reference": self.reference.to_dict(), "perturbed": self.perturbed.to_dict(),
                "d": self.d, "regime": str(self.regime), "delta": self.delta,
                "shape": None if self.shape is None else self.shape.to_dict(),
                "waveform": self.waveform}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainPair":
        return cls(reference=DomainSpec.from_dict(d["reference"]),
                   perturbed=DomainSpec.from_dict(d["perturbed"]),
                   d=float(d["d"]), regime=Regime.parse(d["regime"]),
                   delta=None if d.get("delta") is None else float(d["delta"]),
                   shape=None if d.get("shape") is None else BoundaryProfile.from_dict(d["shape"]),
                   waveform=d.get("waveform", "cos"))


def default_bump(T: float) -> BoundaryProfile:
    return BoundaryProfile.smooth_bump(1.0, 0.5 * T, 0.125 * T)


def make_perturbation(base: DomainSpec, regime: Regime | str, d: float, *,
                      shape: Optional[BoundaryProfile] = None,
                      waveform: str = "cos") -> DomainPair:
    """Build the pair (base, perturbed base) for perturbation size ``d``.

    Smooth regime: ``h2 = h1 + d*g`` with ``g = shape`` (a unit-amplitude
    profile, Gaussian bump by default).  Oscillatory regimes:
    ``h2 = h1 + d*eta(x/delta)`` with ``delta`` snapped to ``T/N``, ``N >= 4``.
    In the Lipschitz regime ``d`` is snapped together with ``delta``.
    """
    if isinstance(regime, str):
        regime = Regime.parse(regime)
    if d < 0:
        raise ValueError("d must be nonnegative")
    T = base.width
    h1 = base.bottom
    delta = None
    if regime.kind == "smooth":
        g = shape if shape is not None else default_bump(T)
        h2 = g.scaled(d).on(h1)
    else:
        if d == 0:
            raise ValueError("oscillatory regimes need d > 0")
        N = max(4, int(round(T / regime.wavelength(d))))
        delta = T / N
        if regime.kind == "lipschitz":
            d = delta
        h2 = BoundaryProfile.oscillatory(d, delta, waveform).on(h1)
    x = (h2 if h2.family is Family.OSCILLATORY else h1).sample_points(T, 2049)
    if np.max(np.abs(h2(x))) >= base.height / 2:
        raise AmplitudeTooLarge(f"d={d:g} pushes the bottom past R/2")
    perturbed = replace(base, bottom=h2)
    return DomainPair(base, perturbed, float(d), regime, delta, shape, waveform)


# ---------------------------------------------------------------------------
# normal displacement sigma and related quantities
# ---------------------------------------------------------------------------

def outward_normal(h1: BoundaryProfile, x) -> np.ndarray:
    """Unit outward normal (h1', -1)/sqrt(1+h1'^2) at the bottom points, shape (n, 2)."""
    s = np.atleast_1d(h1.slope(x))
    n = np.sqrt(1.0 + s**2)
    return np.stack([s / n, -1.0 / n], axis=-1)


def sigma_at(pair: DomainPair, x, *, tol: float | None = None) -> np.ndarray:
    """Signed normal displacement sigma at the bottom points ``(x, h1(x))``.

    Root of ``P + s*nu in Gamma_2`` of smallest absolute value; positive when
    the landing point lies outside the reference domain.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h1, h2 = pair.h1, pair.h2
    R = pair.R
    tol = 1e-14 * R if tol is None else tol
    py = h1(x)
    direct = py - h2(x)
    s1 = h1.slope(x)
    out = np.where(s1 == 0.0, direct, 0.0)
    curved = np.nonzero((s1 != 0.0) & (direct != 0.0))[0]
    if curved.size == 0:
        return out

    xs = pair.sample_points(2048)
    gap = float(np.max(np.abs(h1(xs) - h2(xs))))
    smax = float(np.max(np.abs(h1.slope(xs))))
    S = 4.0 * (1.0 + smax) * gap + 4.0 * tol
    nu = outward_normal(h1, x[curved])
    px, pyc = x[curved], py[curved]

    def g(s):
        return pyc[:, None] + s * nu[:, 1:2] - h2(px[:, None] + s * nu[:, 0:1])

    K = 64
    grid = np.linspace(-S, S, 2 * K + 1)[None, :].repeat(curved.size, axis=0)
    vals = g(grid)
    change = np.signbit(vals[:, :-1]) != np.signbit(vals[:, 1:])
    # prefer the sign change closest to s = 0
    dist = np.minimum(np.abs(grid[:, :-1]), np.abs(grid[:, 1:]))
    dist = np.where(change, dist, np.inf)
    k = np.argmin(dist, axis=1)
    if np.any(~np.isfinite(dist[np.arange(curved.size), k])):
        raise NoIntersection("normal line misses the perturbed boundary within the chart")
    rows = np.arange(curved.size)
    a, b = grid[rows, k], grid[rows, k + 1]
    ga = vals[rows, k]
    for _ in range(200):
        m = 0.5 * (a + b)
        gm = g(m[:, None])[:, 0]
        left = np.signbit(gm) == np.signbit(ga)
        a = np.where(left, m, a)
        ga = np.where(left, gm, ga)
        b = np.where(left, b, m)
        if np.max(b - a) <= tol:
            break
    out[curved] = 0.5 * (a + b)
    return out


@dataclass(frozen=True)
class SigmaField:
    nodes: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray

    @property
    def sigma_plus(self) -> np.ndarray:
        return np.maximum(self.sigma, 0.0)

    @property
    def sigma_minus(self) -> np.ndarray:
        return np.maximum(0.0, -self.sigma)


def sigma_field(pair: DomainPair, nodes, weights) -> SigmaField:
    nodes = np.asarray(nodes, dtype=float)
    return SigmaField(nodes, sigma_at(pair, nodes), np.asarray(weights, dtype=float))


def hausdorff_distance(pair: DomainPair, n_samples: int = 1024) -> float:
    """Sampled sup of |h1 - h2| over ``n_samples`` equispaced abscissae."""
    if n_samples < 64:
        raise ValueError("n_samples must be at least 64")
    x = np.linspace(0.0, pair.T, n_samples)
    return float(np.max(np.abs(pair.h1(x) - pair.h2(x))))


def _fit_slope(d, v) -> float:
    d = np.asarray(d, float)
    v = np.asarray(v, float)
    ok = v > 0
    if ok.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(d[ok]), np.log(v[ok]), 1)[0])


@dataclass(frozen=True)
class RegularityReport:
    d: tuple
    sup_diff: tuple
    sup_grad_diff: tuple
    diff_slope: float
    grad_slope: float
    classification: Regime


def classify_regularity(pair: DomainPair, d_ladder, *, tol: float = 0.1) -> RegularityReport:
    """Fit log-log slopes of sup|h1-h2| and sup|h1'-h2'| along a d-ladder."""
    d_ladder = [float(v) for v in d_ladder]
    if len(d_ladder) < 4:
        raise LadderTooShort("classification needs at least 4 ladder points")
    ds, diffs, grads = [], [], []
    for d in d_ladder:
        p = make_perturbation(pair.reference, pair.regime, d, shape=pair.shape,
                              waveform=pair.waveform)
        x = p.sample_points(4096)
        ds.append(p.d)
        diffs.append(float(np.max(np.abs(p.h1(x) - p.h2(x)))))
        grads.append(float(np.max(np.abs(p.h1.slope(x) - p.h2.slope(x)))))
    ds_a = np.array(ds)
    sd, sg = _fit_slope(ds_a, diffs), _fit_slope(ds_a, grads)
    if sg >= 1.0 - tol:
        label = Regime("smooth")
    elif sg > tol:
        label = Regime("c1alpha", min(max(sg, 1e-3), 1 - 1e-3))
    elif grads[-1] < 0.5 * grads[0]:
        label = Regime("c1")
    else:
        label = Regime("lipschitz")
    return RegularityReport(tuple(ds), tuple(diffs), tuple(grads), sd, sg, label)
