"""Scenario-driven d-ladders: solve, predict, extrapolate and fit rates."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .eigen import DEFAULT_SEED
from .errors import HadamardLabError, ScenarioError, TooFewPoints
from .geometry import BoundaryProfile, DomainPair, DomainSpec, Regime, SideCondition, make_perturbation
from .hadamard import ReferenceLevels, evaluate_pair, solve_reference
from .mesh import ReferenceGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeshLevels:
    """Coarse grid of a Richardson pair; the fine grid doubles both counts.

    With ``cells_per_wavelength`` set, ``nx`` is raised to that many cells per
    oscillation period for each d.
    """

    nx: int
    ny: int
    grading: float = 2.0
    cells_per_wavelength: int = 0
    levels: int = 2

    def grids(self, pair: Optional[DomainPair] = None) -> tuple:
        nx = self.nx
        if self.cells_per_wavelength and pair is not None and pair.n_cells:
            nx = max(nx, self.cells_per_wavelength * pair.n_cells)
        g = ReferenceGrid(nx, self.ny, self.grading)
        return (g, g.refined(2)) if self.levels == 2 else (g,)


@dataclass(frozen=True)
class Check:
    """Pass/fail rule on a fitted slope or on a per-row ratio sequence."""

    name: str
    quantity: str
    kind: str = "slope"  # slope | ratio_decrease | max_over_median
    low: Optional[float] = -math.inf
    high: Optional[float] = math.inf

    def __post_init__(self):
        # JSON has no infinity; null stands for an open bound
        object.__setattr__(self, "low", -math.inf if self.low is None else float(self.low))
        object.__setattr__(self, "high", math.inf if self.high is None else float(self.high))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("low", "high"):
            if math.isinf(d[k]):
                d[k] = None
        return d


@dataclass(frozen=True)
class Scenario:
    name: str
    T: float = 1.0
    R: float = 1.0
    side_condition: str = "periodic"
    regime: str = "smooth"
    waveform: str = "cos"
    shape: Optional[dict] = None
    m: int = 1
    d_start: float = 1e-2
    d_ratio: float = 0.5
    d_count: int = 6
    mesh: MeshLevels = MeshLevels(8, 128, 2.0)
    eig_tol: float = 1e-10
    cluster_tol: float = 1e-6
    seed: int = DEFAULT_SEED
    probe: bool = False
    checks: tuple = ()

    def __post_init__(self):
        self.validate()

    @property
    def d_ladder(self) -> np.ndarray:
        return self.d_start * self.d_ratio ** np.arange(self.d_count)

    @property
    def base(self) -> DomainSpec:
        return DomainSpec(self.T, self.R, BoundaryProfile.flat(), SideCondition(self.side_condition))

    def validate(self) -> None:
        if self.d_count < 4:
            raise ScenarioError("d_ladder needs at least 4 points")
        if not (0.0 < self.d_ratio < 1.0) or self.d_start <= 0.0:
            raise ScenarioError("d_ladder must be strictly decreasing and positive")
        if self.m < 1:
            raise ScenarioError("eigenvalue index m starts at 1")
        try:
            reg = Regime.parse(self.regime)
            SideCondition(self.side_condition)
            if self.shape is not None:
                BoundaryProfile.from_dict(self.shape)
        except (ValueError, TypeError, KeyError) as exc:
            raise ScenarioError(str(exc)) from exc
        if reg.kind != "smooth" and self.mesh.cells_per_wavelength < 8:
            raise ScenarioError("oscillatory scenarios need cells_per_wavelength >= 8")

    def pair(self, d: float) -> DomainPair:
        shape = None if self.shape is None else BoundaryProfile.from_dict(self.shape)
        return make_perturbation(self.base, self.regime, float(d), shape=shape,
                                 waveform=self.waveform)

    # JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = [c.to_dict() for c in self.checks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        try:
            if "mesh" in d:
                d["mesh"] = MeshLevels(**d["mesh"])
            d["checks"] = tuple(Check(**c) for c in d.get("checks", ()))
            ladder = d.pop("d_ladder", None)
            if ladder is not None:
                d.update(d_start=ladder["start"], d_ratio=ladder.get("ratio", 0.5),
                         d_count=ladder.get("count", 6))
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ScenarioError(f"bad scenario: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SweepRow:
    d: float
    delta: Optional[float]
    lambda_m: float = math.nan
    J_m: int = 0
    kappa: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    r: list = field(default_factory=list)
    probe: Optional[dict] = None
    timings: dict = field(default_factory=dict)
    max_residual: float = math.nan
    orthonormality: float = math.nan
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    scenario: Scenario
    rows: list
    noise_floor: float

    @property
    def failed(self) -> int:
        return sum(not r.ok for r in self.rows)


# ---------------------------------------------------------------------------
# rows
# ---------------------------------------------------------------------------

_REF_CACHE: dict = {}


def _reference(sc: Scenario, grids, seed: Optional[int] = None) -> ReferenceLevels:
    key = (sc.T, sc.R, sc.side_condition, sc.m, grids, seed)
    if key not in _REF_CACHE:
        _REF_CACHE.clear()  # one reference at a time keeps memory bounded
        _REF_CACHE[key] = solve_reference(sc.base, grids, sc.m, tol=sc.eig_tol,
                                          seed=sc.seed if seed is None else seed,
                                          cluster_tol=sc.cluster_tol)
    return _REF_CACHE[key]


def run_row(sc: Scenario, d: float) -> SweepRow:
    """One d of the ladder; errors are recorded in the row."""
    t0 = time.perf_counter()
    row = SweepRow(float(d), None)
    try:
        pair = sc.pair(d)
        row.d, row.delta = pair.d, pair.delta
        grids = sc.mesh.grids(pair)
        ref = _reference(sc, grids)
        t1 = time.perf_counter()
        res = evaluate_pair(pair, grids, sc.m, reference=ref, tol=sc.eig_tol, seed=sc.seed,
                            cluster_tol=sc.cluster_tol)
        t2 = time.perf_counter()
        row.lambda_m = res.lam_m
        row.J_m = res.multiplicity
        row.kappa = [float(v) for v in res.kappa]
        row.mu = [float(v) for v in res.mu]
        row.r = [float(v) for v in res.remainder]
        row.max_residual = float(max(res.residuals))
        row.orthonormality = float(res.orthonormality)
        row.timings = {"reference": t1 - t0, "pair": t2 - t1}
        if sc.probe:
            from .probe import run_probe
            rep = run_probe(pair, grids[-1], sc.m, seed=sc.seed, cluster_tol=sc.cluster_tol)
            row.probe = rep.as_row()
            row.timings["probe"] = time.perf_counter() - t2
    except HadamardLabError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("d=%g failed: %s", d, row.error)
    row.timings["total"] = time.perf_counter() - t0
    return row


def _row_task(args):
    sc_dict, d = args
    return run_row(Scenario.from_dict(sc_dict), d)


def thread_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("HADAMARD_THREADS")
    return max(1, int(env)) if env else 1


def noise_floor(sc: Scenario, grids) -> float:
    """``|lam* recomputed - lam*|`` on the unperturbed domain with another seed."""
    a = _reference(sc, grids)
    b = solve_reference(sc.base, grids, sc.m, tol=sc.eig_tol, seed=sc.seed + 1,
                        cluster_tol=sc.cluster_tol)
    return float(np.max(np.abs(a.lam - b.lam)))


def run_sweep(sc: Scenario, threads: Optional[int] = None) -> SweepResult:
    """Evaluate every d of the ladder (concurrently with ``threads`` > 1)."""
    ds = list(sc.d_ladder)
    n = thread_count(threads)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_row_task, [(sc.to_dict(), d) for d in ds]))
    else:
        rows = [run_row(sc, d) for d in ds]
    rows.sort(key=lambda r: -r.d)
    bad = sum(not r.ok for r in rows)
    if bad > 0.25 * len(rows):
        raise HadamardLabError(f"{bad} of {len(rows)} rows failed: "
                               + "; ".join(r.error for r in rows if r.error))
    first = next(r for r in rows if r.ok)
    floor = noise_floor(sc, sc.mesh.grids(sc.pair(first.d)))
    return SweepResult(sc, rows, floor)


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float
    used: int
    excluded: int
    quantity: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def select(row, quantity: str) -> float:
    """Value of a named quantity in a row (``r_1``, ``abs_r_max``, ``mu_shift_max``, probe names)."""
    if isinstance(row, dict):
        get = row.get
    else:
        flat = {"d": row.d, "delta": row.delta, "lambda_m": row.lambda_m}
        for k, v in enumerate(row.kappa, 1):
            flat[f"kappa_{k}"] = v
        for k, v in enumerate(row.mu, 1):
            flat[f"mu_{k}"] = v
        for k, v in enumerate(row.r, 1):
            flat[f"r_{k}"] = v
        if row.probe:
            flat.update({_probe_column(k): v for k, v in row.probe.items()})
        get = flat.get
    if quantity == "abs_r_max":
        vals = [get(f"r_{k}") for k in range(1, 64) if get(f"r_{k}") is not None]
        return max(abs(v) for v in vals) if vals else math.nan
    if quantity == "mu_shift_max":
        lam = get("lambda_m")
        vals = [get(f"mu_{k}") for k in range(1, 64) if get(f"mu_{k}") is not None]
        return max(abs(v - lam) for v in vals) if vals else math.nan
    v = get(quantity)
    return math.nan if v is None or v == "" else float(v)


def _probe_column(key: str) -> str:
    return {"probe_eps_hat": "eps_hat", "probe_rho_hat": "rho_hat"}.get(key, key)


def fit_loglog(d, q) -> tuple:
    x = np.log(np.asarray(d, dtype=float))
    y = np.log(np.abs(np.asarray(q, dtype=float)))
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def fit_rate(rows: Sequence, quantity: Union[str, Callable], *, floor: float = 0.0,
             min_points: int = 4) -> RateFit:
    """Least squares slope of ``log|q|`` against ``log d``.

    Rows whose ``|q|`` is below ``10*floor`` (or not finite) are excluded and counted.
    """
    sel = quantity if callable(quantity) else (lambda r: select(r, quantity))
    ds, qs, excluded = [], [], 0
    for r in rows:
        if isinstance(r, SweepRow) and not r.ok:
            excluded += 1
            continue
        q = sel(r)
        d = r["d"] if isinstance(r, dict) else r.d
        if not np.isfinite(q) or abs(q) <= 10.0 * floor or q == 0.0:
            excluded += 1
            continue
        ds.append(float(d))
        qs.append(q)
    if len(ds) < min_points:
        raise TooFewPoints(f"{len(ds)} usable points (excluded {excluded}); need {min_points}")
    s, c, r2 = fit_loglog(ds, qs)
    return RateFit(s, c, r2, len(ds), excluded, quantity if isinstance(quantity, str) else "")


def evaluate_check(rows: Sequence, check: Check, floor: float = 0.0) -> dict:
    """Apply ``check``; returns ``{"name", "value", "pass"}``."""
    if check.kind == "slope":
        try:
            f = fit_rate(rows, check.quantity, floor=floor)
        except TooFewPoints as exc:
            return {"name": check.name, "value": None, "pass": False, "detail": str(exc)}
        ok = check.low <= f.slope <= check.high
        return {"name": check.name, "value": f.slope, "pass": bool(ok), "fit": f.to_dict()}
    vals = []
    for r in rows:
        d = r["d"] if isinstance(r, dict) else r.d
        vals.append(abs(select(r, check.quantity)) / d)
    vals = np.array(vals)
    if check.kind == "ratio_decrease":
        ratios = vals[1:] / vals[:-1]
        worst = float(np.max(ratios))
        return {"name": check.name, "value": worst, "pass": bool(worst <= check.high),
                "ratios": ratios.tolist()}
    if check.kind == "max_over_median":
        v = float(np.max(vals) / np.median(vals))
        return {"name": check.name, "value": v, "pass": bool(v <= check.high)}
    raise ScenarioError(f"unknown check kind {check.kind!r}")


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------

def builtin_scenarios() -> dict:
    up = BoundaryProfile.uniform_shift(-1.0).to_dict()     # bottom moves up by d
    down = BoundaryProfile.uniform_shift(1.0).to_dict()    # bottom moves down by d
    bump = BoundaryProfile.smooth_bump(1.0, 0.35, 0.25, "compact").to_dict()
    return {
        "strip-shift": Scenario(
            "strip-shift", shape=down, mesh=MeshLevels(8, 128, 2.0),
            checks=(Check("remainder slope", "r_1", "slope", 1.9, 2.1),)),
        "square-shift": Scenario(
            "square-shift", side_condition="dirichlet", shape=down, m=2,
            mesh=MeshLevels(64, 64, 1.5),
            checks=(Check("remainder slope r_1", "r_1", "slope", 1.9, 2.1),
                    Check("remainder slope r_2", "r_2", "slope", 1.9, 2.1))),
        "square-bump": Scenario(
            "square-bump", side_condition="dirichlet", shape=bump, m=2,
            mesh=MeshLevels(64, 64, 1.5),
            checks=(Check("remainder slope r_1", "r_1", "slope", 1.9, math.inf),
                    Check("remainder slope r_2", "r_2", "slope", 1.9, math.inf))),
        "c1-half": Scenario(
            "c1-half", T=0.5, regime="c1alpha(0.5)", mesh=MeshLevels(8, 128, 2.0, 8),
            checks=(Check("remainder slope", "r_1", "slope", 1.4, 1.7),
                    Check("remainder/d decreases", "r_1", "ratio_decrease", high=0.9))),
        "lipschitz": Scenario(
            "lipschitz", T=0.04, regime="lipschitz", d_count=5, mesh=MeshLevels(8, 128, 3.0, 16),
            checks=(Check("shift/d bounded", "mu_shift_max", "max_over_median", high=2.0),)),
        "probe-shift": Scenario(
            "probe-shift", shape=up, mesh=MeshLevels(8, 64, 2.0), probe=True,
            checks=(Check("rho_hat slope", "rho_hat", "slope", 1.8),
                    Check("eps_hat slope", "eps_hat", "slope", 0.9),
                    Check("trace on Gamma12 slope", "probe_trace_gamma12", "slope", 1.8),
                    Check("sliver gradient slope", "probe_trace_sliver_grad", "slope", 0.9),
                    Check("tau residual slope", "probe_tau_residual_1", "slope", 1.8))),
        "flat": Scenario(
            "flat", shape=BoundaryProfile.flat().to_dict(), d_count=4,
            mesh=MeshLevels(8, 64, 2.0)),
    }


def get_scenario(name_or_path: str) -> Scenario:
    b = builtin_scenarios()
    if name_or_path in b:
        return b[name_or_path]
    p = Path(name_or_path)
    if not p.is_file():
        raise FileNotFoundError(name_or_path)
    return Scenario.load(p)


# ---------------------------------------------------------------------------
# counterexample: Lipschitz sweep against the cell-problem constant
# ---------------------------------------------------------------------------

def counterexample(waveform: str = "cos", dmax: float = 1e-2, points: int = 5, *,
                   threads: Optional[int] = None, cell_grid: Optional[ReferenceGrid] = None,
                   scenario: Optional[Scenario] = None) -> tuple:
    """Measured ``r_1/d`` on the delta = d family against the cell-problem constant.

    Returns ``(summary dict, SweepResult)``.  The cell energy ``c_V`` is solved
    with the L2-normalized slope ``C1``; the prediction uses the
    energy-normalized constant ``c_V/lambda_1``, so ``predicted`` equals
    ``T c_V``.  The value obtained by inserting the L2-slope ``c_V`` directly
    is reported as ``predicted_mixed_normalization``.
    """
    from .cell import CellDomain, cell_energy, predicted_extra, slope_constant
    from dataclasses import replace

    sc = scenario or builtin_scenarios()["lipschitz"]
    sc = replace(sc, waveform=waveform, d_start=float(dmax), d_count=int(points))
    C1 = slope_constant(sc.T, sc.R)
    grid = cell_grid or ReferenceGrid(64, 256, 1.5)
    cell = cell_energy(CellDomain(waveform, 6.0, 1.0), grid, C1)
    finer = cell_energy(CellDomain(waveform, 6.0, 1.0), grid.refined(2), C1)
    c_V = finer["c_V"]
    result = run_sweep(sc, threads)
    ok_rows = [r for r in result.rows if r.ok]
    ratios = [r.r[0] / r.d for r in ok_rows]
    lam1 = ok_rows[-1].lambda_m
    d_last = ok_rows[-1].d
    measured = ratios[-1]
    c_V_energy = c_V / lam1
    predicted = predicted_extra(lam1, sc.T, d_last, d_last, c_V_energy) / d_last
    mixed = predicted_extra(lam1, sc.T, d_last, d_last, c_V) / d_last
    drift = abs(ratios[-1] - ratios[-2]) / abs(ratios[-1]) if len(ratios) > 1 else math.inf
    ratio = measured / predicted
    summary = {
        "waveform": waveform, "T": sc.T, "R": sc.R, "C1": C1, "lambda_1": lam1,
        "c0": finer["c0"], "c_V": c_V, "c_V_levels": [cell["c_V"], c_V],
        "c_V_self_convergence": abs(c_V - cell["c_V"]) / abs(c_V),
        "c_V_energy_normalized": c_V_energy,
        "q_residual": finer["q_residual"],
        "rows": [{"d": r.d, "r_1": r.r[0], "r_1_over_d": r.r[0] / r.d} for r in ok_rows],
        "measured_limit": measured, "measured_drift": drift,
        "predicted": predicted, "ratio": ratio,
        "predicted_mixed_normalization": mixed, "ratio_mixed_normalization": measured / mixed,
        "pass": bool(measured > 0 and drift <= 0.05 and abs(ratio - 1.0) <= 0.25),
    }
    return summary, result
