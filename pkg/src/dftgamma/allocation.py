"""Distribution of electrons among nuclei in the limit problem.

Minimize sum_k g_b(Z_k, alpha_k) subject to sum_k alpha_k <= m, alpha_k >= 0.
Each g_b(Z_k, .) is convex and non-increasing, so the optimum is a
water-filling: for a price lam >= 0 every nucleus takes the smallest alpha
with g'_k(alpha) >= -lam, and lam is adjusted until the masses add up to m
(or lam = 0 if the nuclei are saturated before that: ionization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .functionals import ModelSpec
from .ltable import LTable
from .radial import RadialGrid
from .scaling import GbEvaluator, OutOfRangeError, gb, gb_derivative
from .single_nucleus import solve_L_unconstrained

KKT_TOL = 1e-6
MASS_SLACK = 1e-9


@dataclass(frozen=True)
class NucleiConfig:
    """Charges, optional positions, total electron mass and the model."""

    charges: tuple[float, ...]
    mass: float
    model: ModelSpec
    positions: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "charges", tuple(float(z) for z in self.charges))
        if self.positions is not None:
            object.__setattr__(self, "positions", tuple(tuple(float(c) for c in p) for p in self.positions))
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if len(self.charges) < 1:
            out.append("need at least one nucleus")
        if any(not (math.isfinite(z) and z > 0) for z in self.charges):
            out.append("charges must be positive")
        if not (math.isfinite(self.mass) and self.mass >= 0):
            out.append(f"total mass must be a nonnegative number, got {self.mass}")
        if self.positions is not None:
            if len(self.positions) != len(self.charges):
                out.append("one position per nucleus")
            elif any(len(p) != 3 for p in self.positions):
                out.append("positions are points in R^3")
            elif len(set(self.positions)) != len(self.positions):
                out.append("positions must be pairwise distinct")
        return out

    @property
    def b(self) -> float:
        return self.model.b

    def evaluators(self, table: LTable) -> list[GbEvaluator]:
        return [GbEvaluator(table, self.b, z) for z in self.charges]


@dataclass(frozen=True)
class AllocationResult:
    alphas: tuple[float, ...]
    lam: float
    mass: float
    energy: float
    ionized: bool
    slopes: tuple[float, ...] = field(default=())  # g'_k(alpha_k), right limit at alpha_k = 0

    @property
    def total_mass(self) -> float:
        return float(sum(self.alphas))

    @property
    def leftover(self) -> float:
        return self.mass - self.total_mass

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "lambda": _num(self.lam),
            "mass": self.mass,
            "total_mass": self.total_mass,
            "leftover": self.leftover,
            "energy": self.energy,
            "ionized": self.ionized,
            "slopes": [_num(s) for s in self.slopes],
        }


def _num(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _slope(ev: GbEvaluator, a: float) -> float:
    """g'(a); at a = 0 the right limit, which is -inf unless the small-t law is linear."""
    if a > 0:
        return float(gb_derivative(ev, a))
    return ev.scaling.energy * ev.scaling.arg * ev.L.slope_at_zero


def _alpha_at_price(ev: GbEvaluator, lam: float, iters: int = 90) -> float:
    """Smallest alpha >= 0 with g'(alpha) >= -lam."""
    if lam == math.inf or _slope(ev, 0.0) >= -lam:
        return 0.0
    hi = ev.alpha_max
    if hi == math.inf:
        # flat past the table: the threshold lies inside it
        hi = ev.L.t_max / ev.scaling.arg
    if _slope(ev, hi) < -lam:
        if ev.L.flat_tail:
            return hi
        raise OutOfRangeError(
            f"nucleus Z = {ev.Z:g} wants more than alpha = {hi:.6g} at price {lam:.6g}; extend the table"
        )
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _slope(ev, mid) >= -lam:
            hi = mid
        else:
            lo = mid
    return hi


def allocate(config: NucleiConfig, evaluators, tol: float = 1e-12) -> AllocationResult:
    """Water-filling allocation with bisection on the mass price lam."""
    evs = config.evaluators(evaluators) if isinstance(evaluators, LTable) else list(evaluators)
    if len(evs) != len(config.charges):
        raise ValueError("one evaluator per nucleus")
    m = config.mass
    if m == 0:
        zeros = (0.0,) * len(evs)
        return AllocationResult(zeros, math.inf, 0.0, 0.0, False, tuple(_slope(ev, 0.0) for ev in evs))

    def alphas(lam):
        out = []
        for k, ev in enumerate(evs):
            try:
                out.append(_alpha_at_price(ev, lam))
            except OutOfRangeError as exc:
                raise OutOfRangeError(f"nucleus {k}: {exc}") from exc
        return np.array(out)

    if all(ev.L.flat_tail for ev in evs):
        a0 = alphas(0.0)
        if a0.sum() <= m:
            return _result(evs, a0, 0.0, m, tol)

    lo, hi = 0.0, max(abs(_slope(ev, ev.alpha_min)) for ev in evs)
    while alphas(hi).sum() > m:
        lo, hi = hi, 4.0 * hi
    a_hi = alphas(hi)
    a_lo = alphas(lo) if lo > 0 or all(ev.L.flat_tail for ev in evs) else None
    for _ in range(200):
        mid = 0.5 * (lo + hi) if lo == 0 else math.sqrt(lo * hi)
        if not (lo < mid < hi):
            break
        a = alphas(mid)
        if a.sum() > m:
            lo, a_lo = mid, a
        else:
            hi, a_hi = mid, a
        if hi - lo <= 1e-15 * hi:
            break
    # a jump in alpha(lam) (a chord piece of g') is shared out linearly
    if a_lo is None:
        a = a_hi
    else:
        s_hi, s_lo = a_hi.sum(), a_lo.sum()
        w = 0.0 if s_lo == s_hi else (m - s_hi) / (s_lo - s_hi)
        a = a_hi + min(max(w, 0.0), 1.0) * (a_lo - a_hi)
    return _result(evs, a, hi, m, tol)


def _result(evs, a, lam, m, tol) -> AllocationResult:
    a = tuple(float(x) for x in a)
    energy = float(sum(gb(ev, x) for ev, x in zip(evs, a)))
    total = sum(a)
    slopes = tuple(_slope(ev, x) for ev, x in zip(evs, a))
    return AllocationResult(a, float(lam), m, energy, total < m - max(tol, 1e-9 * m), slopes)


def kkt_certificate(result: AllocationResult, evaluators, tol: float = KKT_TOL) -> dict:
    """Check feasibility, stationarity and complementary slackness."""
    evs = list(evaluators)
    lam, a = result.lam, result.alphas
    stat = []
    for ev, x in zip(evs, a):
        if x > 0:
            stat.append(abs(_slope(ev, x) + lam) <= tol * (1.0 + lam))
        else:
            stat.append(lam == math.inf or _slope(ev, 0.0) >= -lam - tol)
    comp = 0.0 if lam == 0 or result.leftover <= 0 else lam * result.leftover
    checks = {
        "feasible": result.total_mass <= result.mass + MASS_SLACK and all(x >= 0 for x in a),
        "stationary": all(stat),
        "complementary": comp <= tol * max(1.0, result.mass) or (lam == math.inf and result.mass == 0),
        "energy_nonpositive": result.energy <= 0,
    }
    checks["passed"] = all(checks.values())
    return checks


def closed_form_tfc0(charges, m) -> tuple[float, ...]:
    """alpha_k = m Z_k^3 / sum_j Z_j^3, computed in exact rational arithmetic."""
    Zs = [Fraction(z) for z in charges]
    M = Fraction(m)
    total = sum(z**3 for z in Zs)
    return tuple(float(M * z**3 / total) for z in Zs)


@dataclass(frozen=True)
class ThresholdReport:
    family: str
    b: float
    Z: float
    threshold: float  # inf: no ionization
    measured_mass: float | None  # unconstrained normalized minimizer, when solved
    basis: str

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "b": self.b,
            "Z": self.Z,
            "threshold": self.threshold if math.isfinite(self.threshold) else "infinite",
            "measured_mass": self.measured_mass,
            "basis": self.basis,
        }


def ionization_threshold(
    model: ModelSpec, b: float, Z: float, grid: RadialGrid | None = None, measure: bool = True
) -> ThresholdReport:
    """Largest electron mass a single nucleus binds in the limit problem.

    TF+Hartree: Z/b.  vW+Hartree: (mass of the normalized unconstrained
    minimizer) * Z/b, measured on ``grid``.  Local correlation: infinite.
    """
    fam = model.family
    if model.correlation == "C0":
        return ThresholdReport(fam, b, Z, math.inf, None, "no ionization with local correlation")
    measured = None
    if measure or model.kinetic == "vW":
        measured = solve_L_unconstrained(model.normalized(), grid).t_achieved
    if model.kinetic == "TF":
        return ThresholdReport(fam, b, Z, Z / b, measured, "neutral threshold Z/b")
    return ThresholdReport(fam, b, Z, measured * Z / b, measured, "measured mass times Z/b")


def relative_filling_order(result: AllocationResult, config: NucleiConfig, tol: float = 1e-9) -> dict:
    """For two nuclei, the smaller charge is filled to a smaller fraction alpha/Z."""
    if len(config.charges) != 2:
        raise ValueError("the filling order compares exactly two nuclei")
    (z1, z2), (a1, a2) = config.charges, result.alphas
    r1, r2 = a1 / z1, a2 / z2
    if abs(z1 - z2) <= tol * max(z1, z2):
        expected, holds = "equal", abs(r1 - r2) <= 1e-6 * max(r1, r2, 1.0)
    elif z1 < z2:
        expected, holds = "first smaller", r1 < r2
    else:
        expected, holds = "second smaller", r2 < r1
    return {"ratios": [r1, r2], "expected": expected, "holds": bool(holds)}
