"""Cell energy g_b(Z, alpha) rebuilt from the normalized value function L.

Writing rho(x) = lam s^3 eta(s x) turns the problem with charges (b, Z) into
the normalized one (b = Z = 1) when lam and s balance the three terms; then
g_b(Z, alpha) = E * L(A * alpha) with family-dependent constants E and A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functionals import ModelSpec
from .ltable import LTable
from .radial import RadialGrid
from .single_nucleus import solve_L


class OutOfRangeError(ValueError):
    """Argument outside the tabulated range with no valid extrapolation."""


@dataclass(frozen=True)
class FamilyScaling:
    """rho = lam s^3 eta(s x); g_b(Z, alpha) = energy * L(arg * alpha)."""

    lam: float
    s: float
    energy: float
    arg: float


def family_scaling(model: ModelSpec) -> FamilyScaling:
    b, Z, beta = model.b, model.Z, model.beta
    if model.correlation == "C0":
        lam = (Z / b) ** 3
        s = b**2 / Z if model.kinetic == "TF" else Z ** (beta - 1.0) * b ** (2.0 - beta)
    else:
        lam = Z / b
        if model.kinetic == "TF":
            s = Z ** (1.0 / 3.0) * b ** (2.0 / 3.0)
        else:
            s = Z ** ((beta + 1.0) / 3.0) * b ** ((2.0 - beta) / 3.0)
    # the attraction Z U scales as Z lam s, and so do the other two terms
    return FamilyScaling(lam, s, Z * lam * s, 1.0 / lam)


# ------------------------------------------------------------ interpolation


class LInterpolant:
    """Convexity-preserving cubic Hermite interpolant of a table of L.

    Knot slopes are -theta (exact derivatives of L).  A cubic piece whose
    second derivative would turn negative is replaced by the chord.  Below
    the first positive knot L follows a power law c t^p whose exponent comes
    from scaling; above the last knot L is constant for families with a
    finite ionization threshold and undefined otherwise.
    """

    def __init__(self, table: LTable):
        rows = [r for r in table.good_rows if r.t > 0]
        t, idx = np.unique([r.t for r in rows], return_index=True)
        if t.size < 3:
            raise ValueError("table needs at least three positive rows")
        self.model = table.model
        self.t = t
        self.L = np.array([rows[i].value for i in idx])
        self.m = np.array([-rows[i].theta for i in idx])
        self.flat_tail = table.model.ionizing
        self._fit_small_t()
        h = np.diff(self.t)
        secant = np.diff(self.L) / h
        # cubic Hermite has linear L''; convex iff both end values are >= 0
        left = 6.0 * secant - 4.0 * self.m[:-1] - 2.0 * self.m[1:]
        right = -6.0 * secant + 2.0 * self.m[:-1] + 4.0 * self.m[1:]
        self.linear = (left < 0) | (right < 0)
        self.secant = secant

    def _fit_small_t(self):
        # for small mass the correlation is of higher order and the optimal
        # dilation of T - U gives L ~ c t^p with p = 1/3 (TF), (1 + beta)/3 (vW)
        self.p = 1.0 / 3.0 if self.model.kinetic == "TF" else (1.0 + self.model.beta) / 3.0
        self.c = self.L[0] / self.t[0] ** self.p

    @property
    def slope_at_zero(self) -> float:
        """Limit of L'(t) as t -> 0+ under the small-t law."""
        if self.p < 1.0:
            return -math.inf
        return self.c if self.p == 1.0 else 0.0

    @property
    def t_min(self) -> float:
        return float(self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def _locate(self, x):
        i = np.clip(np.searchsorted(self.t, x, side="right") - 1, 0, self.t.size - 2)
        h = self.t[i + 1] - self.t[i]
        u = (x - self.t[i]) / h
        return i, h, u

    def _check(self, x):
        x = np.asarray(x, float)
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise OutOfRangeError("L is defined for finite t >= 0")
        if not self.flat_tail and np.any(x > self.t_max * (1 + 1e-12)):
            raise OutOfRangeError(
                f"t = {float(x.max()):.6g} beyond the table (t_max = {self.t_max:.6g}) "
                "for a family without ionization; extend the table"
            )
        return x

    def __call__(self, x):
        x = self._check(x)
        xi = np.clip(x, self.t_min, self.t_max)
        i, h, u = self._locate(xi)
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u * u * (3 - 2 * u)
        h11 = u * u * (u - 1)
        cubic = h00 * self.L[i] + h10 * h * self.m[i] + h01 * self.L[i + 1] + h11 * h * self.m[i + 1]
        chord = self.L[i] + self.secant[i] * (xi - self.t[i])
        out = np.where(self.linear[i], chord, cubic)
        with np.errstate(divide="ignore", invalid="ignore"):
            small = self.c * np.where(x > 0, x, 1.0) ** self.p
        out = np.where(x < self.t_min, np.where(x > 0, small, 0.0), out)
        out = np.where(x > self.t_max, self.L[-1], out)
        return out if out.ndim else float(out)

    def derivative(self, x):
        x = self._check(x)
        xi = np.clip(x, self.t_min, self.t_max)
        i, h, u = self._locate(xi)
        d00 = 6 * u * (u - 1) / h
        d10 = (1 - u) * (1 - 3 * u)
        d01 = -d00
        d11 = u * (3 * u - 2)
        cubic = d00 * self.L[i] + d10 * self.m[i] + d01 * self.L[i + 1] + d11 * self.m[i + 1]
        out = np.where(self.linear[i], self.secant[i], cubic)
        with np.errstate(divide="ignore", invalid="ignore"):
            small = self.c * self.p * np.where(x > 0, x, 1.0) ** (self.p - 1.0)
        out = np.where(x < self.t_min, np.where(x > 0, small, -np.inf if self.p < 1 else self.c), out)
        out = np.where(x > self.t_max, 0.0, out)
        return out if out.ndim else float(out)


# -------------------------------------------------------------- evaluator


class GbEvaluator:
    """g_b(Z, .) for one (b, Z) from a table of the normalized L."""

    def __init__(self, table: LTable, b: float = 1.0, Z: float = 1.0):
        if table.model.b != 1.0 or table.model.Z != 1.0:
            raise ValueError("GbEvaluator needs a table of the normalized model (b = Z = 1)")
        self.table = table
        self.model = table.model.with_charges(b, Z)
        self.scaling = family_scaling(self.model)
        self.L = LInterpolant(table)

    @property
    def b(self) -> float:
        return self.model.b

    @property
    def Z(self) -> float:
        return self.model.Z

    @property
    def alpha_max(self) -> float:
        """Largest alpha inside the table (inf when L is flat beyond it)."""
        return math.inf if self.L.flat_tail else self.L.t_max / self.scaling.arg

    @property
    def alpha_min(self) -> float:
        return self.L.t_min / self.scaling.arg

    def with_charges(self, b: float | None = None, Z: float | None = None) -> "GbEvaluator":
        return GbEvaluator(self.table, self.b if b is None else b, self.Z if Z is None else Z)

    def __call__(self, alpha):
        return gb(self, alpha)


def gb(ev: GbEvaluator, alpha):
    """g_b(Z, alpha) = E * L(A * alpha)."""
    a = np.asarray(alpha, float)
    if np.any(a < 0):
        raise OutOfRangeError("alpha must be nonnegative")
    out = ev.scaling.energy * np.asarray(ev.L(ev.scaling.arg * a))
    return float(out) if out.ndim == 0 else out


def gb_derivative(ev: GbEvaluator, alpha):
    """d g_b / d alpha = E * A * L'(A * alpha), with L' = -theta at the knots."""
    a = np.asarray(alpha, float)
    if np.any(a <= 0):
        raise OutOfRangeError("the derivative is taken at alpha > 0")
    out = ev.scaling.energy * ev.scaling.arg * np.asarray(ev.L.derivative(ev.scaling.arg * a))
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------- verification


@dataclass(frozen=True)
class ScalingReport:
    family: str
    b: float
    Z: float
    alpha: float
    direct: float
    rescaled: float
    interpolated: float | None

    @property
    def gap(self) -> float:
        """Relative gap between the direct solve and the rescaled normalized solve."""
        return abs(self.direct - self.rescaled) / max(abs(self.direct), 1e-300)

    @property
    def table_gap(self) -> float | None:
        if self.interpolated is None:
            return None
        return abs(self.direct - self.interpolated) / max(abs(self.direct), 1e-300)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "b": self.b,
            "Z": self.Z,
            "alpha": self.alpha,
            "direct": self.direct,
            "rescaled": self.rescaled,
            "interpolated": self.interpolated,
            "gap": self.gap,
            "table_gap": self.table_gap,
        }


def verify_scaling(
    model: ModelSpec,
    b: float,
    Z: float,
    alpha: float,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    evaluator: GbEvaluator | None = None,
) -> ScalingReport:
    """Solve the (b, Z) problem directly on the grid shrunk by the family's s.

    Compares with E * L(A alpha) from a normalized solve on ``grid`` and,
    when an evaluator is given, with its interpolated g_b.
    """
    grid = grid or RadialGrid()
    norm = model.normalized()
    target = norm.with_charges(b, Z)
    sc = family_scaling(target)
    direct = solve_L(target, alpha, grid.scaled(sc.s), tol).value
    rescaled = sc.energy * solve_L(norm, sc.arg * alpha, grid, tol).value
    interp = None
    if evaluator is not None:
        interp = gb(evaluator.with_charges(b, Z), alpha)
    return ScalingReport(target.family, b, Z, alpha, direct, rescaled, interp)
