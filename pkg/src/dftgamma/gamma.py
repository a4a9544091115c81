"""Numerical checks of the semiclassical limit structure.

G_eps(rho) = eps^2 T(rho) + eps b C(rho) - eps sum_k Z_k int rho / |x - X_k|.

* Single nucleus: the dilation rho -> rho_{#1/eps} maps the eps = 1 problem
  onto the eps problem, so min G_eps does not depend on eps.
* Several nuclei: the recovery family plants eps-shrunk single-nucleus
  minimizers at the nuclei; G_eps on it tends to sum_k g_b(Z_k, alpha_k) at
  rate eps, the cross terms between bumps being exact for disjoint
  spherical bumps (a shell acts outside like a point charge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import NucleiConfig
from .functionals import ModelSpec, energy_terms
from .radial import RadialDensity, RadialGrid, mass, pushforward_scale
from .scaling import GbEvaluator, family_scaling, gb
from .single_nucleus import SingleNucleusSolution, solve_L

DEFAULT_LADDER = (1.0, 1e-1, 1e-2, 1e-3)
RECOVERY_LADDER = (0.05, 0.02, 0.01, 0.005, 0.002, 0.001)
CONCENTRATION_FACTOR = 10.0
COLLAPSE_RTOL = 1e-6
EXACTNESS_RTOL = 1e-8


class OverlapError(ValueError):
    """Rescaled bumps (or the background) intersect at some eps of the ladder."""


def _check_ladder(ladder) -> tuple[float, ...]:
    eps = tuple(float(e) for e in ladder)
    if not eps or any(not (math.isfinite(e) and e > 0) for e in eps):
        raise ValueError("the eps ladder must hold positive numbers")
    return eps


def outer_support(rho: RadialDensity) -> float:
    """Radius of the outermost node with positive density (r_max if it is the last)."""
    idx = np.nonzero(rho.values > 0)[0]
    return float(rho.grid.nodes[idx[-1]]) if idx.size else 0.0


def mass_outside(rho: RadialDensity, R: float) -> float:
    """Mass of the linear interpolant beyond radius R, up to one cell."""
    r = rho.grid.nodes
    q = rho.grid.weights * rho.values
    return float(q[r > R].sum())


# ---------------------------------------------------------- single nucleus


@dataclass(frozen=True)
class CollapseRow:
    eps: float
    rescaled: float  # G_eps at the dilated eps = 1 minimizer
    direct: float | None  # minimum of a separate solve of the eps problem
    mass_outside: float  # mass of the minimizer outside 10 eps / s


@dataclass(frozen=True)
class CollapseReport:
    family: str
    b: float
    Z: float
    t: float
    value: float  # g_b(Z, t) from the eps = 1 solve
    radius_unit: float  # 1 / s, the family length scale
    rows: tuple[CollapseRow, ...]

    @property
    def spread(self) -> float:
        """Largest relative deviation of any eps minimum from g_b(Z, t)."""
        vals = [r.rescaled for r in self.rows] + [r.direct for r in self.rows if r.direct is not None]
        return max(abs(v - self.value) for v in vals) / max(abs(self.value), 1e-300)

    @property
    def exactness(self) -> float:
        """Largest relative gap between the dilated and the direct eps solves."""
        gaps = [abs(r.direct - r.rescaled) / max(abs(r.direct), 1e-300) for r in self.rows if r.direct is not None]
        return max(gaps, default=0.0)

    @property
    def concentrated(self) -> bool:
        return all(r.mass_outside < 1e-3 * self.t for r in self.rows)

    def passes(self, rtol: float = COLLAPSE_RTOL) -> bool:
        return self.spread <= rtol and self.exactness <= EXACTNESS_RTOL

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "b": self.b,
            "Z": self.Z,
            "t": self.t,
            "value": self.value,
            "radius_unit": self.radius_unit,
            "spread": self.spread,
            "exactness": self.exactness,
            "concentrated": self.concentrated,
            "rows": [
                {"epsilon": r.eps, "rescaled": r.rescaled, "direct": r.direct, "mass_outside": r.mass_outside}
                for r in self.rows
            ],
        }


def eps_model(model: ModelSpec, eps: float) -> ModelSpec:
    """Model whose plain energy is G_eps: c_kin eps^2, b eps, Z eps."""
    return ModelSpec(
        model.kinetic, model.correlation, model.c_kin * eps * eps, model.c_corr, model.beta, model.b * eps, model.Z * eps
    )


def single_nucleus_collapse(
    model: ModelSpec,
    b: float,
    Z: float,
    t: float,
    ladder=DEFAULT_LADDER,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    direct: bool = True,
) -> CollapseReport:
    """Minimize G_eps for one nucleus at every eps of the ladder.

    The eps = 1 minimizer is computed once on the grid shrunk by the family
    scale s and dilated by 1/eps.  With ``direct`` the eps problem is also
    solved from scratch on the grid shrunk by s / eps.
    """
    ladder = _check_ladder(ladder)
    grid = grid or RadialGrid()
    target = model.normalized().with_charges(b, Z)
    s = family_scaling(target).s
    base = solve_L(target, t, grid.scaled(s), tol)
    rows = []
    for eps in ladder:
        rho = pushforward_scale(base.rho, 1.0 / eps)
        rescaled = energy_terms(target, rho).total(b, Z, eps)
        d = None
        if direct:
            d = solve_L(eps_model(target, eps), t, grid.scaled(s / eps), tol).value
        rows.append(CollapseRow(eps, rescaled, d, mass_outside(rho, CONCENTRATION_FACTOR * eps / s)))
    return CollapseReport(target.family, b, Z, t, base.value, 1.0 / s, tuple(rows))


# ------------------------------------------------------------ recovery


@dataclass(frozen=True)
class Background:
    """Spherical compactly supported density centered at ``center``."""

    rho: RadialDensity
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def radius(self) -> float:
        return outer_support(self.rho)


@dataclass(frozen=True)
class RecoverySequenceSpec:
    config: NucleiConfig
    alphas: tuple[float, ...]
    ladder: tuple[float, ...] = RECOVERY_LADDER
    grid: RadialGrid = field(default_factory=RadialGrid)
    tol: float = 1e-10
    background: Background | None = None
    evaluator: GbEvaluator | None = None  # g_b from a table instead of the carrier solves

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "ladder", tuple(sorted(_check_ladder(self.ladder), reverse=True)))
        cfg = self.config
        if len(self.alphas) != len(cfg.charges):
            raise ValueError("one mass per nucleus")
        if any(a < 0 for a in self.alphas):
            raise ValueError("masses must be nonnegative")
        if sum(self.alphas) > cfg.mass * (1 + 1e-12):
            raise ValueError(f"masses add up to {sum(self.alphas):.6g} > m = {cfg.mass:.6g}")
        if len(cfg.charges) > 1 and cfg.positions is None:
            raise ValueError("several nuclei need positions")

    @property
    def positions(self) -> np.ndarray:
        if self.config.positions is None:
            return np.zeros((1, 3))
        return np.array(self.config.positions, float)


@dataclass(frozen=True)
class EpsilonRow:
    eps: float
    G: float
    self_energy: float  # sum of the bumps' own G_eps terms
    cross_attraction: float  # -eps sum_{i != j} Z_j (charge i) / d_ij
    cross_correlation: float  # +eps b sum_{i < j} (charge i)(charge j) / d_ij, Hartree only
    background_energy: float
    gap: float
    G_lower: float  # cross terms bracketed by the distance bounds
    G_upper: float
    mass: float


@dataclass(frozen=True)
class EpsilonReport:
    family: str
    limit: float  # sum_k g_b(Z_k, alpha_k)
    carrier_values: tuple[float, ...]
    rows: tuple[EpsilonRow, ...]
    expected_mass: float

    @property
    def slope(self) -> float:
        """Least-squares slope of log |gap| against log eps (nan if gaps vanish)."""
        e = np.array([r.eps for r in self.rows])
        g = np.abs([r.gap for r in self.rows])
        keep = g > 0
        if keep.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(e[keep]), np.log(g[keep]), 1)[0])

    @property
    def monotone(self) -> bool:
        """|gap| shrinks along the (decreasing) ladder."""
        g = [abs(r.gap) for r in self.rows]
        return all(b <= a * (1 + 1e-9) + 1e-14 for a, b in zip(g, g[1:]))

    @property
    def min_gap(self) -> float:
        return min(r.gap for r in self.rows)

    def lower_bound_holds(self, rtol: float = 1e-6) -> bool:
        return self.min_gap >= -rtol * abs(self.limit)

    @property
    def mass_error(self) -> float:
        return max(abs(r.mass - self.expected_mass) for r in self.rows)

    def csv_lines(self) -> list[str]:
        out = ["epsilon,G_eps,cross_attraction,cross_correlation,gap"]
        for r in self.rows:
            out.append(",".join("%.17g" % v for v in (r.eps, r.G, r.cross_attraction, r.cross_correlation, r.gap)))
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "limit": self.limit,
            "carrier_values": list(self.carrier_values),
            "slope": self.slope,
            "monotone": self.monotone,
            "min_gap": self.min_gap,
            "mass_error": self.mass_error,
            "rows": [r.__dict__ for r in self.rows],
        }


def carriers(spec: RecoverySequenceSpec) -> list[SingleNucleusSolution]:
    """eps = 1 minimizers for g_b(Z_k, alpha_k), each on its family-scaled grid."""
    norm = spec.config.model.normalized()
    out = []
    for Z, a in zip(spec.config.charges, spec.alphas):
        m = norm.with_charges(spec.config.b, Z)
        out.append(solve_L(m, a, spec.grid.scaled(family_scaling(m).s), spec.tol))
    return out


def _check_disjoint(eps, radii, centers, bg: Background | None):
    n = len(radii)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(centers[i] - centers[j]))
            if eps * (radii[i] + radii[j]) >= d:
                raise OverlapError(
                    f"bumps {i} and {j} overlap at eps = {eps:g}: radii {eps * radii[i]:.4g} + "
                    f"{eps * radii[j]:.4g} >= distance {d:.4g}; use a smaller eps ladder, "
                    "a smaller carrier domain or a larger nucleus separation"
                )
        if bg is not None:
            d = float(np.linalg.norm(centers[i] - np.asarray(bg.center, float)))
            if eps * radii[i] + bg.radius >= d:
                raise OverlapError(
                    f"bump {i} meets the background at eps = {eps:g}: {eps * radii[i]:.4g} + "
                    f"{bg.radius:.4g} >= distance {d:.4g}"
                )


def recovery_energy(spec: RecoverySequenceSpec, carrier_solutions=None) -> EpsilonReport:
    """Evaluate G_eps on the recovery family for every eps of the ladder.

    Each bump is the eps = 1 minimizer for (Z_k, alpha_k) dilated by 1/eps
    and placed at X_k.  Its own terms are evaluated on the dilated grid;
    the cross terms are exact for disjoint bumps and are also bracketed by
    the distance bounds 1/(d + R_i + R_j) .. 1/(d - R_i - R_j).
    """
    cfg = spec.config
    model = cfg.model.normalized()
    hartree = model.correlation == "D"
    sols = carrier_solutions or carriers(spec)
    centers = spec.positions
    radii = [outer_support(s.rho) for s in sols]
    bg = spec.background
    for eps in spec.ladder:
        _check_disjoint(eps, radii, centers, bg)
    charges_q = np.array([s.t_achieved for s in sols])
    Z = np.array(cfg.charges)
    if spec.evaluator is not None:
        values = tuple(float(gb(spec.evaluator.with_charges(cfg.b, z), a)) for z, a in zip(cfg.charges, spec.alphas))
    else:
        values = tuple(s.value for s in sols)
    limit = float(sum(values))

    n = len(sols)
    dist = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(n):
            if i != j:
                dist[i, j] = float(np.linalg.norm(centers[i] - centers[j]))
    bg_mass = mass(bg.rho) if bg is not None else 0.0
    bg_dist = (
        np.array([float(np.linalg.norm(c - np.asarray(bg.center, float))) for c in centers]) if bg is not None else None
    )
    rows = []
    for eps in spec.ladder:
        self_e = 0.0
        total_mass = bg_mass
        for k, sol in enumerate(sols):
            rho = pushforward_scale(sol.rho, 1.0 / eps)
            self_e += energy_terms(sol.model, rho).total(cfg.b, cfg.charges[k], eps)
            total_mass += mass(rho)
        R = eps * np.array(radii)
        att = corr = 0.0
        att_lo = att_hi = corr_lo = corr_hi = 0.0
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                d = dist[i, j]
                # bump i seen from nucleus j
                att -= eps * Z[j] * charges_q[i] / d
                att_lo -= eps * Z[j] * charges_q[i] / (d - R[i])
                att_hi -= eps * Z[j] * charges_q[i] / (d + R[i])
                if hartree and i < j:
                    c = eps * cfg.b * charges_q[i] * charges_q[j]
                    corr += c / d
                    corr_lo += c / (d + R[i] + R[j])
                    corr_hi += c / (d - R[i] - R[j])
        bg_e = 0.0
        if bg is not None:
            terms = energy_terms(model, bg.rho)
            bg_e = eps * eps * terms.kinetic + eps * cfg.b * terms.correlation
            bg_e -= eps * bg_mass * float(np.sum(Z / bg_dist))
            if hartree:
                bg_e += eps * cfg.b * bg_mass * float(np.sum(charges_q / bg_dist))
        G = self_e + att + corr + bg_e
        rows.append(
            EpsilonRow(
                eps,
                G,
                self_e,
                att,
                corr,
                bg_e,
                G - limit,
                self_e + att_lo + corr_lo + bg_e,
                self_e + att_hi + corr_hi + bg_e,
                total_mass,
            )
        )
    return EpsilonReport(model.family, limit, values, tuple(rows), float(sum(spec.alphas)) + bg_mass)
