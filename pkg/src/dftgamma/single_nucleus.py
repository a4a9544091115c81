"""Single-nucleus value function L(t) and its minimizers.

Three solvers cover the four model families:

* TF + local correlation: the Euler-Lagrange equation is pointwise
  algebraic, so the density is an explicit function of the multiplier and
  only the multiplier is root-found.
* TF + Hartree: Newton's method on the effective potential
  V = Z/r - b phi - theta.  The Coulomb kernel 1/max(r_i, r_j) has a
  tridiagonal inverse, so every Newton step is a banded solve.
* vW + either correlation: active-set Newton on the density with a banded
  Hessian and a lower floor.  For the Hartree variant the potential is
  carried as an interleaved unknown, which keeps the system banded.

In every family the mass bound enters through its multiplier theta: the
density at fixed theta has mass decreasing in theta, and theta is
root-found (after checking whether theta = 0 already satisfies the bound).
The vW root is finished by a bordered Newton solve that holds the mass
exactly at the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq, minimize_scalar

from .functionals import (
    ModelSpec,
    hartree_energy,
    total_energy,
    vw_cell_terms,
)
from .radial import RadialDensity, RadialGrid, fit_tail, mass

DEFAULT_TAIL_WINDOW = (10.0, 30.0)
SUPPORT_FLOOR = 1e-10
VW_FLOOR = 1e-30
# values within a few decades of the solver floor carry no tail information
TAIL_FIT_FLOOR = 1e-25
VANISHING_MASS = 1e-9
SMOOTHING_LADDER = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 0.0)


class SolverError(RuntimeError):
    """A solve failed to converge; ``report`` carries the last iterate's diagnostics."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class SingleNucleusSolution:
    model: ModelSpec
    rho: RadialDensity = field(repr=False)
    value: float
    t_requested: float  # inf for the unconstrained problem
    t_achieved: float
    theta: float
    iterations: int
    converged: bool
    residual: float
    tail_window: tuple = DEFAULT_TAIL_WINDOW

    @property
    def saturated(self) -> bool:
        return self.theta > 0

    @property
    def support_radius(self) -> float:
        return support_radius(self)

    @property
    def tail_fit(self) -> tuple[float, float]:
        return fit_tail(self.rho, self.tail_window, TAIL_FIT_FLOOR)

    @property
    def tail_slope(self) -> float:
        return self.tail_fit[0]

    def summary(self) -> dict:
        p, A = self.tail_fit
        R = self.support_radius
        return {
            "family": self.model.family,
            "model": self.model.to_dict(),
            "grid": self.rho.grid.fingerprint(),
            "t_requested": self.t_requested,
            "t_achieved": self.t_achieved,
            "value": self.value,
            "theta": self.theta,
            "support_radius": R if math.isfinite(R) else "unbounded-within-domain",
            "tail_slope": p,
            "tail_prefactor": A,
            "tail_window": list(self.tail_window),
            "iterations": self.iterations,
            "converged": self.converged,
            "kkt_residual": self.residual,
        }


def support_radius(sol: SingleNucleusSolution | RadialDensity, floor: float = SUPPORT_FLOOR) -> float:
    """Largest node radius with density above ``floor``.

    Returns inf when the density is still above the floor at r_max and r_min
    for the zero density.
    """
    rho = sol.rho if isinstance(sol, SingleNucleusSolution) else sol
    above = np.nonzero(rho.values > floor)[0]
    if above.size == 0:
        return float(rho.grid.r_min)
    if above[-1] == rho.grid.n - 1:
        return math.inf
    return float(rho.grid.nodes[above[-1]])


# ------------------------------------------------------------------ helpers


def solve_tf_pointwise_inversion(s, a: float = 5.0 / 3.0, c: float = 1.0):
    """Nonnegative root rho = u^3 of a u^2 + c u = s, elementwise.

    With the defaults this is (5/3) rho^{2/3} + rho^{1/3} = s.  The
    cancellation-free form u = 2s / (c + sqrt(c^2 + 4 a s)) is used.
    """
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    u = 2.0 * s / (c + np.sqrt(c * c + 4.0 * a * s))
    out = u**3
    return float(out) if out.ndim == 0 else out


def kernel_inverse_banded(r: np.ndarray) -> np.ndarray:
    """Tridiagonal inverse of K_ij = 1 / max(r_i, r_j) in LAPACK band storage."""
    u = 1.0 / r
    inv_du = 1.0 / (u[:-1] - u[1:])
    ab = np.zeros((3, r.size))
    ab[1, :-1] += inv_du
    ab[1, 1:] += inv_du
    ab[1, -1] += r[-1]
    ab[0, 1:] = -inv_du
    ab[2, :-1] = -inv_du
    return ab


def _band_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


def shell_potential(r: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Coulomb potential at r_i of charges q_j on shells r_j."""
    qr = q / r
    outer = np.cumsum(qr[::-1])[::-1] - qr
    return np.cumsum(q) / r + outer


def _check_t(t: float) -> float:
    t = float(t)
    if not (t >= 0 and np.isfinite(t)):
        raise ValueError(f"mass bound t must be a finite nonnegative number, got {t}")
    return t


def _zero_solution(model, grid, t, window):
    return SingleNucleusSolution(
        model, RadialDensity.zeros(grid), 0.0, t, 0.0, 0.0, 0, True, 0.0, window
    )


def first_variation(model: ModelSpec, rho: RadialDensity, delta: float = 0.0) -> np.ndarray:
    """Gradient of the discrete energy with respect to nodal values."""
    g = rho.grid
    r, W, v = g.nodes, g.weights, rho.values
    out = -model.Z * W / r
    if model.kinetic == "TF":
        out += model.c_kin * W * (5.0 / 3.0) * v ** (2.0 / 3.0)
    else:
        grad, _ = _vw_kinetic_derivatives(model, g, v, delta)
        out += grad
    if model.correlation == "C0":
        out += model.b * model.c_corr * W * (4.0 / 3.0) * np.cbrt(v)
    else:
        out += model.b * W * shell_potential(r, W * v)
    return out


def stationarity(red, rho, W, r, Z, floor):
    """Scale-free measure of how far the reduced gradient is from KKT.

    Free nodes are weighted by their density (first-order energy response
    to relative changes), which ignores round-off in the gradient next to
    the nucleus where the difference quotients lose digits.  Nodes near the
    floor are checked pointwise for a wish to grow.
    """
    pot = red / W
    scale = 1.0 + Z / r
    low = rho <= floor * 1e6
    weighted = float(np.sum(np.abs(red) * rho) / max(np.sum(W * rho * scale), 1e-300))
    grow = float(np.max(np.where(low, np.maximum(-pot, 0.0), 0.0) / scale))
    return max(weighted, grow)


def kkt_residual(model: ModelSpec, rho: RadialDensity, theta: float, floor: float = 0.0) -> float:
    """Stationarity of a computed minimizer at multiplier theta."""
    g = rho.grid
    red = first_variation(model, rho) + theta * g.weights
    return stationarity(red, rho.values, g.weights, g.nodes, model.Z, floor)


def _mass_root(mass_of, t: float, theta_max: float, theta_guess: float = 1.0, rtol: float = 1e-15):
    """Find theta > 0 with mass_of(theta) = t, mass_of decreasing.

    Returns the root and the list of (theta, mass) evaluations.
    """
    seen: list[tuple[float, float]] = []

    def f(th):
        m = mass_of(th)
        seen.append((th, m))
        return m - t

    hi = min(max(theta_guess, 1e-12), theta_max)
    lo = 0.0
    if f(hi) < 0:
        # guess overshoots: walk down to bracket from below
        lo = hi / 4.0
        while lo > 1e-12 and f(lo) < 0:
            hi, lo = lo, lo / 4.0
        if lo <= 1e-12:
            lo = 0.0
    else:
        while seen[-1][1] > t:
            if hi >= theta_max:
                raise SolverError("mass stays above target at the largest multiplier")
            lo, hi = hi, min(4.0 * hi, theta_max)
            f(hi)
        if seen[-1][1] == t:
            return hi, seen
    theta = brentq(f, lo, hi, xtol=1e-300, rtol=rtol, maxiter=300)
    return theta, seen


def _check_monotone(seen, t):
    pts = sorted(seen)
    ms = np.array([m for _, m in pts])
    if np.any(np.diff(ms) > 1e-6 * max(t, 1.0)):
        raise SolverError("mass is not monotone in the multiplier", {"evaluations": pts})


# ---------------------------------------------------------- TF + local C0


def _tf_c0_density(model: ModelSpec, r: np.ndarray, theta: float) -> np.ndarray:
    s = model.Z / r - theta
    return solve_tf_pointwise_inversion(
        s, a=(5.0 / 3.0) * model.c_kin, c=(4.0 / 3.0) * model.b * model.c_corr
    )


def _solve_tf_c0(model, grid, t, tol, window):
    r, W = grid.nodes, grid.weights
    theta = 0.0
    rho = _tf_c0_density(model, r, 0.0)
    evals = 1
    if t is not None and W @ rho > t:
        theta, seen = _mass_root(lambda th: float(W @ _tf_c0_density(model, r, th)), t, model.Z / grid.r_min)
        _check_monotone(seen, t)
        evals += len(seen)
        rho = _tf_c0_density(model, r, theta)
    return rho, theta, evals


# ------------------------------------------------------------ TF + Hartree


class _TFHartree:
    """Newton solver for the TF+Hartree Euler-Lagrange system at fixed theta.

    Unknown: V_i = Z/r_i - b phi_i - theta, with rho = (3 V^+ / (5 c_T))^{3/2}.
    Applying K^{-1} to phi = K (W rho) turns the system into
    K^{-1} V + b W F(V) = Z e_0 - theta r_max e_last, tridiagonal in V.
    """

    def __init__(self, model: ModelSpec, grid: RadialGrid, tol: float, max_iter: int):
        self.model, self.grid = model, grid
        self.r, self.W = grid.nodes, grid.weights
        self.kinv = kernel_inverse_banded(self.r)
        self.k = (3.0 / (5.0 * model.c_kin)) ** 1.5
        self.tol, self.max_iter = tol, max_iter
        self.cache: dict[float, np.ndarray] = {}
        self.iterations = 0

    def density(self, V):
        return self.k * np.maximum(V, 0.0) ** 1.5

    def solve(self, theta: float) -> np.ndarray:
        m, r, W = self.model, self.r, self.W
        if self.cache:
            near = min(self.cache, key=lambda th: abs(th - theta))
            V = self.cache[near] + (near - theta)
        else:
            V = m.Z / r - theta
        rhs = np.zeros(r.size)
        rhs[0] = m.Z
        rhs[-1] -= theta * r[-1]
        prev = np.inf
        for it in range(1, self.max_iter + 1):
            Vp = np.maximum(V, 0.0)
            G = _band_matvec(self.kinv, V) + m.b * W * self.k * Vp**1.5 - rhs
            A = self.kinv.copy()
            A[1] += m.b * W * 1.5 * self.k * np.sqrt(Vp)
            d = solve_banded((1, 1), A, -G, check_finite=False)
            rho_old = self.density(V)
            V = V + d
            # change measured in charge: |d| / |V| is meaningless where V
            # crosses zero at the edge of the support
            rho_new = self.density(V)
            step = float(W @ np.abs(rho_new - rho_old)) / max(float(W @ rho_new), 1e-300)
            if step <= self.tol or (step < 1e-7 and step >= prev):
                break
            prev = step
        else:
            raise SolverError(
                "TF+Hartree Newton iteration did not converge",
                {"theta": theta, "last_relative_change": step, "iterations": it},
            )
        self.iterations += it
        self.cache[theta] = V
        return self.density(V)

    def mass(self, theta: float) -> float:
        return float(self.W @ self.solve(theta))


def _solve_tf_d(model, grid, t, tol, window, max_iter):
    solver = _TFHartree(model, grid, tol, max_iter)
    rho = solver.solve(0.0)
    theta = 0.0
    if t is not None and grid.weights @ rho > t:
        guess = max(model.Z * (1.0 - t * model.b / model.Z), 1e-3) if t < model.Z / model.b else 1e-3
        theta, seen = _mass_root(solver.mass, t, model.Z / grid.r_min, guess)
        _check_monotone(seen, t)
        rho = solver.solve(theta)
    return rho, theta, solver.iterations


def tf_hartree_scf(
    model: ModelSpec,
    grid: RadialGrid,
    theta: float = 0.0,
    gamma: float = 0.3,
    tol: float = 1e-10,
    max_iter: int = 20000,
) -> tuple[np.ndarray, int]:
    """Damped self-consistent field iteration for TF+Hartree at fixed theta.

    Slow but simple; kept as an independent check on the Newton solver.
    The mixing factor is halved whenever the energy goes up.
    """
    r, W = grid.nodes, grid.weights
    k = (3.0 / (5.0 * model.c_kin)) ** 1.5

    def energy(rho):
        return (
            model.c_kin * (W @ rho ** (5.0 / 3.0))
            + model.b * hartree_energy(RadialDensity(grid, rho))
            - model.Z * (W @ (rho / r))
            + theta * (W @ rho)
        )

    rho = np.zeros(r.size)
    E = energy(rho)
    for it in range(1, max_iter + 1):
        phi = shell_potential(r, W * rho)
        target = k * np.maximum(model.Z / r - model.b * phi - theta, 0.0) ** 1.5
        new = (1.0 - gamma) * rho + gamma * target
        En = energy(new)
        if En > E + 1e-14 * abs(E):
            gamma *= 0.5
            if gamma < 1e-8:
                raise SolverError("SCF mixing collapsed", {"iterations": it})
            continue
        change = float(np.max(np.abs(new - rho) / (1.0 + new)))
        rho, E = new, En
        if change < tol:
            return rho, it
    raise SolverError("SCF did not converge", {"iterations": max_iter, "last_change": change})


# -------------------------------------------------------------- vW family


def _vw_kinetic_derivatives(model: ModelSpec, grid: RadialGrid, rho: np.ndarray, delta: float):
    """Gradient and tridiagonal Hessian (diag, off) of the cell-based vW term."""
    a, bt = model.alpha, model.beta
    dr = np.diff(grid.nodes)
    c = model.c_kin * grid.cell_volumes
    m = 0.5 * (rho[1:] + rho[:-1])
    d = np.diff(rho) / dr
    q = d * d + delta * delta
    pos = q > 0
    qq = np.where(pos, q, 1.0)
    e = np.where(pos, qq ** (bt / 2), 0.0) - (delta**bt if delta > 0 else 0.0)
    e1 = np.where(pos, bt * d * qq ** (bt / 2 - 1), 0.0)
    e2 = bt * qq ** (bt / 2 - 1) + bt * (bt - 2) * d * d * qq ** (bt / 2 - 2)
    if bt < 2:
        # flat cells: infinite curvature, left out of the Newton matrix
        e2 = np.where(pos, e2, 0.0)
    if a != 0:
        ma = m**a
        fm = a * m ** (a - 1) * e
        fmm = a * (a - 1) * m ** (a - 2) * e
        fmd = a * m ** (a - 1) * e1
    else:
        ma = np.ones_like(m)
        fm = fmm = fmd = np.zeros_like(m)
    fd, fdd = ma * e1, ma * e2
    inv = 1.0 / dr
    grad = np.zeros(rho.size)
    grad[:-1] += c * (0.5 * fm - inv * fd)
    grad[1:] += c * (0.5 * fm + inv * fd)
    h00 = c * (0.25 * fmm - inv * fmd + inv * inv * fdd)
    h11 = c * (0.25 * fmm + inv * fmd + inv * inv * fdd)
    h01 = c * (0.25 * fmm - inv * inv * fdd)
    diag = np.zeros(rho.size)
    diag[:-1] += h00
    diag[1:] += h11
    return grad, (diag, h01)


class _VWProblem:
    """Discrete vW energy with its banded Newton systems.

    ``correlation=False`` drops the correlation term, leaving the
    attraction-plus-gradient part used for the beta = 2 binding threshold.
    """

    def __init__(self, model: ModelSpec, grid: RadialGrid, floor: float, correlation: bool = True):
        self.model, self.grid, self.floor = model, grid, floor
        self.r, self.W = grid.nodes, grid.weights
        self.dr = np.diff(self.r)
        self.hartree = correlation and model.correlation == "D"
        self.local = correlation and model.correlation == "C0"
        if self.hartree:
            self.kinv = kernel_inverse_banded(self.r)
        self.delta = 0.0
        self.trace: list | None = None

    def energy(self, rho: np.ndarray) -> float:
        m, W, r = self.model, self.W, self.r
        _, _, f = vw_cell_terms(rho, self.dr, m.alpha, m.beta, self.delta)
        E = m.c_kin * (self.grid.cell_volumes @ f) - m.Z * (W @ (rho / r))
        if self.hartree:
            q = W * rho
            Q = np.cumsum(q)
            E += m.b * float(np.sum(q * (Q - 0.5 * q) / r))
        elif self.local:
            E += m.b * m.c_corr * (W @ rho ** (4.0 / 3.0))
        return float(E)

    def gradient_and_hessian(self, rho: np.ndarray):
        m, W, r = self.model, self.W, self.r
        g, (diag, off) = _vw_kinetic_derivatives(m, self.grid, rho, self.delta)
        g = g - m.Z * W / r
        if self.hartree:
            g += m.b * W * shell_potential(r, W * rho)
        elif self.local:
            g += m.b * m.c_corr * W * (4.0 / 3.0) * np.cbrt(rho)
            diag = diag + m.b * m.c_corr * W * (4.0 / 9.0) * rho ** (-2.0 / 3.0)
        # a node between flat cells has no curvature of its own
        diag = np.where(diag > 0, diag, 1e-8 * float(np.max(diag)))
        return g, diag, off

    def newton_solve(self, diag, off, active, rhs):
        """Solve the (reduced) Newton system for each column of ``rhs``.

        Active nodes get the identity row so their update is zero.  Runs of
        free nodes sitting at the floor give a nearly singular Laplacian
        block; if the factorization breaks down a growing Levenberg shift
        is added.
        """
        row = np.abs(diag).copy()
        row[:-1] += np.abs(off)
        row[1:] += np.abs(off)
        for mu in (0.0, 1e-12, 1e-9, 1e-6, 1e-3, 1.0):
            try:
                x = self._newton_solve(diag + mu * row, off, active, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(x)):
                return x
        raise SolverError("Newton system is singular")

    def _newton_solve(self, diag, off, active, rhs):
        n = self.r.size
        rhs = np.where(active[:, None], 0.0, rhs)
        if not self.hartree:
            ab = np.zeros((3, n))
            ab[1] = np.where(active, 1.0, diag)
            up = off.copy()
            lo = off.copy()
            up[active[:-1]] = 0.0
            lo[active[1:]] = 0.0
            ab[0, 1:] = up
            ab[2, :-1] = lo
            return solve_banded((1, 1), ab, rhs, check_finite=False)
        b = self.model.b
        ab = np.zeros((5, 2 * n))
        bw = b * self.W
        # even unknowns: density updates, odd unknowns: potential updates
        ab[2, 0::2] = np.where(active, 1.0, diag)
        up = np.where(active[:-1], 0.0, off)
        lo = np.where(active[1:], 0.0, off)
        ab[0, 2::2] = up
        ab[4, 0:-2:2] = lo
        ab[1, 1::2] = np.where(active, 0.0, bw)
        ab[3, 0::2] = bw
        ab[2, 1::2] = -b * self.kinv[1]
        ab[0, 3::2] = -b * self.kinv[0, 1:]
        ab[4, 1:-2:2] = -b * self.kinv[2, :-1]
        full = np.zeros((2 * n, rhs.shape[1]))
        full[0::2] = rhs
        sol = solve_banded((2, 2), ab, full, check_finite=False)
        return sol[0::2]

    def minimize(self, rho, theta, tol, max_iter, kkt_tol, mass_target=None):
        """Active-set Newton for E(rho) + theta * mass(rho) over rho >= floor.

        Nodes with a positive gradient whose diagonally scaled gradient step
        would cross the floor (or negligible nodes whose Newton step would)
        are released to the floor;
        the others take the Newton step, shortened so they stay strictly
        above the floor.  Armijo backtracking on the energy.

        With ``mass_target`` the multiplier becomes an unknown of a
        bordered system that keeps the mass equal to the target, and the
        updated multiplier is returned alongside the density.
        """
        W, floor, r = self.W, self.floor, self.r
        bordered = mass_target is not None
        if bordered:
            rho = np.maximum(rho * (mass_target / float(W @ rho)), floor)
        E = self.energy(rho) + (0.0 if bordered else theta * float(W @ rho))
        eps_E = 32 * np.finfo(float).eps
        stalled = 0
        for it in range(1, max_iter + 1):
            g0, diag, off = self.gradient_and_hessian(rho)
            d, theta, active = self._direction(rho, g0, diag, off, theta, mass_target)
            g = g0 + theta * W
            viol = stationarity(
                np.where(rho <= floor * 1.001, np.minimum(g, 0.0), g), rho, W, r, self.model.Z, floor
            )
            dec = -float(g @ d)
            if self.trace is not None:
                self.trace.append((it, E, dec, viol, int(active.sum()), float(W @ rho), theta))
            if not np.isfinite(dec):
                raise SolverError("non-finite Newton decrement", {"iterations": it})
            if abs(dec) <= tol * (1.0 + abs(E)):
                if viol <= kkt_tol:
                    return rho, it, True, theta
                stalled += 1
                # at a free boundary the active set can flip between two
                # equivalent states once the energy has settled to round-off
                if stalled >= 8 and abs(dec) <= eps_E * (1.0 + abs(E)):
                    return rho, it, True, theta
            else:
                stalled = 0
            if not bordered and float(W @ rho) <= VANISHING_MASS and E >= 0:
                # the minimizer at this multiplier is the zero density
                return np.full_like(rho, floor), it, True, theta
            s = 1.0
            neg = ~active & (d < 0)
            if neg.any():
                s = min(1.0, 0.99 * float(np.min((rho[neg] - floor) / -d[neg])))
            slope = float(g @ d) if not bordered else float(g0 @ d)
            while True:
                trial = np.maximum(rho + s * d, floor)
                En = self.energy(trial) + (0.0 if bordered else theta * float(W @ trial))
                # a few ulps of slack let Newton finish where energy changes
                # fall below round-off (the region next to the nucleus)
                if En <= E + 1e-4 * s * min(slope, 0.0) + eps_E * abs(E):
                    break
                s *= 0.5
                if s < 1e-14:
                    return rho, it, viol <= max(kkt_tol, 1e-6), theta
            rho, E = trial, En
        return rho, max_iter, False, theta

    def _direction(self, rho, g0, diag, off, theta, mass_target):
        W, floor = self.W, self.floor
        g = g0 + theta * W
        with np.errstate(divide="ignore", invalid="ignore"):
            reach = np.where(diag > 0, g / diag, np.inf)
        active = (g > 0) & (rho - floor <= reach)
        for attempt in range(4):
            if mass_target is None:
                d = self.newton_solve(diag, off, active, -g[:, None])[:, 0]
            else:
                x = self.newton_solve(diag, off, active, np.stack([-g0, -W], axis=1))
                dA = np.where(active, floor - rho, 0.0)
                free = ~active
                gap = mass_target - float(W @ rho) - float(W @ dA)
                theta = (gap - float(W[free] @ x[free, 0])) / float(W[free] @ x[free, 1])
                d = x[:, 0] + theta * x[:, 1]
                g = g0 + theta * W
            if attempt == 3:
                break
            # negligible nodes that Newton drives through the floor are
            # released at once; this lets a free boundary move many cells.
            # Free nodes that would throttle the step to nothing go too.
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(d < 0, (rho - floor) / -d, np.inf)
            release = ~active & (rho + d < floor) & (
                ((g > 0) & (rho <= 1e-8 * rho.max())) | (ratio < 1e-6)
            )
            if not release.any():
                break
            active |= release
        d[active] = -(rho[active] - floor)
        return d, theta, active


def _vw_initial(model: ModelSpec, grid: RadialGrid, floor: float) -> np.ndarray:
    # hydrogen-like profile: attraction beats the gradient term along its ray
    a = 4.0 / model.Z
    rho = (model.Z / model.b) * np.exp(-grid.nodes / a) / (8.0 * np.pi * a**3)
    return np.maximum(rho, floor)


class _VWSolver:
    """Fixed-multiplier vW solves with warm starts across multipliers.

    For beta < 2 the first solve walks down a smoothing ladder for the
    non-differentiable |rho'|^beta; later solves start from the nearest
    cached multiplier and fall back to the ladder only if needed.
    """

    def __init__(self, model, grid, floor, tol, max_iter, kkt_tol):
        self.prob = _VWProblem(model, grid, floor)
        self.model, self.grid, self.floor = model, grid, floor
        self.tol, self.max_iter, self.kkt_tol = tol, max_iter, kkt_tol
        self.cache: dict[float, np.ndarray] = {}
        self.iterations = 0

    def _ladder(self, rho, theta, ladder):
        ok = False
        for delta in ladder:
            self.prob.delta = delta
            stage_tol = self.tol * 1e-3 if delta == 0 else max(self.tol, 1e-8)
            kkt = self.kkt_tol if delta == 0 else 1e-4
            rho, it, ok, _ = self.prob.minimize(rho, theta, stage_tol, self.max_iter, kkt)
            self.iterations += it
        self.prob.delta = 0.0
        return rho, ok

    def ray_start(self, rho: np.ndarray, theta: float) -> np.ndarray:
        """Best multiple s * rho for the energy at multiplier theta."""
        prob, W = self.prob, self.grid.weights
        m = float(W @ rho)

        def phi(logs):
            trial = np.maximum(np.exp(logs) * rho, self.floor)
            return prob.energy(trial) + theta * float(W @ trial)

        res = minimize_scalar(phi, bounds=(np.log(1e-12 / m), np.log(1e3 / m)), method="bounded")
        return np.maximum(np.exp(res.x) * rho, self.floor)

    def solve(self, theta: float, initial=None) -> np.ndarray:
        W = self.grid.weights
        quadratic = self.model.beta == 2
        if quadratic:
            # the gradient term is 1-homogeneous, so the minimizer is zero
            # once no density gains energy along its own ray; the hydrogen-like
            # profile is the ground shape and decides this
            ray = self.ray_start(_vw_initial(self.model, self.grid, self.floor), theta)
            if W @ ray <= VANISHING_MASS:
                rho = np.full(self.grid.n, self.floor)
                self.cache[theta] = rho
                return rho
        full = SMOOTHING_LADDER if not quadratic else (0.0,)
        if initial is not None:
            start, ladder = np.maximum(initial, self.floor), (0.0,)
        elif self._live():
            near = min(self._live(), key=lambda th: abs(th - theta))
            start, ladder = self.cache[near], (0.0,)
        elif quadratic:
            start, ladder = ray, full
        else:
            start, ladder = _vw_initial(self.model, self.grid, self.floor), full
        rho, ok = self._ladder(start, theta, ladder)
        if quadratic and W @ rho <= VANISHING_MASS:
            # below the threshold the minimizer is not zero: restart from
            # the ground shape, which has negative slope along its ray
            rho, ok = self._ladder(ray, theta, full)
            ok = ok and W @ rho > VANISHING_MASS
        if not ok and ladder != full:
            rho, ok = self._ladder(start, theta, full)
        if not ok:
            raise SolverError(
                f"{self.model.family} Newton iteration did not converge",
                {"theta": theta, "iterations": self.iterations},
            )
        self.cache[theta] = rho
        return rho

    def _live(self) -> list[float]:
        # a vanished density is a poor warm start: it stays at the floor
        W = self.grid.weights
        return [th for th, rho in self.cache.items() if W @ rho > VANISHING_MASS]

    def mass(self, theta: float) -> float:
        return float(self.grid.weights @ self.solve(theta))

    def closest_in_mass(self, t: float) -> tuple[float, np.ndarray]:
        W = self.grid.weights
        th = min(self._live(), key=lambda th: abs(np.log(W @ self.cache[th] / t)))
        return th, self.cache[th]


def _solve_vw(model, grid, t, tol, max_iter, floor, initial=None, theta_hint=None, kkt_tol=1e-6):
    solver = _VWSolver(model, grid, floor, tol, max_iter, kkt_tol)
    rho = solver.solve(0.0, initial)
    if t is None or grid.weights @ rho <= t:
        return rho, 0.0, solver.iterations
    guess = theta_hint if theta_hint else 0.05 * model.Z**2
    theta, seen = _mass_root(solver.mass, t, model.Z / grid.r_min, guess, rtol=1e-7)
    _check_monotone(seen, t)
    if theta not in solver.cache:
        solver.solve(theta)
    theta, rho = solver.closest_in_mass(t)
    # the root is only as sharp as the inner solves; finish at exact mass
    rho, it, ok, theta = solver.prob.minimize(rho, theta, tol * 1e-3, max_iter, kkt_tol, mass_target=t)
    if not ok:
        raise SolverError(f"{model.family} mass-constrained polish did not converge", {"theta": theta})
    return rho, theta, solver.iterations + it


# ------------------------------------------------------------ public API


def _finish(model, grid, rho_values, t_req, theta, iters, converged, window, floor=0.0):
    rho = RadialDensity(grid, rho_values)
    value = total_energy(model, rho)
    if not np.isfinite(value):
        raise SolverError("non-finite energy at the final iterate")
    return SingleNucleusSolution(
        model,
        rho,
        value,
        t_req,
        mass(rho),
        float(theta),
        int(iters),
        bool(converged),
        kkt_residual(model, rho, theta, floor),
        tuple(window),
    )


def solve_L(
    model: ModelSpec,
    t: float,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    *,
    max_iter: int = 500,
    tail_window=DEFAULT_TAIL_WINDOW,
    floor: float = VW_FLOOR,
    initial: np.ndarray | None = None,
    theta_hint: float | None = None,
) -> SingleNucleusSolution:
    """Minimize T + b C - Z U subject to rho >= 0 and mass <= t.

    ``initial`` (a density) and ``theta_hint`` (a multiplier) optionally
    warm-start the vW solver.
    Raises SolverError when an iteration fails to converge.
    """
    grid = grid or RadialGrid()
    t_val = None if t is None or t == math.inf else _check_t(t)
    if t_val == 0.0:
        return _zero_solution(model, grid, 0.0, tail_window)
    t_req = math.inf if t_val is None else t_val
    if model.kinetic == "TF" and model.correlation == "C0":
        rho, theta, it = _solve_tf_c0(model, grid, t_val, tol, tail_window)
        return _finish(model, grid, rho, t_req, theta, it, True, tail_window)
    if model.kinetic == "TF":
        rho, theta, it = _solve_tf_d(model, grid, t_val, tol, tail_window, max_iter)
        return _finish(model, grid, rho, t_req, theta, it, True, tail_window)
    rho, theta, it = _solve_vw(model, grid, t_val, tol, max_iter, floor, initial, theta_hint)
    return _finish(model, grid, rho, t_req, theta, it, True, tail_window, floor)


def solve_L_unconstrained(
    model: ModelSpec, grid: RadialGrid | None = None, tol: float = 1e-10, **kw
) -> SingleNucleusSolution:
    """Minimizer without a mass bound (multiplier fixed at zero)."""
    return solve_L(model, math.inf, grid, tol, **kw)
