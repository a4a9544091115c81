"""Tables of the single-nucleus value function L(t) with an on-disk cache.

A table holds one row per requested mass bound t: the value L(t), the
multiplier theta(t) (so L'(t) = -theta(t) at saturated rows) and the mass
actually reached.  Derivatives are also estimated by finite differences on
the table so the two estimators can be compared.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .functionals import ModelSpec
from .radial import RadialGrid
from .single_nucleus import SolverError, solve_L, solve_L_unconstrained

CACHE_ENV = "DFTGAMMA_CACHE_DIR"
DEFAULT_T_MIN = 1e-4
DEFAULT_T_MAX = 4.0
DEFAULT_T_COUNT = 97
CONVEXITY_TOL = 1e-6
DERIVATIVE_TOL = 5e-3


def default_t_values(
    model: ModelSpec, t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX, count: int = DEFAULT_T_COUNT
) -> np.ndarray:
    """Geometric grid on [t_min, t_max] plus t = 0.

    The TF+Hartree family gets a uniform refinement on [0.3, 1.2], where L
    flattens and its derivative reaches zero.
    """
    if not (0 < t_min < t_max) or count < 2:
        raise ValueError("need 0 < t_min < t_max and at least two points")
    t = np.geomspace(t_min, t_max, count)
    if model.kinetic == "TF" and model.correlation == "D":
        lo, hi = max(t_min, 0.3), min(t_max, 1.2)
        if lo < hi:
            t = np.concatenate([t, np.round(np.linspace(lo, hi, 46), 12)])
    return np.unique(np.concatenate([[0.0], t]))


@dataclass(frozen=True)
class LRow:
    t: float
    value: float
    theta: float
    t_achieved: float
    converged: bool = True
    free: bool = False  # the unconstrained minimizer, placed at its own mass
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.converged and self.error is None and math.isfinite(self.value)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("t", "value", "theta", "t_achieved"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LRow":
        d = dict(d)
        for k in ("value", "theta", "t_achieved"):
            if d.get(k) is None:
                d[k] = math.nan
        if d.get("t") is None:
            d["t"] = math.inf
        return cls(**d)


@dataclass(frozen=True)
class LTable:
    model: ModelSpec
    grid: RadialGrid
    rows: tuple[LRow, ...] = field(repr=False)

    def __post_init__(self):
        rows = tuple(sorted(self.rows, key=lambda r: (r.t, r.free)))
        object.__setattr__(self, "rows", rows)

    @property
    def fingerprint(self) -> str:
        return table_fingerprint(self.model, self.grid)

    @property
    def good_rows(self) -> list[LRow]:
        return [r for r in self.rows if r.ok]

    @property
    def failed_rows(self) -> list[LRow]:
        return [r for r in self.rows if not r.ok]

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.good_rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.good_rows])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.good_rows])

    def finite_difference_slopes(self) -> np.ndarray:
        """Three-point nonuniform derivative of L; one-sided at the ends."""
        t, L = self.t, self.values
        n = t.size
        out = np.full(n, np.nan)
        if n < 2:
            return out
        out[0] = (L[1] - L[0]) / (t[1] - t[0])
        out[-1] = (L[-1] - L[-2]) / (t[-1] - t[-2])
        h1, h2 = t[1:-1] - t[:-2], t[2:] - t[1:-1]
        out[1:-1] = (
            -h2 / (h1 * (h1 + h2)) * L[:-2]
            + (h2 - h1) / (h1 * h2) * L[1:-1]
            + h1 / (h2 * (h1 + h2)) * L[2:]
        )
        return out

    def derivative_mismatch(self) -> np.ndarray:
        """|finite-difference L' + theta| / (1 + theta) at interior rows.

        Rows whose stencil reaches t = 0 are skipped: L' is unbounded there.
        """
        fd = self.finite_difference_slopes()
        th = self.thetas
        gap = np.abs(fd + th) / (1.0 + np.abs(th))
        keep = np.zeros(gap.size, bool)
        keep[1:-1] = True
        keep[1:-1] &= self.t[:-2] > 0
        return np.where(keep, gap, np.nan)

    def monotone_audit(self, tol: float = 0.0) -> dict:
        L = self.values
        rise = np.diff(L)
        scale = max(abs(L[-1]), 1.0) if L.size else 1.0
        worst = float(rise.max()) if rise.size else 0.0
        return {"passed": bool(worst <= tol * scale + 1e-12 * scale), "max_increase": worst}

    def convexity_audit(self, tol: float = CONVEXITY_TOL) -> dict:
        t, L = self.t, self.values
        if t.size < 3:
            return {"passed": True, "min_second_difference": 0.0, "threshold": 0.0}
        s = np.diff(L) / np.diff(t)
        second = (s[1:] - s[:-1]) * 0.5 * (t[2:] - t[:-2])
        thresh = -tol * abs(L[-1])
        worst = float(second.min())
        return {"passed": bool(worst >= thresh), "min_second_difference": worst, "threshold": thresh}

    def audit(self) -> dict:
        mism = self.derivative_mismatch()
        finite = mism[np.isfinite(mism)]
        zero_row = [r for r in self.good_rows if r.t == 0.0]
        return {
            "monotone": self.monotone_audit(),
            "convexity": self.convexity_audit(),
            "value_at_zero": zero_row[0].value if zero_row else None,
            "max_derivative_mismatch": float(finite.max()) if finite.size else None,
            "failed_rows": [r.t for r in self.failed_rows],
        }

    def passes_audits(self) -> bool:
        a = self.audit()
        return a["monotone"]["passed"] and a["convexity"]["passed"]

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "family": self.model.family,
            "grid": self.grid.fingerprint(),
            "fingerprint": self.fingerprint,
            "rows": [r.to_dict() for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LTable":
        return cls(
            ModelSpec(**d["model"]),
            RadialGrid(**d["grid"]),
            tuple(LRow.from_dict(r) for r in d["rows"]),
        )

    def csv_lines(self) -> list[str]:
        fd = dict(zip(self.t.tolist(), self.finite_difference_slopes().tolist()))
        lines = ["t,L,dL_fd,minus_theta,theta,t_achieved,converged,free"]
        for r in self.rows:
            slope = fd.get(r.t, math.nan) if r.ok else math.nan
            lines.append(
                ",".join(
                    [
                        _g(r.t), _g(r.value), _g(slope), _g(-r.theta), _g(r.theta),
                        _g(r.t_achieved), str(int(r.ok)), str(int(r.free)),
                    ]
                )
            )
        return lines


def _g(x: float) -> str:
    return "%.17g" % x


def table_fingerprint(model: ModelSpec, grid: RadialGrid) -> str:
    blob = json.dumps({"model": model.to_dict(), "grid": grid.fingerprint()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ cache


def resolve_cache_dir(flag: str | os.PathLike | None = None) -> Path:
    """Cache directory: explicit flag, then the environment variable, then ~/.cache."""
    if flag:
        return Path(flag)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "dftgamma"


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class LTableCache:
    """One JSON document per (model, grid) fingerprint; writes merge rows."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = resolve_cache_dir(directory)

    def path(self, model: ModelSpec, grid: RadialGrid) -> Path:
        tag = model.family.replace("+", "-").lower()
        return self.directory / f"ltable-{tag}-{table_fingerprint(model, grid)}.json"

    def load(self, model: ModelSpec, grid: RadialGrid) -> LTable | None:
        p = self.path(model, grid)
        if not p.exists():
            return None
        with open(p) as fh:
            table = LTable.from_dict(json.load(fh))
        if table.model != model or table.grid != grid:
            return None
        return table

    def store(self, table: LTable) -> LTable:
        """Merge ``table`` into the cached document and return the merged table."""
        p = self.path(table.model, table.grid)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p.with_suffix(".lock"), "w") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)
            try:
                old = self.load(table.model, table.grid)
                merged = merge_tables(old, table) if old else table
                atomic_write_text(p, json.dumps(merged.to_dict(), indent=1, sort_keys=True) + "\n")
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)
        return merged


def _t_key(t: float) -> float:
    # t values equal to 12 digits are one row (guards against linspace round-off)
    return float("%.12g" % t)


def merge_tables(old: LTable, new: LTable) -> LTable:
    """Rows of ``new`` replace rows of ``old`` at the same t unless they failed."""
    rows = {(_t_key(r.t), r.free): r for r in old.rows}
    for r in new.rows:
        key = (_t_key(r.t), r.free)
        if r.ok or key not in rows or not rows[key].ok:
            rows[key] = r
    return LTable(new.model, new.grid, tuple(rows.values()))


# ------------------------------------------------------------------ build


def _row(model, t, grid, tol, theta_hint=None) -> LRow:
    try:
        sol = solve_L(model, t, grid, tol, theta_hint=theta_hint)
    except SolverError as exc:
        return LRow(float(t), math.nan, math.nan, math.nan, False, error=str(exc))
    return LRow(float(t), sol.value, sol.theta, sol.t_achieved, sol.converged)


def _row_star(args):
    return _row(*args)


def build_l_table(
    model: ModelSpec,
    t_values=None,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    *,
    cache: LTableCache | None = None,
    workers: int = 1,
    include_free: bool | None = None,
) -> LTable:
    """Solve L(t) on ``t_values`` (default: ``default_t_values``).

    Rows already in ``cache`` are reused.  A failed row is kept with its
    error message instead of aborting the table.  For families with a finite
    ionization threshold (``include_free``, default for Hartree models) the
    unconstrained minimizer is added as a row at its own mass, so the table
    resolves exactly where L becomes flat.
    """
    grid = grid or RadialGrid()
    t_values = default_t_values(model) if t_values is None else np.asarray(t_values, float)
    if t_values.ndim != 1 or np.any(t_values < 0) or np.any(np.diff(t_values) <= 0):
        raise ValueError("t_values must be nonnegative and strictly increasing")
    if include_free is None:
        include_free = model.ionizing
    old = cache.load(model, grid) if cache else None
    have = {_t_key(r.t) for r in old.rows if r.ok and not r.free} if old else set()
    has_free = bool(old and any(r.free and r.ok for r in old.rows))
    todo = [float(t) for t in t_values if _t_key(t) not in have]

    rows: list[LRow] = []
    if include_free and not has_free:
        try:
            sol = solve_L_unconstrained(model, grid, tol)
            rows.append(LRow(sol.t_achieved, sol.value, 0.0, sol.t_achieved, sol.converged, free=True))
        except SolverError as exc:
            rows.append(LRow(math.inf, math.nan, math.nan, math.nan, False, True, str(exc)))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows += list(pool.map(_row_star, [(model, t, grid, tol) for t in todo]))
    else:
        hint = None
        for t in todo:
            row = _row(model, t, grid, tol, hint)
            if row.ok and row.theta > 0:
                hint = row.theta
            rows.append(row)
    table = LTable(model, grid, tuple(rows))
    if old:
        table = merge_tables(old, table)
    if cache:
        table = cache.store(table)
    return table
