"""Command-line front end.

Every command validates its whole configuration first (exit 1 listing every
problem), computes, and only then writes its files, each by an atomic
rename, so a failed run leaves no partial artifacts.  Numerical failures
exit with 2.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .allocation import NucleiConfig, allocate, ionization_threshold, kkt_certificate
from .functionals import PRESETS, ModelSpec, preset
from .gamma import (
    DEFAULT_LADDER,
    RECOVERY_LADDER,
    OverlapError,
    RecoverySequenceSpec,
    recovery_energy,
    single_nucleus_collapse,
)
from .ltable import (
    DEFAULT_T_COUNT,
    DEFAULT_T_MAX,
    DEFAULT_T_MIN,
    LTableCache,
    atomic_write_text,
    build_l_table,
    default_t_values,
)
from .radial import RadialGrid
from .scaling import GbEvaluator, OutOfRangeError, gb, gb_derivative
from .single_nucleus import SolverError, solve_L
from .verify import CHECKS, run_checks

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
COMMANDS = ("solve-single", "l-table", "gb", "allocate", "threshold", "gamma-check", "verify")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    """Flat run configuration; the keys double as config-file keys."""

    model: str = "tf-d"
    beta: float = 2.0
    b: float = 1.0
    z: list = field(default_factory=lambda: [1.0])
    x: list | None = None
    m: float | None = None
    t: float | None = None
    alpha: list | None = None
    eps: list | None = None
    tmin: float = DEFAULT_T_MIN
    tmax: float = DEFAULT_T_MAX
    tcount: int = DEFAULT_T_COUNT
    rmin: float = 1e-8
    rmax: float = 50.0
    nodes: int = 4096
    tol: float = 1e-10
    cache_dir: str | None = None
    out: str | None = None
    format: str = "json"
    seed: int = 0
    workers: int = 1
    criteria: list | None = None

    def violations(self, command: str) -> list[str]:
        out = []
        key = self.model.lower().replace("_", "-").replace("+", "-")
        if key not in PRESETS:
            out.append(f"model: unknown {self.model!r}, choose from {sorted(PRESETS)}")
        if not _finite(self.beta) or not (1.0 <= self.beta <= 2.0):
            out.append(f"beta: need 1 <= beta <= 2, got {self.beta}")
        if not _finite(self.b) or self.b <= 0:
            out.append(f"b: need b > 0, got {self.b}")
        if not self.z or any(not _finite(v) or v <= 0 for v in self.z):
            out.append(f"z: need at least one positive charge, got {self.z}")
        if self.x is not None:
            if len(self.x) != len(self.z or []):
                out.append(f"x: need one position per charge, got {len(self.x)} for {len(self.z or [])}")
            elif any(len(p) != 3 or not all(_finite(c) for c in p) for p in self.x):
                out.append("x: positions are finite triples")
            elif len({tuple(p) for p in self.x}) != len(self.x):
                out.append("x: positions must be pairwise distinct")
        if self.m is not None and (not _finite(self.m) or self.m < 0):
            out.append(f"m: need m >= 0, got {self.m}")
        if self.t is not None and (math.isnan(self.t) or self.t < 0):
            out.append(f"t: need t >= 0, got {self.t}")
        if self.alpha is not None and any(not _finite(a) or a < 0 for a in self.alpha):
            out.append("alpha: values must be nonnegative")
        if self.eps is not None and (not self.eps or any(not _finite(e) or e <= 0 for e in self.eps)):
            out.append("eps: values must be positive")
        if not (0 < self.tmin < self.tmax) or not _finite(self.tmax):
            out.append(f"tmin/tmax: need 0 < tmin < tmax, got {self.tmin}, {self.tmax}")
        if int(self.tcount) != self.tcount or self.tcount < 2:
            out.append(f"tcount: need an integer >= 2, got {self.tcount}")
        if not (0 < self.rmin < self.rmax) or not _finite(self.rmax):
            out.append(f"rmin/rmax: need 0 < rmin < rmax, got {self.rmin}, {self.rmax}")
        if int(self.nodes) != self.nodes or self.nodes < 64:
            out.append(f"nodes: need an integer >= 64, got {self.nodes}")
        if not _finite(self.tol) or self.tol <= 0:
            out.append(f"tol: need tol > 0, got {self.tol}")
        if self.format not in ("json", "csv"):
            out.append(f"format: json or csv, got {self.format!r}")
        if int(self.workers) != self.workers or self.workers < 1:
            out.append(f"workers: need a positive integer, got {self.workers}")
        if self.criteria is not None and any(c not in CHECKS for c in self.criteria):
            out.append(f"criteria: choose from {sorted(CHECKS)}")
        out += self._command_violations(command)
        return out

    def _command_violations(self, command: str) -> list[str]:
        out = []
        single = command in ("solve-single", "threshold") or (command == "gamma-check" and len(self.z or []) == 1)
        if single and len(self.z or []) != 1:
            out.append(f"z: {command} takes exactly one charge")
        if command == "solve-single" and self.t is None:
            out.append("t: solve-single needs --t (use inf for no mass bound)")
        if command == "gb" and not self.alpha:
            out.append("alpha: gb needs at least one --alpha")
        if command == "allocate" and self.m is None:
            out.append("m: allocate needs --m")
        if command == "gamma-check":
            if single and self.t is None:
                out.append("t: the single-nucleus check needs --t")
            if not single:
                if self.x is None:
                    out.append("x: several nuclei need --x positions")
                if self.alpha is None and self.m is None:
                    out.append("alpha/m: give --alpha per nucleus or --m to allocate")
                if self.alpha is not None and len(self.alpha) != len(self.z or []):
                    out.append("alpha: need one mass per nucleus")
        return out

    @property
    def grid(self) -> RadialGrid:
        return RadialGrid(self.rmin, self.rmax, int(self.nodes))

    def model_spec(self, b: float | None = None, Z: float = 1.0) -> ModelSpec:
        return preset(self.model, self.beta, self.b if b is None else b, Z)

    @property
    def normalized(self) -> ModelSpec:
        return self.model_spec(1.0, 1.0)

    @property
    def cache(self) -> LTableCache:
        return LTableCache(self.cache_dir)


def _finite(v) -> bool:
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config_file(path: str) -> dict:
    """Flat JSON object whose keys are RunConfig fields ("cache-dir" and "cache_dir" both work)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config: the file must hold one flat JSON object"])
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(doc) - CONFIG_KEYS)
    nested = sorted(k for k, v in doc.items() if isinstance(v, dict))
    problems = [f"config: unknown key {k!r}" for k in unknown] + [f"config: {k!r} must not be nested" for k in nested]
    if problems:
        raise ConfigError(problems)
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    values = asdict(RunConfig())
    if args.config:
        values.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        cfg = RunConfig(**values)
        for key in ("beta", "b", "tmin", "tmax", "rmin", "rmax", "tol"):
            setattr(cfg, key, float(getattr(cfg, key)))
        for key in ("m", "t"):
            if getattr(cfg, key) is not None:
                setattr(cfg, key, float(getattr(cfg, key)))
        for key in ("z", "alpha", "eps"):
            if getattr(cfg, key) is not None:
                setattr(cfg, key, [float(v) for v in getattr(cfg, key)])
        if cfg.x is not None:
            cfg.x = [[float(c) for c in p] for p in cfg.x]
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"config: malformed value ({exc})"]) from exc
    problems = cfg.violations(args.command)
    if problems:
        raise ConfigError(problems)
    return cfg


# ----------------------------------------------------------------- output


def dumps(doc) -> str:
    """JSON with shortest round-trip floats; inf and nan become strings."""
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def _clean(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item"):
        return _clean(x.item())
    return x


def _g(x: float) -> str:
    return "%.17g" % x


@dataclass
class Artifacts:
    """Files to write (name -> text) and what goes to stdout in each format."""

    files: dict
    json_doc: dict
    csv_lines: list | None = None
    failed: bool = False  # checks ran but did not all pass

    def emit(self, cfg: RunConfig) -> None:
        if cfg.out:
            outdir = Path(cfg.out)
            for name, text in self.files.items():
                atomic_write_text(outdir / name, text)
        if cfg.format == "csv" and self.csv_lines is not None:
            sys.stdout.write("\n".join(self.csv_lines) + "\n")
        else:
            sys.stdout.write(dumps(self.json_doc))


# --------------------------------------------------------------- commands


def cmd_solve_single(cfg: RunConfig) -> Artifacts:
    model = cfg.model_spec(Z=cfg.z[0])
    sol = solve_L(model, cfg.t, cfg.grid, cfg.tol)
    summary = sol.summary()
    csv = ["r,rho"] + [f"{_g(r)},{_g(v)}" for r, v in zip(sol.rho.grid.nodes, sol.rho.values)]
    files = {"solution.json": dumps(summary), "density.csv": "\n".join(csv) + "\n"}
    return Artifacts(files, summary, csv)


def _table(cfg: RunConfig, model: ModelSpec | None = None):
    model = model or cfg.normalized
    t = default_t_values(model, cfg.tmin, cfg.tmax, int(cfg.tcount))
    return build_l_table(model, t, cfg.grid, cfg.tol, cache=cfg.cache, workers=int(cfg.workers))


def cmd_l_table(cfg: RunConfig) -> Artifacts:
    table = _table(cfg)
    audit = table.audit()
    summary = {
        "family": table.model.family,
        "model": table.model.to_dict(),
        "grid": table.grid.fingerprint(),
        "fingerprint": table.fingerprint,
        "cache_file": str(cfg.cache.path(table.model, table.grid)),
        "rows": len(table.rows),
        "failed_rows": len(table.failed_rows),
        "monotone_audit": "pass" if audit["monotone"]["passed"] else "fail",
        "convexity_audit": "pass" if audit["convexity"]["passed"] else "fail",
        "audit": audit,
    }
    csv = table.csv_lines()
    files = {"ltable.csv": "\n".join(csv) + "\n", "ltable.json": dumps(summary)}
    if table.failed_rows:
        raise SolverError(f"{len(table.failed_rows)} table rows failed", {"failed": audit["failed_rows"]})
    return Artifacts(files, summary, csv)


def cmd_gb(cfg: RunConfig) -> Artifacts:
    base = GbEvaluator(_table(cfg), cfg.b, 1.0)
    rows = []
    for Z in cfg.z:
        ev = base.with_charges(cfg.b, Z)
        for a in cfg.alpha:
            g = gb(ev, a)
            dg = gb_derivative(ev, a) if a > 0 else math.nan
            rows.append({"Z": Z, "alpha": a, "g": g, "dg": dg})
    csv = ["Z,alpha,g,dg"] + [",".join(_g(r[k]) for k in ("Z", "alpha", "g", "dg")) for r in rows]
    doc = {"family": base.model.family, "b": cfg.b, "values": rows}
    return Artifacts({"gb.json": dumps(doc), "gb.csv": "\n".join(csv) + "\n"}, doc, csv)


def _nuclei(cfg: RunConfig, m: float | None = None) -> NucleiConfig:
    positions = tuple(tuple(p) for p in cfg.x) if cfg.x is not None else None
    return NucleiConfig(tuple(cfg.z), cfg.m if m is None else m, cfg.model_spec(), positions)


def cmd_allocate(cfg: RunConfig) -> Artifacts:
    nuclei = _nuclei(cfg)
    table = _table(cfg)
    evs = nuclei.evaluators(table)
    result = allocate(nuclei, evs)
    cert = kkt_certificate(result, evs)
    doc = {"family": table.model.family, "b": cfg.b, "charges": list(cfg.z), **result.to_dict(), "kkt": cert}
    csv = ["Z,alpha"] + [f"{_g(z)},{_g(a)}" for z, a in zip(cfg.z, result.alphas)]
    if not cert["passed"]:
        raise SolverError("allocation failed its KKT certificate", doc)
    return Artifacts({"allocation.json": dumps(doc)}, doc, csv)


def cmd_threshold(cfg: RunConfig) -> Artifacts:
    rep = ionization_threshold(cfg.model_spec(Z=cfg.z[0]), cfg.b, cfg.z[0], cfg.grid)
    doc = rep.to_dict()
    return Artifacts({"threshold.json": dumps(doc)}, doc, None)


def cmd_gamma_check(cfg: RunConfig) -> Artifacts:
    if len(cfg.z) == 1:
        ladder = cfg.eps or list(DEFAULT_LADDER)
        rep = single_nucleus_collapse(cfg.model_spec(), cfg.b, cfg.z[0], cfg.t, ladder, cfg.grid, cfg.tol)
        doc = {"kind": "single-nucleus", **rep.to_dict(), "passed": rep.passes()}
        csv = ["epsilon,G_eps,G_eps_direct,mass_outside"] + [
            ",".join(_g(v if v is not None else math.nan) for v in (r.eps, r.rescaled, r.direct, r.mass_outside))
            for r in rep.rows
        ]
    else:
        alphas = cfg.alpha
        m = cfg.m if cfg.m is not None else sum(alphas)
        nuclei = _nuclei(cfg, m)
        if alphas is None:
            alphas = allocate(nuclei, _table(cfg)).alphas
        spec = RecoverySequenceSpec(nuclei, tuple(alphas), tuple(cfg.eps or RECOVERY_LADDER), cfg.grid, cfg.tol)
        rep = recovery_energy(spec)
        doc = {"kind": "recovery", **rep.to_dict()}
        csv = rep.csv_lines()
    files = {"gamma.json": dumps(doc), "gamma.csv": "\n".join(csv) + "\n"}
    return Artifacts(files, doc, csv)


def cmd_verify(cfg: RunConfig) -> Artifacts:
    results = run_checks(cfg.criteria, cache=cfg.cache, seed=int(cfg.seed))
    for r in results:
        sys.stderr.write("\n".join(r.lines()) + "\n")
    doc = {"passed": all(r.passed for r in results), "criteria": [r.to_dict() for r in results]}
    csv = ["criterion,passed"] + [f"{r.number},{int(r.passed)}" for r in results]
    return Artifacts({"verify.json": dumps(doc)}, doc, csv, failed=not doc["passed"])


HANDLERS = {
    "solve-single": cmd_solve_single,
    "l-table": cmd_l_table,
    "gb": cmd_gb,
    "allocate": cmd_allocate,
    "threshold": cmd_threshold,
    "gamma-check": cmd_gamma_check,
    "verify": cmd_verify,
}


# ------------------------------------------------------------------ parser


def _triple(text: str) -> list:
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three coordinates, got {text!r}")
    return [float(p) for p in parts]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="flat JSON file with defaults for any of the flags below")
    add("--model", choices=sorted(PRESETS), help="model family (default tf-d)")
    add("--beta", type=float, help="gradient exponent of the vW family, 1 <= beta <= 2")
    add("--b", type=float, help="correlation strength b > 0")
    add("--z", type=float, action="append", help="nuclear charge (repeat for several nuclei)")
    add("--x", type=_triple, action="append", help='nucleus position "x,y,z" (repeat)')
    add("--m", type=float, help="total electron mass")
    add("--t", type=float, help="mass bound of the single-nucleus problem (inf: none)")
    add("--alpha", type=float, action="append", help="electron mass at a nucleus (repeat)")
    add("--eps", type=float, action="append", help="semiclassical parameter (repeat for a ladder)")
    add("--tmin", type=float, help="smallest positive table mass")
    add("--tmax", type=float, help="largest table mass")
    add("--tcount", type=int, help="number of geometric table masses")
    add("--rmin", type=float, help="inner grid radius")
    add("--rmax", type=float, help="outer grid radius")
    add("--nodes", type=int, help="number of grid nodes")
    add("--tol", type=float, help="solver tolerance")
    add("--cache-dir", dest="cache_dir", help="table cache directory (else $DFTGAMMA_CACHE_DIR)")
    add("--out", help="directory for output files")
    add("--format", choices=("json", "csv"), help="stdout format")
    add("--seed", type=int, help="seed for randomized checks")
    add("--workers", type=int, help="processes for table builds")
    add("--criteria", type=int, action="append", help="verify: run only these criteria (repeat)")

    parser = argparse.ArgumentParser(prog="dftgamma", description="Semiclassical limit of orbital-free DFT models.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve-single": "minimize the single-nucleus energy at mass bound t",
        "l-table": "build or load the cached table of the normalized value function L",
        "gb": "evaluate g_b(Z, alpha) and its derivative from the table",
        "allocate": "distribute the electron mass among nuclei",
        "threshold": "ionization threshold of one nucleus",
        "gamma-check": "eps-collapse (one nucleus) or recovery energies (several)",
        "verify": "run the acceptance checks",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        sys.stderr.write("configuration error:\n" + "".join(f"  - {p}\n" for p in exc.problems))
        return EXIT_CONFIG
    try:
        art = HANDLERS[args.command](cfg)
    except (ValueError, OutOfRangeError) as exc:
        if isinstance(exc, OverlapError):
            sys.stderr.write(f"numerical failure: {exc}\n")
            return EXIT_NUMERIC
        sys.stderr.write(f"configuration error:\n  - {exc}\n")
        return EXIT_CONFIG
    except SolverError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        if exc.report:
            sys.stderr.write(dumps(exc.report))
        return EXIT_NUMERIC
    art.emit(cfg)
    return EXIT_NUMERIC if art.failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
