"""Experiment specs and the sweep runner behind ``splithmc run``.

A spec is a flat ``key = value`` text file; lists are comma separated and ``#`` starts a
comment. Example::

    experiment_id = gauss256
    target = diag_gaussian(256)
    schemes = lf, b035, blcasa, pretal, b040, b045
    L_list = 320, 360, 400
    tau_end = 5
    n_samples = 5000
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from splithmc.diagnostics import acceptance_vs_energy_scatter, summarize, watch_components
from splithmc.engine import ChainConfig, run_chains
from splithmc.integrators import get_scheme
from splithmc.rng import stream
from splithmc.targets import (
    CoxModelParams,
    CoxTarget,
    DiagonalGaussianTarget,
    cached_cholesky,
    cox_initial_state,
    gaussian_exact_draw,
    generate_cox_data,
    read_cox_dataset,
    write_cox_dataset,
)

SUMMARY_COLUMNS = (
    "target", "scheme", "b", "eps", "L", "tau_end", "seed", "N", "accept_rate", "mean_dH",
    "neg_dH_frac", "ess_theta1", "ess_mid", "ess_last", "ess_sq1", "ess_x_eps", "avg_sq_jump",
    "blowups",
)
LEG_COLUMNS = ("target", "scheme", "eps", "L", "seed", "leg", "delta_h", "accepted", "eps_used")


class SpecError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def default_cache_dir() -> Path:
    return Path(os.environ.get("SPLITHMC_CACHE", Path.home() / ".cache" / "splithmc"))


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep over targets x schemes x step lengths x replications.

    ``targets`` entries are ``diag_gaussian(d)``, ``unit_gaussian_1d``, ``cox`` (synthetic
    data generated from ``cox_data_seed``) or ``cox(path)``. With ``eps_exponent`` set, each
    ``eps_list`` entry is a constant kappa and the step is ``kappa * d**eps_exponent``.
    """

    experiment_id: str
    targets: tuple
    schemes: tuple
    tau_end: float
    eps_list: tuple | None = None
    L_list: tuple | None = None
    n_samples: int = 5000
    n_burnin: int = 0
    seed: int = 0
    replications: int = 1
    watch_components: tuple = ("first", "mid", "last")
    jitter: float = 0.05
    eps_exponent: float | None = None
    keep_legs: bool = False
    lockstep: bool = True
    cox_grid: int = 64
    cox_data_seed: int = 1
    fixed_point: str = "curvature"
    cache_dir: str | None = None

    def __post_init__(self):
        if not self.experiment_id or not re.fullmatch(r"[\w.-]+", self.experiment_id):
            raise SpecError("experiment_id", "must be a non-empty word (letters, digits, _.-)")
        if not self.targets:
            raise SpecError("target", "at least one target is required")
        for t in self.targets:
            _parse_target(t)
        if not self.schemes:
            raise SpecError("schemes", "scheme list is empty")
        for s in self.schemes:
            try:
                get_scheme(s)
            except ValueError as exc:
                raise SpecError("schemes", str(exc)) from exc
        if (self.eps_list is None) == (self.L_list is None):
            raise SpecError("eps_list", "give exactly one of eps_list or L_list")
        if not (self.tau_end > 0 and math.isfinite(self.tau_end)):
            raise SpecError("tau_end", "must be a positive number")
        if self.eps_list is not None and (not self.eps_list or min(self.eps_list) <= 0):
            raise SpecError("eps_list", "needs positive step lengths")
        if self.L_list is not None and (not self.L_list or min(self.L_list) < 1):
            raise SpecError("L_list", "needs positive integers")
        if self.replications < 1:
            raise SpecError("replications", "must be >= 1")
        if self.n_samples < 1 or self.n_burnin < 0:
            raise SpecError("n_samples", "n_samples >= 1 and n_burnin >= 0 required")
        if not 0 <= self.jitter < 1:
            raise SpecError("jitter", "must lie in [0, 1)")
        if self.fixed_point not in ("curvature", "literal"):
            raise SpecError("fixed_point", "must be 'curvature' or 'literal'")
        if self.seed < 0:
            raise SpecError("seed", "must be non-negative")

    def step_grid(self, dim: int):
        """``(eps, L)`` pairs for a target of dimension ``dim``."""
        if self.L_list is not None:
            return [(self.tau_end / L, int(L)) for L in self.L_list]
        out = []
        for e in self.eps_list:
            eps = e * dim**self.eps_exponent if self.eps_exponent is not None else e
            out.append((eps, max(1, round(self.tau_end / eps))))
        return out


_INT = ("n_samples", "n_burnin", "seed", "replications", "cox_grid", "cox_data_seed")
_FLOAT = ("tau_end", "jitter", "eps_exponent")
_BOOL = ("keep_legs", "lockstep")
_STR = ("experiment_id", "fixed_point", "cache_dir")
_ALIASES = {"target": "targets"}


def _split_list(value: str):
    # commas inside parentheses belong to the item, e.g. cox(a,b.txt)
    items, depth, cur = [], 0, ""
    for ch in value:
        if ch == "," and depth == 0:
            items.append(cur.strip())
            cur = ""
            continue
        depth += (ch == "(") - (ch == ")")
        cur += ch
    items.append(cur.strip())
    return tuple(i for i in items if i)


def _convert(key, raw):
    try:
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
        if key in _BOOL:
            if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "yes", "1")
        if key in _STR:
            return raw
        if key == "eps_list":
            return tuple(float(v) for v in _split_list(raw))
        if key == "L_list":
            vals = [float(v) for v in _split_list(raw)]
            if any(v != int(v) for v in vals):
                raise ValueError(raw)
            return tuple(int(v) for v in vals)
        if key in ("targets", "schemes", "watch_components"):
            return _split_list(raw)
    except ValueError:
        raise SpecError(key, f"cannot parse value {raw!r}") from None
    raise SpecError(key, "unknown key")


def parse_spec(text: str, base_dir=None) -> ExperimentSpec:
    """Parse spec text; relative ``cox(path)`` targets resolve against ``base_dir``."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {n}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key in values:
            raise SpecError(key, "given twice")
        values[key] = _convert(key, raw)
    for required in ("experiment_id", "targets", "schemes", "tau_end"):
        if required not in values:
            raise SpecError(required if required != "targets" else "target", "missing")
    if base_dir is not None:
        values["targets"] = tuple(_resolve_target(t, Path(base_dir)) for t in values["targets"])
    return ExperimentSpec(**values)


def _resolve_target(t, base):
    kind, arg = _parse_target(t)
    if kind == "cox" and arg and not Path(arg).is_absolute():
        return f"cox({base / arg})"
    return t


def load_spec(path) -> ExperimentSpec:
    """Load a spec file, or a bundled spec by name (``gauss256``, ``cox``, ...)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.parent == Path("."):
        bundled = resources.files("splithmc") / "specs" / f"{p.name}.cfg"
        if bundled.is_file():
            return parse_spec(bundled.read_text(encoding="utf-8"))
    if not p.is_file():
        raise SpecError("spec", f"no such spec file or bundled spec: {path}")
    return parse_spec(p.read_text(encoding="utf-8"), base_dir=p.parent)


def bundled_specs() -> list[str]:
    folder = resources.files("splithmc") / "specs"
    return sorted(f.name[:-4] for f in folder.iterdir() if f.name.endswith(".cfg"))


def _parse_target(t):
    m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", t)
    if not m:
        raise SpecError("target", f"cannot parse {t!r}")
    kind, arg = m.group(1), m.group(2)
    if kind == "diag_gaussian":
        if arg is None or not arg.strip().isdigit() or int(arg) < 1:
            raise SpecError("target", f"diag_gaussian needs a positive dimension: {t!r}")
        return kind, int(arg)
    if kind == "unit_gaussian_1d" and arg is None:
        return kind, None
    if kind == "cox":
        return kind, (arg.strip() if arg else None)
    raise SpecError("target", f"unknown target {t!r}")


# --- target construction (cached per process) ----------------------------------------

_TARGETS: dict = {}
_INITIAL: dict = {}


def build_target(name: str, spec: ExperimentSpec):
    kind, arg = _parse_target(name)
    key = (name, spec.cox_grid, spec.cox_data_seed)
    if key in _TARGETS:
        return _TARGETS[key]
    cache = Path(spec.cache_dir) if spec.cache_dir else default_cache_dir()
    if kind == "diag_gaussian":
        target = DiagonalGaussianTarget.harmonic(arg)
    elif kind == "unit_gaussian_1d":
        target = DiagonalGaussianTarget([1.0])
    elif arg:
        x, params, _ = read_cox_dataset(arg)
        target = CoxTarget(params, x, cache_dir=cache)
    else:
        params = CoxModelParams.for_grid(spec.cox_grid)
        chol = cached_cholesky(params, cache)
        data_path = cache / f"cox_data_{spec.cox_grid}_{params.digest()}_seed{spec.cox_data_seed}.txt"
        if data_path.exists():
            x, _, _ = read_cox_dataset(data_path)
        else:
            x = generate_cox_data(params, spec.cox_data_seed, chol=chol)
            data_path.parent.mkdir(parents=True, exist_ok=True)
            write_cox_dataset(data_path, x, params, spec.cox_data_seed)
        target = CoxTarget(params, x, chol=chol)
    _TARGETS[key] = target
    return target


def initial_state(target, name: str, seed: int, spec: ExperimentSpec) -> np.ndarray:
    """Exact draw for Gaussians; the fixed-point state for the Cox posterior."""
    key = (name, spec.cox_grid, spec.cox_data_seed, seed, spec.fixed_point)
    if key not in _INITIAL:
        if isinstance(target, DiagonalGaussianTarget):
            _INITIAL[key] = gaussian_exact_draw(target, stream(seed, "init"))
        else:
            _INITIAL[key] = cox_initial_state(target, seed, spec.fixed_point)
    return _INITIAL[key]


# --- cells ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    index: int
    target: str
    scheme: str
    eps: float
    L: int
    replication: int
    seed: int


def enumerate_cells(spec: ExperimentSpec) -> list[Cell]:
    cells = []
    for t in spec.targets:
        kind, arg = _parse_target(t)
        dim = arg if kind == "diag_gaussian" else 1 if kind == "unit_gaussian_1d" else spec.cox_grid**2
        if kind == "cox" and arg:
            dim = read_cox_dataset(arg)[1].dim
        for s in spec.schemes:
            for eps, L in spec.step_grid(dim):
                for r in range(spec.replications):
                    cells.append(Cell(len(cells), t, s, eps, L, r, spec.seed + r))
    return cells


def group_cells(spec: ExperimentSpec, cells) -> list[list[Cell]]:
    """Cells that can share a lockstep ensemble on non-Gaussian targets.

    Grouping depends only on the experiment settings, so results do not depend on the worker count.
    """
    groups: dict = {}
    for c in cells:
        kind, _ = _parse_target(c.target)
        if spec.lockstep and kind == "cox":
            key = (c.target, c.eps, c.L, c.replication, get_scheme(c.scheme).is_leapfrog)
        else:
            key = ("single", c.index)
        groups.setdefault(key, []).append(c)
    return list(groups.values())


@dataclass
class CellResult:
    cell: Cell
    row: dict
    legs: list = field(default_factory=list)
    summary: object = None


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_group(spec: ExperimentSpec, group, keep_legs: bool = False) -> list[CellResult]:
    first = group[0]
    target = build_target(first.target, spec)
    theta0 = initial_state(target, first.target, first.seed, spec)
    d = target.dim
    watch = _watch_indices(spec.watch_components, d)
    config = ChainConfig(
        scheme=first.scheme, epsilon=first.eps, L=first.L, n_samples=spec.n_samples,
        n_burnin=spec.n_burnin, seed=first.seed, randomize_eps=spec.jitter > 0,
        jitter_halfwidth=spec.jitter, target_id=first.target,
    )
    schemes = [c.scheme for c in group] if len(group) > 1 else None
    outputs = run_chains(target, config, np.tile(theta0, (len(group), 1)),
                         seeds=[c.seed for c in group], schemes=schemes,
                         watch=sorted(set(watch.values())))
    results = []
    for cell, out in zip(group, outputs):
        s = summarize(out, watch, label=cell.scheme)
        scheme = get_scheme(cell.scheme)
        row = {
            "target": cell.target, "scheme": scheme.name, "b": scheme.b, "eps": cell.eps,
            "L": cell.L, "tau_end": cell.eps * cell.L, "seed": cell.seed, "N": s.n,
            "accept_rate": s.acceptance_rate, "mean_dH": s.mean_delta_h,
            "neg_dH_frac": s.neg_dh_fraction,
            "ess_theta1": s.ess.get("first", math.nan), "ess_mid": s.ess.get("mid", math.nan),
            "ess_last": s.ess.get("last", math.nan), "ess_sq1": s.ess.get("first_sq", math.nan),
            "ess_x_eps": s.ess_per_eps, "avg_sq_jump": s.avg_sq_jump, "blowups": s.blowups,
        }
        legs = []
        if keep_legs:
            legs = [(cell.target, scheme.name, cell.eps, cell.L, cell.seed, i, h, a, e)
                    for i, (h, a, e) in enumerate(zip(out.delta_h, out.accepted, out.eps_used))]
        results.append(CellResult(cell, row, legs, s))
    return results


def _watch_indices(names, d):
    defaults = watch_components(d)
    alias = {"first": "theta1", "mid": "mid", "last": "last"}
    out = {}
    for n in names:
        if n in alias:
            out[n] = defaults[alias[n]]
        else:
            try:
                j = int(n)
            except ValueError:
                raise SpecError("watch_components", f"unknown component {n!r}") from None
            if not 1 <= j <= d:
                raise SpecError("watch_components", f"component {j} outside 1..{d}")
            out[str(j)] = j - 1
    # the first watched component is the one whose ESS drives ess_x_eps
    return out


def _run_group_job(args):
    spec, group, keep_legs = args
    return run_group(spec, group, keep_legs)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    results: list
    files: dict

    @property
    def rows(self):
        return [r.row for r in self.results]


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1, keep_legs: bool | None = None,
                   figures: bool = True, progress=None) -> ExperimentResult:
    """Run every cell of ``spec`` and write ``<id>_summary.csv`` (and extras) to ``out_dir``.

    Args:
        spec: The experiment.
        out_dir: Output directory; nothing is written when ``None``.
        jobs: Worker processes for the cell pool.
        keep_legs: Also write the per-leg Delta H log (defaults to ``spec.keep_legs``).
        figures: Render PNG figures next to the CSV files.
        progress: Optional callable ``progress(done_groups, total_groups)``.

    Returns:
        The summary rows (in cell order) and the paths written.
    """
    keep = spec.keep_legs if keep_legs is None else keep_legs
    groups = group_cells(spec, enumerate_cells(spec))
    results = []
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, res in enumerate(pool.map(_run_group_job, [(spec, g, keep) for g in groups])):
                results.extend(res)
                if progress:
                    progress(i + 1, len(groups))
    else:
        for i, g in enumerate(groups):
            results.extend(run_group(spec, g, keep))
            if progress:
                progress(i + 1, len(groups))
    results.sort(key=lambda r: r.cell.index)
    files = {}
    if out_dir is not None:
        files = write_outputs(spec, results, Path(out_dir), keep, figures)
    return ExperimentResult(spec, results, files)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, rows, columns):
    path.write_text(rows_to_csv(rows, columns), encoding="utf-8")


def write_outputs(spec, results, out: Path, keep_legs: bool, figures: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    eid = spec.experiment_id
    files = {"summary": out / f"{eid}_summary.csv"}
    write_csv(files["summary"], [r.row for r in results], SUMMARY_COLUMNS)
    scatter = acceptance_vs_energy_scatter([(r.row["scheme"], r.summary) for r in results])
    for s, r in zip(scatter, results):
        s["target"] = r.cell.target
    files["scatter"] = out / f"{eid}_scatter.csv"
    write_csv(files["scatter"], scatter,
              ("target", "scheme", "eps", "mean_dH", "accept_rate", "univariate", "gupta"))
    if keep_legs:
        files["legs"] = out / f"{eid}_legs.csv"
        write_csv(files["legs"], [leg for r in results for leg in r.legs], LEG_COLUMNS)
    if figures:
        from splithmc import plotting

        files.update(plotting.experiment_figures(eid, [r.row for r in results], scatter, out))
    return files


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    valid = {f.name for f in fields(ExperimentSpec)}
    unknown = set(kw) - valid
    if unknown:
        raise SpecError(sorted(unknown)[0], "unknown key")
    return replace(spec, **kw)
