"""Command-line entry point: ``splithmc run | theory | gen-cox-data | validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from splithmc import __version__

EXIT_OK, EXIT_FAIL, EXIT_SPEC = 0, 1, 2


def _emit(name: str, rows, columns, out: Path | None) -> Path | None:
    from splithmc.experiments import rows_to_csv

    text = rows_to_csv(rows, columns)
    if out is None:
        sys.stdout.write(text)
        return None
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}", file=sys.stderr)
    return path


def cmd_run(args) -> int:
    from splithmc.experiments import SpecError, load_spec, run_experiment

    try:
        spec = load_spec(args.spec)
    except (SpecError, OSError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC

    def progress(done, total):
        if not args.quiet:
            print(f"\r{spec.experiment_id}: {done}/{total} cells", end="", file=sys.stderr, flush=True)

    res = run_experiment(spec, out_dir=args.out, jobs=args.jobs,
                         keep_legs=True if args.keep_legs else None,
                         figures=not args.no_figures, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    for path in res.files.values():
        print(path)
    return EXIT_OK


def _theory_stability(args):
    from splithmc.integrators import NAMED_B, get_scheme
    from splithmc.oscillator import stability_interval_length

    rows = []
    for label in ("leapfrog",) + tuple(NAMED_B):
        s = get_scheme(label)
        rows.append([label, s.name, s.b, s.c, stability_interval_length(s)])
    _emit("stability", rows, ("label", "scheme", "b", "c", "eta"), args.out)


def _theory_rho(args):
    from splithmc.integrators import NAMED_B, get_scheme
    from splithmc.oscillator import rho, stability_interval_length

    labels = args.schemes or list(NAMED_B)
    zeta = np.linspace(0, args.zeta_max, args.points + 1)[1:]
    cols = {}
    for label in labels:
        s = get_scheme(label)
        eta = stability_interval_length(s)
        vals = np.full(zeta.shape, np.nan)
        inside = zeta < eta
        try:
            vals[inside] = rho(s, zeta[inside])
        except ValueError:
            for i in np.nonzero(inside)[0]:
                try:
                    vals[i] = rho(s, zeta[i])
                except ValueError:
                    pass
        cols[s.name] = vals
    rows = [[z] + [cols[k][i] for k in cols] for i, z in enumerate(zeta)]
    _emit("rho_curves", rows, ["zeta"] + list(cols), args.out)
    if args.out:
        from splithmc.plotting import curves_figure

        curves_figure({k: (zeta, v) for k, v in cols.items()}, Path(args.out) / "rho_curves.png",
                      "scaled step eps/sigma", "rho", logy=True)


def _theory_optimal_b(args):
    from splithmc.oscillator import derive_optimal_b

    b, grid, trace = derive_optimal_b(return_trace=True)
    rows = [["grid", bb, v] for bb, v in grid] + [["refine", bb, v] for bb, v in trace]
    rows.append(["result", b, trace[-1][1] if trace else np.nan])
    _emit("optimal_b_trace", rows, ("stage", "b", "rho_inf"), args.out)
    print(f"optimal b = {b:.14f}", file=sys.stderr)
    if args.out:
        from splithmc.plotting import curves_figure

        gb, gv = zip(*grid)
        curves_figure({"rho_inf(b)": (gb, gv)}, Path(args.out) / "optimal_b.png", "b", "rho_inf",
                      logy=True)


def _theory_curves(args):
    from splithmc.theory import expected_acceptance_univariate, gupta_acceptance

    mu = np.logspace(-4, 2, args.points)
    a1 = expected_acceptance_univariate(mu)
    a2 = gupta_acceptance(mu)
    _emit("acceptance_curves", np.column_stack([mu, a1, a2]).tolist(), ("mu", "univariate", "gupta"),
          args.out)
    if args.out:
        from splithmc.plotting import curves_figure

        curves_figure({"univariate": (mu, a1), "2 Phi(-sqrt(mu/2))": (mu, a2)},
                      Path(args.out) / "acceptance_curves.png", "E(dH)", "expected acceptance",
                      logx=True)


def _theory_quadform(args):
    from splithmc.integrators import get_scheme, integrate
    from splithmc.oscillator import stability_interval_length
    from splithmc.rng import stream
    from splithmc.targets import DiagonalGaussianTarget
    from splithmc.theory import quadratic_form

    rng = stream(args.seed, "data")
    target = DiagonalGaussianTarget([1.0])
    labels = ("leapfrog", "lf", "b035", "blcasa", "pretal", "b040", "b045")
    rows = []
    for _ in range(args.cases):
        label = labels[rng.integers(len(labels))]
        eps = float(rng.uniform(0.02, 0.95) * stability_interval_length(get_scheme(label)))
        L = int(rng.integers(1, 101))
        q = quadratic_form(label, eps, L)
        th = rng.standard_normal((50, 1))
        p = rng.standard_normal((50, 1))
        t1, p1, _, _, _ = integrate(th, p, target, eps, L, label)
        dh = 0.5 * (t1**2 + p1**2 - th**2 - p**2)
        err = float(np.max(np.abs(dh - q.delta_h(th, p))))
        rows.append([label, eps, L, q.A, q.B, q.C, err, q.discriminant_gap])
    _emit("quadform_report", rows, ("scheme", "eps", "L", "A", "B", "C", "max_dH_err", "identity_gap"),
          args.out)


THEORY = {
    "stability": _theory_stability,
    "rho": _theory_rho,
    "optimal-b": _theory_optimal_b,
    "curves": _theory_curves,
    "quadform": _theory_quadform,
}


def cmd_theory(args) -> int:
    THEORY[args.what](args)
    return EXIT_OK


def cmd_gen_cox_data(args) -> int:
    from splithmc.experiments import default_cache_dir
    from splithmc.targets import CoxModelParams, cached_cholesky, generate_cox_data, write_cox_dataset

    params = CoxModelParams.for_grid(args.grid)
    chol = cached_cholesky(params, args.cache_dir or default_cache_dir())
    x = generate_cox_data(params, args.seed, chol=chol)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"cox_data_{args.grid}_seed{args.seed}.txt"
    write_cox_dataset(path, x, params, args.seed)
    print(path)
    print(f"{int(x.sum())} points on a {args.grid}x{args.grid} grid", file=sys.stderr)
    return EXIT_OK


def _parse_overrides(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"expected label=b, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = float(v)
    return out


def cmd_validate(args) -> int:
    from splithmc import validation

    try:
        only = [int(x) for x in args.only.split(",")] if args.only else None
        overrides = _parse_overrides(args.override_b)
    except ValueError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    if only and any(n not in validation.CRITERIA for n in only):
        print(f"unknown criterion in {args.only!r}", file=sys.stderr)
        return EXIT_SPEC
    with validation.named_b_override(**overrides):
        results = validation.run_all(only, slow=args.slow, echo=print)
    rows = [[r.number, r.status, r.title, round(r.runtime, 3), json.dumps(r.measured, default=_jsonable)]
            for r in results]
    if args.out:
        _emit("validation", rows, ("criterion", "status", "title", "runtime_s", "measured"), Path(args.out))
    failed = [r.number for r in results if r.passed is False]
    print(f"{sum(r.passed is True for r in results)} passed, {len(failed)} failed, "
          f"{sum(r.passed is None for r in results)} skipped")
    return EXIT_FAIL if failed else EXIT_OK


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splithmc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment spec (file path or bundled name)")
    p.add_argument("spec")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--keep-legs", action="store_true", help="also write the per-leg dH log")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("theory", help="closed-form tables for Gaussian targets")
    p.add_argument("what", choices=sorted(THEORY))
    p.add_argument("--out", type=Path, default=None, help="directory (default: CSV to stdout)")
    p.add_argument("--schemes", nargs="*", help="labels for 'rho' (default: the six named)")
    p.add_argument("--zeta-max", type=float, default=6.0)
    p.add_argument("--points", type=int, default=600)
    p.add_argument("--cases", type=int, default=20, help="random cases for 'quadform'")
    p.add_argument("--seed", type=int, default=4)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("gen-cox-data", help="synthetic counts for the Cox posterior")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--cache-dir", type=Path, default=None)
    p.set_defaults(func=cmd_gen_cox_data)

    p = sub.add_parser("validate", help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--slow", action="store_true", help="include the d=4096 Cox check")
    p.add_argument("--override-b", action="append", metavar="LABEL=B",
                   help="replace a named coefficient, e.g. blcasa=0.38")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--jobs", type=int, default=1, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
