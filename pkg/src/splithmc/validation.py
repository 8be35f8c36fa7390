"""Acceptance checks, shared by ``splithmc validate`` and the test suite.

Every check returns a :class:`CriterionResult` carrying pass/fail, the measured values and
the runtime. Checks that need the d = 256 Gaussian sweep share one cached run.
"""

from __future__ import annotations

import contextlib
import functools
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from splithmc import integrators
from splithmc.diagnostics import reversible_mean_delta_h
from splithmc.engine import ChainConfig, run_chains
from splithmc.experiments import load_spec, run_experiment, with_overrides
from splithmc.integrators import get_scheme, integrate
from splithmc.oscillator import derive_optimal_b, rho, stability_interval_length
from splithmc.rng import stream
from splithmc.targets import DiagonalGaussianTarget, gaussian_exact_draw
from splithmc.theory import (
    delta_h_moments,
    expected_acceptance_univariate,
    expected_delta_h,
    gupta_acceptance,
    leapfrog_energy_bound,
    quadratic_form,
)

SIX = ("lf", "b035", "blcasa", "pretal", "b040", "b045")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool | None
    measured: dict = field(default_factory=dict)
    tolerance: str = ""
    runtime: float = 0.0
    note: str = ""

    @property
    def status(self) -> str:
        return "SKIP" if self.passed is None else "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        tail = f" [{self.note}]" if self.note else ""
        return (f"criterion {self.number:>2} {self.status}: {self.title} | {shown} | "
                f"tol {self.tolerance} | {self.runtime:.1f}s{tail}")


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_short(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


@contextlib.contextmanager
def named_b_override(**values):
    """Temporarily replace named coefficients, e.g. ``named_b_override(blcasa=0.38)``."""
    saved = dict(integrators.NAMED_B)
    try:
        for k, v in values.items():
            if k not in integrators.NAMED_B:
                raise KeyError(f"unknown scheme label {k!r}")
            integrators.NAMED_B[k] = float(v)
        _gauss256_sweep.cache_clear()
        yield
    finally:
        integrators.NAMED_B.clear()
        integrators.NAMED_B.update(saved)
        _gauss256_sweep.cache_clear()


# --- 1-4: theory ------------------------------------------------------------------


def criterion_stability() -> CriterionResult:
    expected = dict(zip(SIX, (6.0, 4.969, 4.662, 4.584, 4.519, 4.224)))
    measured = {k: stability_interval_length(get_scheme(k)) for k in SIX}
    worst = max(abs(measured[k] - expected[k]) for k in SIX)
    return CriterionResult(1, "stability interval lengths", worst <= 5e-4,
                           {"eta": measured, "max_abs_err": worst}, "5e-4")


def criterion_optimal_b() -> CriterionResult:
    b = derive_optimal_b()
    err = abs(b - 0.38111989033452)
    return CriterionResult(2, "minimax coefficient from rho_inf", err <= 1e-6,
                           {"b": b, "abs_err": err}, "1e-6")


def criterion_leapfrog_bound() -> CriterionResult:
    zetas = np.round(np.arange(1, 20) * 0.1, 10)
    got = rho("leapfrog", zetas)
    err = float(np.max(np.abs(got - leapfrog_energy_bound(zetas))))
    e1 = abs(rho("leapfrog", 1.0) - 1 / 24)
    e05 = abs(rho("leapfrog", 0.5) - 1 / 480)
    worst = max(err, e1, e05)
    return CriterionResult(3, "leapfrog rho equals closed-form bound", worst <= 1e-10,
                           {"max_abs_err": err, "zeta=1": 1 / 24 + e1, "zeta=0.5_err": e05}, "1e-10")


def criterion_quadratic_form(n_cases: int = 1000, n_states: int = 50, seed: int = 4) -> CriterionResult:
    rng = stream(seed, "data")
    target = DiagonalGaussianTarget([1.0])
    labels = SIX + ("leapfrog",)
    etas = {k: stability_interval_length(get_scheme(k)) for k in labels}
    worst_dh = worst_id = 0.0
    for _ in range(n_cases):
        label = labels[rng.integers(len(labels))]
        eps = float(rng.uniform(0.02, 0.95) * etas[label])
        L = int(rng.integers(1, 101))
        q = quadratic_form(label, eps, L)
        theta = rng.standard_normal((n_states, 1))
        p = rng.standard_normal((n_states, 1))
        t1, p1, _, _, _ = integrate(theta, p, target, eps, L, label)
        dh = 0.5 * (t1**2 + p1**2) - 0.5 * (theta**2 + p**2)
        worst_dh = max(worst_dh, float(np.max(np.abs(dh - q.delta_h(theta, p)))))
        worst_id = max(worst_id, abs(q.discriminant_gap))
    ok = worst_dh <= 1e-10 and worst_id <= 1e-10
    return CriterionResult(4, "energy increment quadratic form", ok,
                           {"max_dH_err": worst_dh, "max_identity_err": worst_id,
                            "cases": n_cases * n_states}, "1e-10")


# --- 5-7: stationary ensembles on small Gaussians --------------------------------------


def stationary_ensemble(target, scheme, eps, L, k, n, seed, jitter=0.0):
    """``k`` chains started from exact draws, ``n`` legs each; arrays of shape (n, k)."""
    init = gaussian_exact_draw(target, stream(seed, "init"), size=k)
    cfg = ChainConfig(scheme, eps, L, n_samples=n, randomize_eps=jitter > 0,
                      jitter_halfwidth=jitter if jitter > 0 else 0.05)
    outs = run_chains(target, cfg, init, seeds=[seed * 100003 + r for r in range(k)], watch=[0])
    dh = np.stack([o.delta_h for o in outs], axis=1)
    acc = np.stack([o.accepted for o in outs], axis=1)
    return dh, acc


def _mc_check(per_leg, expected):
    """Mean of (n, k) values vs ``expected``; the standard error comes from the k chain means."""
    chain_means = per_leg.mean(axis=0)
    est = float(chain_means.mean())
    se = float(chain_means.std(ddof=1) / math.sqrt(chain_means.size))
    return est, se, abs(est - expected) <= 3 * se


def univariate_cells():
    """18 (scheme, eps, L) cells: three step lengths across each stability interval."""
    cells = []
    for label in SIX:
        eta = stability_interval_length(get_scheme(label))
        for frac, L in ((0.3, 10), (0.7, 7), (0.92, 3)):
            cells.append((label, round(frac * eta, 6), L))
    return cells


@functools.lru_cache(maxsize=1)
def _univariate_runs(k: int = 1000, n: int = 200):
    target = DiagonalGaussianTarget([1.0])
    runs = []
    for i, (label, eps, L) in enumerate(univariate_cells()):
        dh, acc = stationary_ensemble(target, label, eps, L, k, n, seed=5000 + i)
        runs.append((label, eps, L, expected_delta_h(label, eps, L), dh, acc))
    return runs


def criterion_univariate_acceptance() -> CriterionResult:
    rows, ok = [], True
    for label, eps, L, mu, dh, acc in _univariate_runs():
        pred = expected_acceptance_univariate(mu)
        est, se, good = _mc_check(acc.astype(float), pred)
        ok &= good
        rows.append(f"{label}@{eps:g}x{L}: {est:.4f} vs {pred:.4f} (z={(est - pred) / se:+.2f})")
    spot = expected_acceptance_univariate(100.0)
    ok &= abs(spot - 0.089) < 5e-4
    return CriterionResult(5, "univariate acceptance formula", ok,
                           {"cells": len(rows), "curve(mu=100)": spot, "detail": rows}, "3 MC s.e.")


def criterion_moments() -> CriterionResult:
    rows, ok = [], True
    for label, eps, L, mu, dh, _ in _univariate_runs():
        m2, m3, _ = delta_h_moments(mu)
        e2, se2, g2 = _mc_check(dh**2, m2)
        e3, se3, g3 = _mc_check(dh**3, m3)
        ok &= g2 and g3
        rows.append(f"{label}@{eps:g}x{L}: z2={(e2 - m2) / se2:+.2f} z3={(e3 - m3) / se3:+.2f}")
    return CriterionResult(6, "second and third moments of dH", ok, {"detail": rows}, "3 MC s.e.")


def criterion_negative_fraction(k: int = 1000, n: int = 200) -> CriterionResult:
    cells = [
        (1, "blcasa", 1.2, 5, 0.0), (1, "lf", 2.5, 3, 0.05),
        (4, "lf", 0.5, 10, 0.05), (4, "b045", 0.8, 4, 0.0), (4, "pretal", 1.0, 6, 0.05),
    ]
    rows, ok = [], True
    for i, (d, label, eps, L, jit) in enumerate(cells):
        target = DiagonalGaussianTarget.harmonic(d)
        dh, acc = stationary_ensemble(target, label, eps, L, k, n, seed=7000 + i, jitter=jit)
        est, se, good = _mc_check(acc - 2.0 * (dh < 0), 0.0)
        ok &= good
        rows.append(f"d={d} {label}@{eps:g}x{L}: acc={acc.mean():.4f} "
                    f"2P(dH<0)={2 * np.mean(dh < 0):.4f} z={est / se:+.2f}")
    return CriterionResult(7, "acceptance equals twice P(dH < 0)", ok, {"detail": rows}, "3 MC s.e.")


# --- 8, 9, 11, 12: the d = 256 sweep -------------------------------------------------


@functools.lru_cache(maxsize=1)
def _gauss256_sweep():
    _log("running the d=256 Gaussian sweep (6 schemes x 20 step lengths, N=5000)...")
    spec = load_spec("gauss256")
    return run_experiment(spec, out_dir=None, keep_legs=True, figures=False)


def clt_scaling_runs(n_ad: int = 5000, k: int = 1000, n_chain: int = 200):
    """Independent stationary legs for the eps_d = kappa d^(-5/4) runs of the bundled spec."""
    spec = load_spec("gauss-clt-scaling")
    out = []
    for t in spec.targets:
        d = int(t.split("(")[1].rstrip(")"))
        target = DiagonalGaussianTarget.harmonic(d)
        for label in spec.schemes:
            for eps, L in spec.step_grid(d):
                seed = spec.seed * 1000 + d
                ad_dh, _ = stationary_ensemble(target, label, eps, L, n_ad, 1, seed)
                mv_dh, _ = stationary_ensemble(target, label, eps, L, k, n_chain, seed + 1)
                out.append((d, label, eps, L, ad_dh.ravel(), mv_dh))
    return out


def criterion_clt() -> CriterionResult:
    res = _gauss256_sweep()
    worst, used = 0.0, 0
    for r in res.rows:
        mu = r["mean_dH"]
        if 1e-3 <= mu <= 2:
            used += 1
            worst = max(worst, abs(r["accept_rate"] - gupta_acceptance(mu)))
    ok = used > 0 and worst <= 0.02
    rows = []
    for d, label, eps, L, ad_dh, mv_dh in clt_scaling_runs():
        z = (ad_dh - ad_dh.mean()) / ad_dh.std(ddof=1)
        ad = stats.anderson(z, "norm")
        crit = ad.critical_values[list(ad.significance_level).index(1.0)]
        mean, var = mv_dh.mean(), mv_dh.var(ddof=1)
        rel = abs(var - 2 * mean) / (2 * mean)
        good = ad.statistic < crit and rel <= 0.05
        ok &= good
        rows.append(f"d={d} {label} eps={eps:.3g} L={L}: mu={mean:.3f} AD={ad.statistic:.3f}"
                    f"(crit {crit:.3f}) |var-2mu|/2mu={rel:.3f} {'ok' if good else 'FAIL'}")
    return CriterionResult(8, "high-dimensional acceptance law and dH normality", ok,
                           {"runs_in_range": used, "max_abs_dev": worst, "scaling": rows},
                           "0.02 abs; AD 1%; 5% rel")


def _best_ess_eps(rows, scheme):
    cand = [r for r in rows if r["scheme"] == scheme and np.isfinite(r["ess_x_eps"])]
    return max(cand, key=lambda r: r["ess_x_eps"])


def _row(rows, scheme, L):
    return next(r for r in rows if r["scheme"] == scheme and r["L"] == L)


def criterion_efficiency() -> CriterionResult:
    rows = _gauss256_sweep().rows
    best_b = _best_ess_eps(rows, "BlCaSa")
    best_l = _best_ess_eps(rows, "LF")
    ratio = best_b["ess_x_eps"] / best_l["ess_x_eps"]
    acc_b = _row(rows, "BlCaSa", 360)["accept_rate"]
    acc_l = _row(rows, "LF", 720)["accept_rate"]
    ok = ratio >= 2 and abs(acc_b - 0.90) <= 0.03 and abs(acc_l - 0.82) <= 0.03
    return CriterionResult(9, "BlCaSa vs LF efficiency at d=256", ok, {
        "ratio": ratio, "BlCaSa_best": (best_b["L"], best_b["ess_x_eps"]),
        "LF_best": (best_l["L"], best_l["ess_x_eps"]), "acc_BlCaSa_L360": acc_b,
        "acc_LF_L720": acc_l}, "ratio >= 2; acceptance +-0.03")


def _log_slopes(res, scheme):
    pts = sorted((r.row["eps"], reversible_mean_delta_h([leg[6] for leg in r.legs]))
                 for r in res.results if r.row["scheme"] == scheme)
    eps = np.array([p[0] for p in pts])
    mu = np.array([p[1] for p in pts])
    keep = np.isfinite(mu) & (mu > 0)
    eps, mu = eps[keep], mu[keep]
    slopes = np.diff(np.log(mu)) / np.diff(np.log(eps))
    return eps, mu, slopes


def criterion_plateau() -> CriterionResult:
    res = _gauss256_sweep()
    eps_b, _, s_b = _log_slopes(res, "BlCaSa")
    eps_p, _, s_p = _log_slopes(res, "PrEtAl")
    small = s_p[:3]
    ok = bool(np.min(s_b) < 2) and bool(np.min(small) > 5)
    return CriterionResult(11, "BlCaSa plateau and PrEtAl steep decay", ok, {
        "BlCaSa_min_slope": float(np.min(s_b)),
        "PrEtAl_slopes_smallest_eps": [float(s) for s in small]},
        "BlCaSa slope < 2 somewhere; PrEtAl > 5 at small eps")


def criterion_ess_bands() -> CriterionResult:
    rows = _gauss256_sweep().rows
    ref = {("BlCaSa", 360): (2463, 0.9004), ("PrEtAl", 480): (2777, 0.9382), ("LF", 720): (2328, 0.8192)}
    measured, ok = {}, True
    for (scheme, L), (ess_ref, acc_ref) in ref.items():
        r = _row(rows, scheme, L)
        rel = r["ess_theta1"] / ess_ref - 1
        ok &= abs(rel) <= 0.15 and abs(r["accept_rate"] - acc_ref) <= 0.03
        measured[f"{scheme}_L{L}"] = (r["ess_theta1"], r["accept_rate"])
    return CriterionResult(12, "quoted ESS / acceptance within loose bands", ok, measured,
                           "ESS +-15% rel; acceptance +-0.03",
                           note="exact ESS magnitudes depend on the estimator")


# --- 10: Cox posterior (slow) -----------------------------------------------------


def criterion_cox(n_samples: int = 2000, progress=True) -> CriterionResult:
    base = with_overrides(load_spec("cox"), n_samples=n_samples)
    spec_a = with_overrides(base, experiment_id="cox-c10a", schemes=("blcasa", "lf"), eps_list=(0.25,))
    spec_b = with_overrides(base, experiment_id="cox-c10b", schemes=("pretal",), eps_list=(0.2, 0.05))
    log = (lambda done, tot: _log(f"  cox group {done}/{tot} done")) if progress else None
    _log("running Cox cells: BlCaSa+LF at eps=0.25, PrEtAl at 0.2 and 0.05...")
    ra = run_experiment(spec_a, keep_legs=True, figures=False, progress=log)
    rb = run_experiment(spec_b, keep_legs=True, figures=False, progress=log)
    acc = {r.row["scheme"]: r.row["accept_rate"] for r in ra.results}
    mdh = {r.row["eps"]: reversible_mean_delta_h([leg[6] for leg in r.legs]) for r in rb.results}
    plain = {r.row["eps"]: r.row["mean_dH"] for r in rb.results}
    orders = math.log10(mdh[0.2] / mdh[0.05]) if mdh[0.05] > 0 else float("inf")
    ok = acc["BlCaSa"] >= 0.60 and acc["BlCaSa"] - acc["LF"] >= 0.20 and orders >= 4
    return CriterionResult(10, "Cox posterior at d=4096", ok, {
        "acc_BlCaSa_0.25": acc["BlCaSa"], "acc_LF_0.25": acc["LF"],
        "PrEtAl_mean_dH": mdh, "PrEtAl_plain_mean_dH": plain, "orders_of_magnitude": orders},
        ">= 0.60; gap >= 0.20; >= 4 orders")


CRITERIA = {
    1: criterion_stability,
    2: criterion_optimal_b,
    3: criterion_leapfrog_bound,
    4: criterion_quadratic_form,
    5: criterion_univariate_acceptance,
    6: criterion_moments,
    7: criterion_negative_fraction,
    8: criterion_clt,
    9: criterion_efficiency,
    10: criterion_cox,
    11: criterion_plateau,
    12: criterion_ess_bands,
}
SLOW = {10}


def run_criterion(number: int) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number]()
    except Exception as exc:  # a crash is a failure with the reason attached
        res = CriterionResult(number, CRITERIA[number].__name__, False, {"error": repr(exc)})
    res.runtime = time.perf_counter() - t0
    return res


def run_all(numbers=None, slow: bool = False, echo=None) -> list[CriterionResult]:
    """Run the selected criteria in order; slow ones are skipped unless ``slow``."""
    results = []
    for n in numbers or sorted(CRITERIA):
        if n in SLOW and not slow:
            res = CriterionResult(n, CRITERIA[n].__name__.replace("criterion_", ""), None,
                                  note="slow suite; enable to run")
        else:
            res = run_criterion(n)
        results.append(res)
        if echo:
            echo(res.line())
    return results
