"""PNG figures written next to the CSV tables of a sweep or theory command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from splithmc.theory import expected_acceptance_univariate, gupta_acceptance  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _by(rows, key):
    out = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    return out


def sweep_figure(rows, path: Path, title: str = "") -> Path:
    """One panel per scheme: acceptance and ESS(theta_1) percentages, mean dH on a log axis."""
    schemes = _by(rows, "scheme")
    n = len(schemes)
    ncol = min(n, 3)
    nrow = -(-n // ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4.2 * ncol, 3.2 * nrow), squeeze=False)
    for ax, (name, rs) in zip(axes.flat, schemes.items()):
        rs = sorted(rs, key=lambda r: r["eps"])
        eps = np.array([r["eps"] for r in rs])
        acc = 100 * np.array([r["accept_rate"] for r in rs])
        ess = 100 * np.array([r["ess_theta1"] / r["N"] for r in rs])
        mdh = np.array([r["mean_dH"] for r in rs])
        ax.plot(eps, acc, "^-", color="tab:red", label="acceptance %")
        ax.plot(eps, ess, "s-", color="tab:green", label="ESS(theta1) %")
        ax.set_ylim(0, 105)
        ax.set_xlabel("step length")
        ax.set_title(name)
        ax2 = ax.twinx()
        ok = np.isfinite(mdh) & (mdh > 0)
        if ok.any():
            ax2.semilogy(eps[ok], mdh[ok], "d--", color="tab:blue", label="mean dH")
        ax2.set_ylabel("mean dH")
    for ax in list(axes.flat)[n:]:
        ax.set_visible(False)
    axes.flat[0].legend(loc="lower left", fontsize=7)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def scatter_figure(scatter, path: Path, title: str = "") -> Path:
    """Acceptance against mean dH for every run, over both theory curves."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    mu = np.logspace(-4, 1.5, 300)
    ax.semilogx(mu, 100 * np.asarray(gupta_acceptance(mu)), "k-", label="2 Phi(-sqrt(mu/2))")
    ax.semilogx(mu, 100 * np.asarray(expected_acceptance_univariate(mu)), "k:",
                label="1 - (2/pi) arctan sqrt(mu/2)")
    for name, rs in _by(scatter, "scheme").items():
        pts = [(r["mean_dH"], r["accept_rate"]) for r in rs if np.isfinite(r["mean_dH"]) and r["mean_dH"] > 0]
        if pts:
            x, y = zip(*pts)
            ax.semilogx(x, 100 * np.array(y), "o", ms=4, label=name)
    ax.set_xlabel("mean dH")
    ax.set_ylabel("acceptance %")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def efficiency_figure(rows, path: Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, rs in _by(rows, "scheme").items():
        rs = sorted(rs, key=lambda r: r["eps"])
        ax.plot([r["eps"] for r in rs], [r["ess_x_eps"] for r in rs], "o-", ms=3, label=name)
    ax.set_xlabel("step length")
    ax.set_ylabel("ESS x eps")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def experiment_figures(eid: str, rows, scatter, out: Path) -> dict:
    files = {}
    for i, (target, rs) in enumerate(_by(rows, "target").items()):
        suffix = "" if i == 0 and len({r["target"] for r in rows}) == 1 else f"_{i}"
        files[f"sweep{suffix}"] = sweep_figure(rs, out / f"{eid}_sweep{suffix}.png", target)
        files[f"efficiency{suffix}"] = efficiency_figure(rs, out / f"{eid}_efficiency{suffix}.png", target)
    files["scatter_fig"] = scatter_figure(scatter, out / f"{eid}_scatter.png", eid)
    return files


def curves_figure(columns: dict, path: Path, xlabel: str, ylabel: str, logx=False, logy=False) -> Path:
    """Generic line plot: ``columns`` maps name -> (x, y)."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, (x, y) in columns.items():
        ax.plot(x, y, label=name)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return _save(fig, path)
