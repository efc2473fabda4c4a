"""CSV and figure output for the command-line workflows.

CSV dialect: comma-separated, '.' decimal point, LF line endings, header
row mandatory, floats at full precision so replays are byte-identical.
Figures are rendered to PNG next to the delimited output; they are a
convenience view and carry no data of their own.
"""

from __future__ import annotations

import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def plot_paths(paths, path, max_paths: int = 8):
    fig, ax = plt.subplots(figsize=(7, 4))
    m = paths[0].states.shape[1]
    for p, sp in enumerate(paths[:max_paths]):
        for c in range(m):
            label = f"x_{c + 1}" if p == 0 else None
            ax.plot(sp.times, sp.states[:, c], lw=0.8, alpha=0.85, label=label)
        for ev in sp.events:
            if ev.kind == "large":
                ax.axvline(ev.time, color="k", lw=0.4, alpha=0.3)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.set_title(f"{min(len(paths), max_paths)} of {len(paths)} paths "
                 "(vertical lines: large jumps)")
    if m <= 4:
        ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_cloud(samples, path, title=""):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if samples.shape[1] == 1:
        ax.hist(samples[:, 0], bins=60, density=True, color="steelblue")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    else:
        ax.plot(samples[:, 0], samples[:, 1], ".", ms=1.5, alpha=0.4)
        ax.set_xlabel("x_1")
        ax.set_ylabel("x_2")
    ax.set_title(title)
    return _save(fig, path)


def plot_periodicity(report, path):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    k = np.arange(report.distances.size)
    ax.errorbar(k, report.distances, yerr=report.distance_ses, fmt="o-", ms=3,
                lw=0.9, label="d_k")
    ax.axhline(report.null_value, color="gray", ls="--", lw=0.9, label="null")
    ax.axhspan(0, report.band_edge, color="gray", alpha=0.15,
               label="null + 3 SE band")
    ax.set_yscale("log")
    ax.set_xlabel("period index k")
    ax.set_ylabel("law distance")
    ax.legend(fontsize=8)
    ax.set_title(f"consecutive-period law distances "
                 f"(first in band: k={report.first_in_band})")
    return _save(fig, path)


def plot_cesaro(report, path, target=None):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    j = np.arange(1, report.partial_averages.size + 1)
    ax.errorbar(j, report.partial_averages, yerr=report.ses, fmt="-", lw=1.0)
    if target is not None:
        ax.axhline(target, color="gray", ls="--", lw=0.9)
    ax.set_xlabel("number of periods j")
    ax.set_ylabel("partial average A_j")
    ax.set_title("ergodic running averages over period marks")
    return _save(fig, path)


def plot_lyapunov(report, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].plot(report.radii, report.max_lv, "o-", lw=1.0)
    axes[0].axhline(report.thresholds.h2_threshold, color="gray", ls="--", lw=0.8)
    axes[0].set_xscale("log")
    axes[0].set_yscale("symlog")
    axes[0].set_xlabel("shell radius R")
    axes[0].set_ylabel("max LV on shell")
    axes[0].set_title(f"h2_ok={report.h2_ok}")
    axes[1].plot(report.radii, report.min_v, "s-", color="darkgreen", lw=1.0)
    axes[1].set_xscale("log")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("shell radius R")
    axes[1].set_ylabel("min V on shell")
    axes[1].set_title(f"coercive_ok={report.coercive_ok}")
    return _save(fig, path)


def plot_feller(report, path, s0=0.0):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(report.times, report.ratios, yerr=report.ses, fmt="o", ms=4,
                label="observed ratio")
    tt = np.linspace(report.times[0], report.times[-1], 200)
    ax.plot(tt, report.m_hat / np.sqrt(tt - s0), "-", color="firebrick", lw=1.0,
            label="dominating envelope")
    ax.plot(tt, report.m_ls / np.sqrt(tt - s0), "--", color="gray", lw=0.9,
            label="least-squares shape")
    ax.set_xlabel("t")
    ax.set_ylabel("Lipschitz ratio")
    ax.legend(fontsize=8)
    ax.set_title("semigroup gradient probe")
    return _save(fig, path)


def plot_picard(report, path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    i = np.arange(1, report.distances.size + 1)
    ax.semilogy(i, np.maximum(report.distances, 1e-300), "o-", lw=1.0)
    ax.set_xlabel("iterate")
    ax.set_ylabel("sup distance d_i")
    ax.set_title(f"Picard iterate distances (diverged={report.diverged})")
    return _save(fig, path)


def plot_bel(estimate, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.errorbar([0], [estimate.value], yerr=[3 * estimate.se], fmt="o", capsize=4)
    ax.set_xticks([])
    ax.set_ylabel("directional gradient estimate")
    ax.set_title(f"value = {estimate.value:.5g} (+- 3 SE)")
    return _save(fig, path)
