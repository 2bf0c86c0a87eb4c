"""Delimited output and figure rendering for pipeline results.

CSV cells are written with ``repr`` so float values round-trip exactly
and repeated runs diff clean.  ``render_report`` scans an output
directory for the pipeline CSVs it knows about and renders a matplotlib
figure next to each, plus a short plain-text summary table.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _cell(x):
    if isinstance(x, float):
        return repr(float(x))    # plain-float repr round-trips exactly
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    """Write rows (sequences aligned with ``header``) deterministically."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
    return path


def read_csv(path):
    """Read a CSV written by ``write_csv``: (header, list of float rows)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    return header, rows


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def fig_rb_convergence(csv_path, png_path):
    _, rows = read_csv(csv_path)
    n = [r[0] for r in rows]
    bound = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(n, bound, "o-")
    ax.set_xlabel("basis size N")
    ax.set_ylabel("max output bound over trial")
    ax.set_title("Greedy convergence")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, png_path)


def fig_kl_spectrum(csv_path, png_path):
    _, rows = read_csv(csv_path)
    k = [r[0] for r in rows]
    lam = [max(r[1], 1e-300) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(k, lam, ".-")
    ax.set_xlabel("mode index k")
    ax.set_ylabel("eigenvalue")
    ax.set_title("Covariance spectrum")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, png_path)


def fig_uq(csv_path, png_path):
    header, rows = read_csv(csv_path)
    col = {name: i for i, name in enumerate(header)}
    ks = sorted({r[col["K"]] for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for which, ax in zip(("delta_E", "delta_V"), axes):
        for k in ks:
            sel = [r for r in rows if r[col["K"]] == k]
            sel.sort(key=lambda r: r[col["N"]])
            ax.semilogy([r[col["N"]] for r in sel],
                        [r[col[which]] for r in sel],
                        "o-", label=f"K={int(k)}")
        ax.set_xlabel("basis size N")
        ax.set_ylabel(which)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    axes[0].set_title("mean bound")
    axes[1].set_title("variance bound")
    return _save(fig, png_path)


def fig_cv_sweep(csv_path, png_path):
    header, rows = read_csv(csv_path)
    col = {name: i for i, name in enumerate(header)}
    n = [r[col["n"]] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.semilogy(n, [r[col["min_norm_var"]] for r in rows], "+",
                label="min", markersize=9)
    ax.semilogy(n, [r[col["mean_norm_var"]] for r in rows], "x",
                label="mean", markersize=8)
    ax.semilogy(n, [r[col["max_norm_var"]] for r in rows], "o",
                fillstyle="none", label="max", markersize=8)
    ax.semilogy(n, [r[col["mean_raw_norm_var"]] for r in rows], "k--",
                label="no control (mean)")
    ax.set_xlabel("basis size N")
    ax.set_ylabel("Var$_M$ / E$_M^2$")
    ax.set_title("Control-variate reduction over the test sample")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, png_path)


def fig_effectivity(csv_path, png_path):
    header, rows = read_csv(csv_path)
    col = {name: i for i, name in enumerate(header)}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    etas = [(i, r[col["effectivity"]], r[col["ceiling"]])
            for i, r in enumerate(rows) if r[col["effectivity"]] == r[col["effectivity"]]]
    if etas:
        ax.semilogy([e[0] for e in etas], [e[1] for e in etas], "x",
                    label="effectivity")
        ax.semilogy([e[0] for e in etas], [e[2] for e in etas], ".",
                    label="certified ceiling")
        ax.axhline(1.0, color="k", lw=0.8)
        ax.legend(fontsize=8)
    ax.set_xlabel("sample index")
    ax.set_ylabel("bound / error")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, png_path)


_RENDERERS = {
    "rb_convergence.csv": ("rb_convergence.png", fig_rb_convergence),
    "kl_spectrum.csv": ("kl_spectrum.png", fig_kl_spectrum),
    "uq_run.csv": ("uq_bounds.png", fig_uq),
    "cv_sweep.csv": ("cv_sweep.png", fig_cv_sweep),
    "rb_effectivity.csv": ("rb_effectivity.png", fig_effectivity),
}


def render_report(outdir):
    """Render a figure next to every known CSV present in ``outdir``.

    Also writes ``summary.txt`` listing the tail rows of each table.
    Returns the list of files written.
    """
    outdir = Path(outdir)
    written = []
    lines = []
    for name, (png, renderer) in sorted(_RENDERERS.items()):
        src = outdir / name
        if not src.exists():
            continue
        written.append(renderer(src, outdir / png))
        header, rows = read_csv(src)
        lines.append(f"== {name} ({len(rows)} rows)")
        lines.append(",".join(header))
        for row in rows[-5:]:
            lines.append(",".join(_cell(x) for x in row))
        lines.append("")
    summary = outdir / "summary.txt"
    summary.write_text("\n".join(lines))
    written.append(summary)
    return written
