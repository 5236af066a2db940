"""CSV writers, the merged per-fold summary table and matplotlib figures."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import DataError  # noqa: E402

LODO_FIELDS = ("method", "fold", "target", "accuracy", "precision", "recall", "f1", "cov_gap")
BENCH_FIELDS = ("method", "avg_time_s", "throughput", "accuracy")
SWEEP_FIELDS = ("lambda", "gamma", "accuracy", "f1")


def write_csv(rows, path, fields=None):
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return v


# -- experiment outputs ------------------------------------------------------------


def lodo_rows(reports):
    reports = reports.values() if isinstance(reports, dict) else reports
    return [row for rep in reports for row in rep.table()]


def write_lodo(reports, out_dir, name="lodo"):
    out_dir = Path(out_dir)
    rows = lodo_rows(reports)
    csv_path = write_csv(rows, out_dir / f"{name}.csv", LODO_FIELDS)
    fig_path = plot_fold_bars(rows, out_dir / f"{name}_f1.png")
    return csv_path, fig_path


def write_sweep(sweep, out_dir):
    out_dir = Path(out_dir)
    csv_path = write_csv(sweep.rows(), out_dir / "sweep.csv", SWEEP_FIELDS)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(sweep.surface, origin="lower", cmap="viridis")
    ax.set_xticks(range(len(sweep.gamma_grid)), [f"{g:g}" for g in sweep.gamma_grid])
    ax.set_yticks(range(len(sweep.lam_grid)), [f"{v:g}" for v in sweep.lam_grid])
    ax.set_xlabel("gamma")
    ax.set_ylabel("lambda")
    for i in range(len(sweep.lam_grid)):
        for j in range(len(sweep.gamma_grid)):
            ax.text(j, i, f"{sweep.surface[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="accuracy (%)")
    fig.tight_layout()
    fig_path = out_dir / "sweep.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path, fig_path


def write_bench(rows, out_dir):
    out_dir = Path(out_dir)
    rows = list(rows)
    csv_path = write_csv(rows, out_dir / "bench.csv", BENCH_FIELDS)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar([r["method"] for r in rows], [r["throughput"] for r in rows], color="tab:blue")
    ax.set_ylabel("samples / s")
    fig.tight_layout()
    fig_path = out_dir / "bench.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path, fig_path


def write_history(history, out_dir, name="history"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    history.write_csv(csv_path)
    history.write_csv(out_dir / f"{name}_steps.csv", steps=True)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ep = history.column("epoch")
    for key in ("cls", "adapt", "align", "total", "val_loss"):
        a1.plot(ep, history.column(key), label=key)
    a1.set_xlabel("epoch")
    a1.set_yscale("symlog", linthresh=1e-3)
    a1.legend(fontsize=7)
    a2.plot(ep, history.column("val_f1"), color="tab:green")
    a2.set_xlabel("epoch")
    a2.set_ylabel("validation weighted F1 (%)")
    fig.tight_layout()
    fig_path = out_dir / f"{name}.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path, fig_path


def plot_fold_bars(rows, path, metric="f1"):
    methods = list(dict.fromkeys(r["method"] for r in rows))
    folds = list(dict.fromkeys(r["fold"] for r in rows))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(folds) * max(1, len(methods) / 2)), 3.5))
    for k, m in enumerate(methods):
        vals = {r["fold"]: float(r[metric]) for r in rows if r["method"] == m}
        xs = np.arange(len(folds)) + k * width
        ax.bar(xs, [vals.get(f, np.nan) for f in folds], width, label=m)
    ax.set_xticks(np.arange(len(folds)) + 0.4 - width / 2, folds)
    ax.set_ylabel(f"{metric} (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


# -- merged summary ------------------------------------------------------------------


def summarize(csv_paths, metric="f1"):
    """Merge LODO CSVs into one fold-by-method table of ``metric``.

    Returns ``(methods, folds, table)`` where ``table[fold][method]`` is a
    float; the ``Average`` fold comes last.
    """
    rows = [r for p in csv_paths for r in read_csv(p)]
    if not rows:
        raise DataError("no report rows to summarize")
    missing = {"method", "fold", metric} - set(rows[0])
    if missing:
        raise DataError(f"report CSV lacks columns {sorted(missing)}")
    methods = list(dict.fromkeys(r["method"] for r in rows))
    folds = list(dict.fromkeys(r["fold"] for r in rows if r["fold"] != "Average")) + ["Average"]
    table = {f: {} for f in folds}
    for r in rows:
        table[r["fold"]][r["method"]] = float(r[metric])
    return methods, folds, table


def write_summary(csv_paths, out_dir, metric="f1"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods, folds, table = summarize(csv_paths, metric)
    rows = [{"fold": f, **{m: table[f].get(m, "") for m in methods}} for f in folds]
    csv_path = write_csv(rows, out_dir / "summary.csv", ["fold"] + methods)
    width = max(len(m) for m in methods + ["Average"]) + 2
    lines = [f"Weighted {metric.upper()} (%) per held-out domain", ""]
    lines.append("fold".ljust(10) + "".join(m.rjust(width) for m in methods))
    for f in folds:
        cells = "".join((f"{table[f][m]:.2f}" if m in table[f] else "-").rjust(width) for m in methods)
        lines.append(f.ljust(10) + cells)
    txt_path = out_dir / "summary.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    flat = [{"method": m, "fold": f, metric: table[f][m]} for f in folds for m in methods if m in table[f]]
    fig_path = plot_fold_bars(flat, out_dir / "summary.png", metric)
    return csv_path, txt_path, fig_path
