"""Run outputs: delimited reports, JSON manifests, and rendered figures.

The CSV files are the canonical machine-readable outputs and are written
with repr-formatted floats so identical runs produce byte-identical
files. Figures (PNG) are rendered next to them for quick inspection;
they carry no information the CSVs lack.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EVAL_COLUMNS = ("model", "time_step", "auc_mean", "auc_std", "params", "ratio_vs_teacher")
LOG_COLUMNS = ("time_step", "epoch", "L_S", "L_F", "L_D", "wall_ms")
SWEEP_COLUMNS = ("axis_value", "auc_mean", "auc_std", "params")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    """Write rows (sequences aligned with `columns`) deterministically."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_eval_report(path, rows):
    return write_csv(path, EVAL_COLUMNS, rows)


def write_training_log(path, log_rows):
    rows = [(r.time_step, r.epoch, r.loss_task, r.loss_match, r.loss_total, r.wall_ms)
            for r in log_rows]
    return write_csv(path, LOG_COLUMNS, rows)


def write_manifest(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    return path


def read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_run_figures(outdir, eval_rows, teacher_log, student_log) -> list:
    """AUC-by-step, loss-curve, and parameter-count figures for one run.

    `eval_rows` are EVAL_COLUMNS tuples. Returns the figure paths written.
    """
    figdir = os.path.join(outdir, "figures")
    os.makedirs(figdir, exist_ok=True)
    written = []

    by_model: dict = {}
    for model, step, auc_mean, auc_std, params, _ in eval_rows:
        by_model.setdefault(model, []).append((int(step), float(auc_mean), float(auc_std), int(params)))

    fig, ax = plt.subplots(figsize=(6, 4))
    for model, rows in by_model.items():
        rows.sort()
        steps = [r[0] for r in rows]
        means = [r[1] for r in rows]
        stds = [r[2] for r in rows]
        ax.errorbar(steps, means, yerr=stds, marker="o", capsize=3, label=model)
    ax.set_xlabel("online time step")
    ax.set_ylabel("test AUC")
    ax.set_title("Link prediction by online step")
    ax.legend()
    ax.grid(alpha=0.3)
    path = os.path.join(figdir, "auc_by_step.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, log in (("teacher", teacher_log), ("student", student_log)):
        if not log:
            continue
        per_epoch: dict = {}
        for r in log:
            per_epoch.setdefault(r.epoch, []).append(r.loss_total)
        epochs = sorted(per_epoch)
        ax.plot(epochs, [sum(per_epoch[e]) / len(per_epoch[e]) for e in epochs], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("Training loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    path = os.path.join(figdir, "training_loss.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for model, rows in by_model.items():
        rows.sort()
        ax.plot([r[0] for r in rows], [r[3] / 1e6 for r in rows], marker="s", label=model)
    ax.set_xlabel("online time step")
    ax.set_ylabel("trainable parameters (millions)")
    ax.set_title("Model size by online step")
    ax.legend()
    ax.grid(alpha=0.3)
    path = os.path.join(figdir, "params_by_step.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def render_sweep_figure(outdir, axis: str, rows) -> str:
    """One curve of AUC (with std error bars) against the swept axis."""
    figdir = os.path.join(outdir, "figures")
    os.makedirs(figdir, exist_ok=True)
    rows = sorted(rows, key=lambda r: float(r[0]))
    xs = [float(r[0]) for r in rows]
    means = [float(r[1]) for r in rows]
    stds = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel(axis)
    ax.set_ylabel("mean test AUC")
    ax.set_title(f"Sensitivity to {axis}")
    ax.grid(alpha=0.3)
    path = os.path.join(figdir, f"sweep_{axis}.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
