"""Command-line entry points: ingest, run, sweep.

`ingest` buckets a temporal edge list into snapshots and serializes them.
`run` executes the full pipeline: teacher training on the offline prefix,
online student training with distillation, link-prediction evaluation of
both models at every online step, and report/figure/checkpoint output.
`sweep` repeats `run` over one axis (gamma, window, embed_dim, heads),
reusing the ingested graph and the trained teacher, since every swept
axis only affects the student.

The worker count for sweep points comes from DYGRAPHDISTILL_WORKERS
(default 1). All outputs of one run live in its own directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DyGraphDistillError, ParseError
from .evaluation import compression_report, evaluate_step
from .graphs import (
    DynamicGraph,
    is_graph_manifest,
    load_dynamic_graph,
    load_edge_stream,
    save_dynamic_graph,
)
from .losses import LossConfig
from .model import ModelConfig
from .reporting import (
    SWEEP_COLUMNS,
    render_run_figures,
    render_sweep_figure,
    write_csv,
    write_eval_report,
    write_manifest,
    write_training_log,
)
from .sampling import synth_dynamic_sbm
from .train import (
    TrainConfig,
    student_anchor_steps,
    teacher_step_embeddings,
    train_student,
    train_teacher,
)

SWEEP_AXES = ("gamma", "window", "embed_dim", "heads")

WORKERS_ENV = "DYGRAPHDISTILL_WORKERS"


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def build_graph(cfg: ExperimentConfig) -> DynamicGraph:
    if cfg.dataset == "synthetic":
        g = synth_dynamic_sbm(cfg.synth_n, cfg.synth_communities, cfg.synth_p_in,
                              cfg.synth_p_out, cfg.synth_T, cfg.synth_churn, seed=cfg.seed)
        g.m = cfg.m
    elif is_graph_manifest(cfg.dataset):
        g = load_dynamic_graph(cfg.dataset, m=cfg.m)
    else:
        g = load_edge_stream(cfg.dataset, bucket_width=cfg.bucket_width,
                             bucket_count=cfg.bucket_count, m=cfg.m)
    if not (1 <= g.m < g.T):
        raise ConfigError(f"m={g.m} is invalid for {g.T} snapshots")
    return g


def model_configs(cfg: ExperimentConfig) -> tuple[ModelConfig, ModelConfig]:
    teacher = ModelConfig(
        dim=cfg.teacher_dim,
        window=cfg.effective_teacher_window,
        heads_structural=cfg.teacher_heads,
        heads_temporal=cfg.teacher_temporal_heads or cfg.teacher_heads,
        dropout=cfg.dropout,
        dtype=cfg.precision,
    )
    student = ModelConfig(
        dim=cfg.student_dim,
        window=cfg.student_window,
        heads_structural=cfg.student_heads,
        heads_temporal=cfg.student_temporal_heads or cfg.student_heads,
        dropout=cfg.dropout,
        dtype=cfg.precision,
    )
    return teacher, student


def loss_config(cfg: ExperimentConfig) -> LossConfig:
    return LossConfig(w_neg=cfg.w_neg, neg_per_pos=cfg.neg_per_pos, gamma=cfg.gamma,
                      tau=cfg.tau, candidate_set_size=cfg.candidate_set_size,
                      distill_mode=cfg.distill_mode)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, epochs=cfg.epochs, anchors_per_batch=cfg.anchors_per_batch,
                       walk_len=cfg.walk_len, walks_per_node=cfg.walks_per_node,
                       context=cfg.context, neg_power=cfg.neg_power)


def _evaluate_model(name, embeddings_by_anchor, window_len, g, cfg, param_count_by_anchor):
    """Per-anchor evaluation rows plus the skipped-anchor list."""
    rows, skipped = [], []
    for t, h in embeddings_by_anchor.items():
        ordinal = t - (g.m - 1) + 1
        result = evaluate_step(h, g, t, window_len, seeds=cfg.eval_seeds,
                               master_seed=cfg.seed)
        if result is None:
            skipped.append(ordinal)
            continue
        rows.append((name, ordinal, result.auc_mean, result.auc_std,
                     param_count_by_anchor[t], 0.0))
    return rows, skipped


def run_experiment(cfg: ExperimentConfig, outdir: str, g: DynamicGraph | None = None,
                   teacher_result=None, teacher_rows=None) -> dict:
    """Execute one full run into `outdir`; returns a summary dict.

    `g`, `teacher_result` and `teacher_rows` can be injected by the sweep
    driver so the graph and the trained teacher are reused across points.
    """
    os.makedirs(outdir, exist_ok=True)
    stage = "ingest"
    try:
        if g is None:
            g = build_graph(cfg)
        teacher_cfg, student_cfg = model_configs(cfg)
        loss_cfg = loss_config(cfg)
        tr_cfg = train_config(cfg)

        stage = "train-teacher"
        if teacher_result is None:
            teacher_tr_cfg = replace(tr_cfg, epochs=cfg.effective_teacher_epochs)
            teacher_result = train_teacher(g, teacher_cfg, loss_cfg, teacher_tr_cfg,
                                           seed=cfg.seed)
        teacher = teacher_result.model

        stage = "train-student"
        student_result = train_student(g, teacher, student_cfg, loss_cfg, tr_cfg,
                                       seed=cfg.seed, epochs=cfg.effective_student_epochs)

        stage = "evaluate"
        skipped: dict = {}
        if teacher_rows is None:
            teacher_embeddings = teacher_step_embeddings(g, teacher)
            teacher_counts = {t: teacher.parameter_count() for t in teacher_embeddings}
            teacher_rows, teacher_skipped = _evaluate_model(
                "teacher", teacher_embeddings, teacher.config.window, g, cfg, teacher_counts)
            skipped["teacher"] = teacher_skipped
        student_rows, student_skipped = _evaluate_model(
            "student", student_result.embeddings, student_cfg.window, g, cfg,
            student_result.param_counts)
        skipped["student"] = student_skipped

        teacher_count = teacher.parameter_count()
        eval_rows = []
        for name, ordinal, auc_mean, auc_std, params, _ in teacher_rows + student_rows:
            eval_rows.append((name, ordinal, auc_mean, auc_std, params,
                              params / teacher_count))
        eval_rows.sort(key=lambda r: (r[0], r[1]))

        stage = "report"
        report_path = write_eval_report(os.path.join(outdir, "eval_report.csv"), eval_rows)
        write_training_log(os.path.join(outdir, "training_log_teacher.csv"),
                           teacher_result.log)
        write_training_log(os.path.join(outdir, "training_log_student.csv"),
                           student_result.log)
        teacher.save(os.path.join(outdir, "teacher.npz"), global_index=g.global_index)
        student_result.model.save(os.path.join(outdir, "student.npz"),
                                  global_index=g.global_index)
        anchors = student_anchor_steps(g)
        ratios = compression_report({
            "teacher": [teacher_count] * len(anchors),
            "student": [student_result.param_counts[t] for t in anchors
                        if t in student_result.param_counts],
        })
        figures = []
        if cfg.figures:
            figures = render_run_figures(outdir, eval_rows, teacher_result.log,
                                         student_result.log)
        write_manifest(os.path.join(outdir, "manifest.json"), {
            "version": __version__,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "eval_seeds": cfg.eval_seeds,
            "input_hash": g.content_hash(),
            "outputs": {
                "eval_report": "eval_report.csv",
                "training_logs": ["training_log_teacher.csv", "training_log_student.csv"],
                "checkpoints": ["teacher.npz", "student.npz"],
                "figures": [os.path.relpath(f, outdir) for f in figures],
            },
            "skipped_steps": skipped,
            "compression_averages": ratios.averages,
        })
        return {
            "graph": g,
            "teacher_result": teacher_result,
            "student_result": student_result,
            "teacher_rows": teacher_rows,
            "eval_rows": eval_rows,
            "report_path": report_path,
        }
    except DyGraphDistillError as exc:
        raise RuntimeError(f"stage {stage!r} failed: {exc}") from exc


def _sweep_overrides(axis: str, value: float) -> dict:
    if axis == "gamma":
        return {"gamma": float(value)}
    if axis == "window":
        return {"student_window": int(value)}
    if axis == "embed_dim":
        return {"student_dim": int(value)}
    if axis == "heads":
        return {"student_heads": int(value), "student_temporal_heads": int(value)}
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    try:
        if is_graph_manifest(args.input):
            g = load_dynamic_graph(args.input, m=args.split)
        else:
            g = load_edge_stream(args.input, bucket_width=args.bucket_width,
                                 bucket_count=args.bucket_count, m=args.split)
    except ParseError as exc:
        print(f"ingest: {exc}", file=sys.stderr)
        return 2
    path = save_dynamic_graph(g, args.out)
    print(f"wrote {path} ({g.T} snapshots, split m={g.m}, hash {g.content_hash()[:12]})")
    for i, s in enumerate(g.snapshots):
        print(f"  snapshot {i}: {s.n_nodes} nodes, {s.n_edges} edges")
    return 0


def cmd_run(args) -> int:
    overrides: dict = {}
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.window is not None:
        overrides["student_window"] = args.window
    if args.seed is not None:
        overrides["seed"] = args.seed
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not value:
            print(f"run: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        overrides[key.strip()] = value.strip()
    try:
        cfg = load_config(args.config, overrides=_coerce_overrides(overrides))
        run_experiment(cfg, args.out)
    except (ConfigError, ParseError) as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 1
    print(f"run complete; report at {os.path.join(args.out, 'eval_report.csv')}")
    return 0


def _coerce_overrides(overrides: dict) -> dict:
    """Best-effort typing for --set values (config parsing re-validates)."""
    from dataclasses import fields

    schema = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for key, value in overrides.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(value, str):
            kind = schema[key]
            if kind in ("int", "int | None"):
                out[key] = None if value.lower() == "none" else int(value)
            elif kind == "float":
                out[key] = float(value)
            elif kind == "bool":
                out[key] = value.lower() in ("true", "1", "yes", "on")
            else:
                out[key] = value
        else:
            out[key] = value
    return out


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty sweep value list")
        point_cfgs = [load_config(args.config, overrides=_sweep_overrides(args.axis, float(v)))
                      for v in values]
    except (ConfigError, ParseError) as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    try:
        g = build_graph(cfg)
        teacher_cfg, _ = model_configs(cfg)
        tr_cfg = replace(train_config(cfg), epochs=cfg.effective_teacher_epochs)
        teacher_result = train_teacher(g, teacher_cfg, loss_config(cfg), tr_cfg, seed=cfg.seed)
        teacher_embeddings = teacher_step_embeddings(g, teacher_result.model)
        teacher_counts = {t: teacher_result.model.parameter_count() for t in teacher_embeddings}
        teacher_rows, _ = _evaluate_model("teacher", teacher_embeddings,
                                          teacher_cfg.window, g, cfg, teacher_counts)
    except DyGraphDistillError as exc:
        print(f"sweep: shared stage failed: {exc}", file=sys.stderr)
        return 1

    sweep_csv = os.path.join(args.out, f"sweep_{args.axis}.csv")
    rows_done = []
    failures = 0

    def run_point(value, point_cfg):
        point_dir = os.path.join(args.out, f"{args.axis}_{value}")
        summary = run_experiment(point_cfg, point_dir, g=g, teacher_result=teacher_result,
                                 teacher_rows=teacher_rows)
        student_rows = [r for r in summary["eval_rows"] if r[0] == "student"]
        if not student_rows:
            raise RuntimeError(f"point {value}: no evaluable student steps")
        mean = sum(r[2] for r in student_rows) / len(student_rows)
        std = sum(r[3] for r in student_rows) / len(student_rows)
        return (value, mean, std, student_rows[-1][4])

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = [(v, pool.submit(run_point, v, pc)) for v, pc in zip(values, point_cfgs)]
        for value, future in futures:
            try:
                rows_done.append(future.result())
            except Exception as exc:  # noqa: BLE001 - report and keep sweeping
                failures += 1
                print(f"sweep: point {value} failed: {exc}", file=sys.stderr)
            write_csv(sweep_csv, SWEEP_COLUMNS, rows_done)

    if rows_done and not args.no_figures:
        render_sweep_figure(args.out, args.axis, rows_done)
    print(f"sweep complete: {len(rows_done)}/{len(values)} points; results in {sweep_csv}")
    return 0 if failures == 0 else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dygraphdistill",
        description="Dynamic graph embeddings with teacher-student distillation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="bucket a temporal edge list into snapshots")
    p_ingest.add_argument("--input", required=True, help="edge list or saved graph manifest")
    group = p_ingest.add_mutually_exclusive_group()
    group.add_argument("--bucket-width", type=int, help="timestamp width per snapshot")
    group.add_argument("--bucket-count", type=int, help="total number of snapshots")
    p_ingest.add_argument("--split", type=int, default=None, help="offline/online split m")
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="train teacher and student, then evaluate")
    p_run.add_argument("--config", required=True, help="flat key=value config file")
    p_run.add_argument("--gamma", type=float, default=None, help="override gamma")
    p_run.add_argument("--window", type=int, default=None, help="override student window")
    p_run.add_argument("--seed", type=int, default=None, help="override master seed")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat run over one axis, reusing the teacher")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--no-figures", action="store_true")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
