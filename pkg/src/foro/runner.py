"""Experiment execution: build the engine, run the stream, write artifacts.

Outputs land in the config's output directory:

    accuracy_matrix.csv   lower-triangular grid, header ``j,t,accuracy``
    curves.csv            best-so-far fitness per generation per task
    summary.json          metrics, timings, seeds, full resolved config
    final.ckpt            KEM + classifier checkpoint
    accuracy_matrix.png   heatmap rendering of the matrix
    fitness_curves.png    per-task search curves (when any search ran)

Every file is written to a temp name and atomically renamed, so partial
outputs never appear.
"""

from __future__ import annotations

import json
import os
import resource
import time
from pathlib import Path

from foro import report
from foro.backbone import backbone_build
from foro.config import ExperimentConfig
from foro.encoding import classifier_init, kem_init, nrp_build, save_checkpoint
from foro.fitness import FitnessConfig
from foro.protocol import (
    SEED_BACKBONE, SEED_NRP, Engine, TaskReport, average_accuracy,
    average_forgetting, derive_seed, generate_synthetic, load_feature_stream,
)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def build_engine(cfg: ExperimentConfig):
    """Construct (engine, stream) from a validated config."""
    from dataclasses import replace

    if cfg.stream.type == "manifest":
        stream = load_feature_stream(cfg.stream.manifest)
    else:
        spec = cfg.stream.synthetic
        if spec.seed == 0 and cfg.seed != 0:
            spec = replace(spec, seed=derive_seed(cfg.seed, 4))
        stream = generate_synthetic(spec)

    backbone = None
    in_dim = None
    if stream.input_kind == "patches":
        bb_cfg = replace(cfg.backbone, seed=derive_seed(cfg.seed, SEED_BACKBONE))
        backbone = backbone_build(bb_cfg)
        in_dim = bb_cfg.embed_dim
    else:
        in_dim = stream.tasks[0].test_x.shape[1]

    proj = nrp_build(in_dim, cfg.encoding.dim, cfg.encoding.activation,
                     seed=derive_seed(cfg.seed, SEED_NRP))
    threads = int(os.environ.get("FORO_THREADS", "0")) or (os.cpu_count() or 1)
    engine = Engine(
        mode=cfg.mode,
        proj=proj,
        kem=kem_init(cfg.encoding.dim, cfg.encoding.gamma),
        clf=classifier_init(cfg.encoding.dim),
        gamma=cfg.encoding.gamma,
        backbone=backbone,
        num_prompts=cfg.prompts,
        population=cfg.cma.population,
        fitness_cfg=FitnessConfig(lam=cfg.fitness.lam,
                                  generations=cfg.cma.generations,
                                  eval_batch=cfg.fitness.eval_batch),
        alpha=cfg.fitness.alpha,
        covariance=cfg.cma.covariance,
        initial_step=cfg.cma.initial_step,
        prompt_adoption=cfg.prompt_adoption,
        master_seed=cfg.seed,
        threads=threads,
    )
    return engine, stream


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Run the full stream; returns the summary dict after writing artifacts."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    engine, stream = build_engine(cfg)

    matrix: list[list[float]] = []
    reports: list[TaskReport] = []
    for j, task in enumerate(stream.tasks, start=1):
        started = time.perf_counter()
        task_report = engine.learn_task(stream, task)
        task_report.seconds = time.perf_counter() - started
        reports.append(task_report)
        matrix.append(engine.evaluate_all(stream, j))

    num_tasks = stream.num_tasks
    avg_acc = average_accuracy(matrix, num_tasks)
    avg_forget = average_forgetting(matrix, num_tasks)

    lines = ["j,t,accuracy"]
    for j, row in enumerate(matrix, start=1):
        for t, acc in enumerate(row, start=1):
            lines.append(f"{j},{t},{acc:.10f}")
    _atomic_write_text(out / "accuracy_matrix.csv", "\n".join(lines) + "\n")

    curve_lines = ["task,generation,best_fitness"]
    for task_report in reports:
        for g, value in enumerate(task_report.best_fitness_curve, start=1):
            curve_lines.append(f"{task_report.task_id},{g},{value:.10f}")
    _atomic_write_text(out / "curves.csv", "\n".join(curve_lines) + "\n")

    ckpt_tmp = out / "final.ckpt.tmp"
    save_checkpoint(ckpt_tmp, engine.kem, engine.clf)
    os.replace(ckpt_tmp, out / "final.ckpt")

    summary = {
        "mode": cfg.mode,
        "num_tasks": num_tasks,
        "average_accuracy": avg_acc,
        "average_forgetting": avg_forget,
        "accuracy_matrix": matrix,
        "per_task_seconds": [r.seconds for r in reports],
        "peak_rss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    _atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")

    report.render_accuracy_matrix(matrix, out / "accuracy_matrix.png")
    curves = {r.task_id: r.best_fitness_curve for r in reports
              if r.best_fitness_curve}
    if curves:
        report.render_fitness_curves(curves, out / "fitness_curves.png")
    return summary
