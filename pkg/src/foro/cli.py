"""Command-line entry point.

Subcommands:

    foro run --config cfg.json [--seed N] [--mode M] [--out DIR]
    foro verify [--fast]
    foro inspect CKPT
    foro report RUN_DIR

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from foro.config import ConfigError, load_config


def _cmd_run(args) -> int:
    from foro.runner import run_experiment

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    summary = run_experiment(cfg, out_dir=args.out)
    print(f"tasks: {summary['num_tasks']}")
    print(f"average accuracy:   {summary['average_accuracy']:.4f}")
    print(f"average forgetting: {summary['average_forgetting']:.4f}")
    print(f"artifacts: {Path(args.out or cfg.out_dir).resolve()}")
    return 0


def _check(name: str, ok: bool, detail: str = "") -> bool:
    status = "pass" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")
    return ok


def _cmd_verify(args) -> int:
    from foro import cma
    from foro.encoding import (
        batch_solve_oracle, kem_init, kem_update, nrp_build, nrp_project,
        ridge_fit, classifier_init, classifier_extend, weights_update, one_hot,
    )
    from foro.protocol import average_accuracy, average_forgetting

    ok = True
    rng = np.random.default_rng(11)

    # recursive vs. batch ridge equivalence
    dim, gamma = 32, 0.5
    kem = kem_init(dim, gamma)
    clf = classifier_init(dim)
    clf = classifier_extend(clf, range(4))
    xs, ys = [], []
    for _ in range(5):
        x = rng.standard_normal((rng.integers(5, 40), dim))
        y = one_hot(rng.integers(0, 4, size=x.shape[0]), clf.class_ids)
        kem = kem_update(kem, x)
        clf = weights_update(clf, kem, x, y)
        xs.append(x)
        ys.append(y)
    w_batch = batch_solve_oracle(np.vstack(xs), np.vstack(ys), gamma)
    err = (np.linalg.norm(clf.w - w_batch, "fro")
           / np.linalg.norm(w_batch, "fro"))
    ok &= _check("recursive vs batch ridge", err <= 1e-8,
                 f"max relative Frobenius error {err:.2e}")

    # CMA-ES sphere benchmark
    budget = 120 if args.fast else 300
    state = cma.cma_init(10, 10, seed=3, mean0=np.full(10, 3.0))
    best = np.inf
    for _ in range(budget):
        cands = cma.cma_ask(state)
        cands = [c.with_fitness(float(c.genome @ c.genome)) for c in cands]
        state = cma.cma_tell(state, cands)
        best = min(best, cma.cma_best(cands).fitness)
        if best < 1e-10:
            break
    bound = 1e-6 if args.fast else 1e-10
    ok &= _check("CMA-ES sphere benchmark", best < bound,
                 f"best fitness {best:.2e} within {budget} generations")

    # metric hand-cases
    matrix = [[0.9], [0.8, 0.9]]
    ok &= _check("average accuracy hand case",
                 abs(average_accuracy(matrix, 2) - 0.85) < 1e-15)
    ok &= _check("average forgetting hand case",
                 abs(average_forgetting(matrix, 2) - 0.1) < 1e-15)

    # XOR separability through the nonlinear random projection
    from foro.protocol import SyntheticSpec, generate_synthetic
    stream = generate_synthetic(SyntheticSpec(
        tasks=1, classes_per_task=2, kind="xor", noise=0.3,
        train_per_class=50, test_per_class=50, seed=5))
    task = stream.tasks[0]
    train_x, train_labels = task.train_data()
    proj = nrp_build(2, 256, "relu", seed=9)
    y = one_hot(train_labels, (0, 1))
    w = ridge_fit(nrp_project(proj, train_x), y, 0.1)
    pred = np.argmax(nrp_project(proj, task.test_x) @ w, axis=1)
    acc = float(np.mean(pred == task.test_labels))
    w_raw = ridge_fit(train_x, y, 0.1)
    pred_raw = np.argmax(task.test_x @ w_raw, axis=1)
    acc_raw = float(np.mean(pred_raw == task.test_labels))
    ok &= _check("XOR projection separability",
                 acc >= 0.90 and acc_raw <= 0.60,
                 f"projected {acc:.2f} vs raw {acc_raw:.2f}")

    return 0 if ok else 1


def _cmd_inspect(args) -> int:
    from foro.encoding import CorruptCheckpointError, load_checkpoint

    try:
        kem, clf = load_checkpoint(args.checkpoint)
    except (CorruptCheckpointError, OSError) as exc:
        print(f"corrupt checkpoint: {exc}", file=sys.stderr)
        return 1
    cond = float(np.linalg.cond(kem.r))
    norms = np.linalg.norm(clf.w, axis=0)
    print(f"projection dim M:   {kem.dim}")
    print(f"classes:            {clf.num_classes}")
    print(f"class ids:          {list(clf.class_ids)}")
    print(f"gamma:              {kem.gamma}")
    print(f"samples seen:       {kem.samples_seen}")
    print(f"R condition number: {cond:.6g}")
    with np.printoptions(precision=4, suppress=True):
        print(f"W column norms:     {norms}")
    return 0


def _cmd_report(args) -> int:
    from foro import report

    run_dir = Path(args.run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        print(f"no summary.json in {run_dir}", file=sys.stderr)
        return 1
    summary = json.loads(summary_path.read_text())
    report.render_accuracy_matrix(summary["accuracy_matrix"],
                                  run_dir / "accuracy_matrix.png")
    curves_path = run_dir / "curves.csv"
    if curves_path.exists():
        curves: dict[int, list[float]] = {}
        for line in curves_path.read_text().splitlines()[1:]:
            task_id, _, value = line.split(",")
            curves.setdefault(int(task_id), []).append(float(value))
        if curves:
            report.render_fitness_curves(curves, run_dir / "fitness_curves.png")
    print(f"figures written to {run_dir.resolve()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foro", description="forward-only continual learning engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--mode", choices=["foro", "kem-only", "fitness-only"],
                       default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the built-in oracle suite")
    p_verify.add_argument("--fast", action="store_true")
    p_verify.set_defaults(func=_cmd_verify)

    p_inspect = sub.add_parser("inspect", help="summarize a checkpoint")
    p_inspect.add_argument("checkpoint")
    p_inspect.set_defaults(func=_cmd_inspect)

    p_report = sub.add_parser("report", help="re-render figures for a run")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: name the failing module
        module = type(exc).__module__.replace("foro.", "")
        print(f"runtime failure in {module}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
