"""Command-line entry point: run, sweep, verify.

`run` executes one scripted experiment and leaves a complete audit
trail in the output directory: the per-request accuracy table, a
structured JSON summary, and a checkpoint (teacher parameters, buffer
snapshot, request log) after every request. `sweep` repeats the run
across buffer capacities and seeds, aggregates retained-class accuracy,
and fits the capacity trade-off model to the measurements. `verify`
runs the built-in property suites and reports one line per suite.

Every output is a pure function of (config file, seed): byte-identical
reruns are a supported workflow, not an accident.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import engine, evaluate, model, streams, verify
from .backend import use_backend
from .buffer import class_histogram
from .config import ExperimentConfig, load_config, resolve_output_dir
from .errors import ConfigError, LetheError

SWEEP_SEEDS = 5


def build_tasks(cfg: ExperimentConfig) -> list[streams.TaskSpec]:
    """Task data depends on the seed but not on buffer capacity or mode,
    so capacity sweeps compare runs over identical datasets."""
    skeleton = streams.task_distribution(cfg.net.num_classes, cfg.data.classes_per_task)
    data_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([1, cfg.seed])))
    return streams.make_gaussian_tasks(
        skeleton,
        samples_per_class=cfg.data.train_per_class,
        test_per_class=cfg.data.test_per_class,
        spread=cfg.data.spread,
        rng=data_rng,
        dim=cfg.net.input_dim,
    )


def _class_tests(tasks: list[streams.TaskSpec], num_classes: int) -> dict[int, np.ndarray]:
    tests: dict[int, np.ndarray] = {}
    for c in range(num_classes):
        rows = [t.test_x[t.test_y == c] for t in tasks if c in t.classes]
        if rows:
            tests[c] = np.vstack(rows)
    return tests


def _mean_cells(cells, classes) -> float | None:
    vals = [cells[c] for c in sorted(classes) if cells[c] is not None]
    return float(np.mean(vals)) if vals else None


def run_experiment(cfg: ExperimentConfig, script: streams.StreamScript | None = None) -> dict:
    """Execute one scripted run; returns the summary dict it also writes."""
    use_backend(cfg.kernels)
    if script is None:
        if cfg.stream is None:
            raise ConfigError("no stream script: set [run] stream or pass one explicitly")
        with open(cfg.stream, "r", encoding="utf-8") as fh:
            text = fh.read()
        ids = [f"T{i + 1}" for i in range(cfg.net.num_classes // cfg.data.classes_per_task)]
        script = streams.parse_script(text, known_ids=ids)

    tasks = build_tasks(cfg)
    by_id = {t.task_id: t for t in tasks}
    tests = _class_tests(tasks, cfg.net.num_classes)
    state = engine.init_state(
        cfg.net, cfg.hyper, cfg.buffer_capacity, cfg.seed,
        decrement_seen_on_purge=cfg.decrement_seen_on_purge,
    )
    matrix = evaluate.AccuracyMatrix(num_classes=cfg.net.num_classes)
    os.makedirs(cfg.output_dir, exist_ok=True)

    ever_learned: set[int] = set()
    request_summaries = []
    for i, (verb, task_id) in enumerate(script.requests):
        task = by_id[task_id]
        ulabel = 1 if verb == "LEARN" else 0
        trace = engine.process_request(state, engine.request_for(task, ulabel))
        if ulabel == 1:
            ever_learned |= set(task.classes)
        forgotten = engine.forgotten_classes(state)
        banned = forgotten if cfg.mask_forgotten_eval else ()
        label = f"{verb.title()} {task_id}"
        cells = evaluate.evaluation_row(
            state.teacher, tests, ever_learned, cfg.net.num_classes, banned=banned
        )
        evaluate.record_row(matrix, label, cells)
        retained = ever_learned - forgotten
        request_summaries.append(
            {
                "label": label,
                "task_id": task_id,
                "ulabel": ulabel,
                "classes": sorted(task.classes),
                "loss_trace": list(trace),
                "retain_mean": _mean_cells(cells, retained),
                "forget_mean": _mean_cells(cells, forgotten),
            }
        )
        engine.checkpoint(state, os.path.join(cfg.output_dir, "checkpoints", f"{i:02d}_{verb.lower()}_{task_id}"))

    evaluate.write_matrix_csv(matrix, os.path.join(cfg.output_dir, "matrix.csv"))
    forgotten = engine.forgotten_classes(state)
    retained = ever_learned - forgotten
    final_cells = matrix.rows[-1][1] if matrix.rows else ()
    summary = {
        "config": {
            "seed": cfg.seed,
            "buffer_capacity": cfg.buffer_capacity,
            "objective_mode": cfg.hyper.objective_mode,
            "kernels": cfg.kernels,
            "mask_forgotten_eval": cfg.mask_forgotten_eval,
            "classes_per_task": cfg.data.classes_per_task,
            "num_classes": cfg.net.num_classes,
        },
        "requests": request_summaries,
        "final": {
            "retained_classes": sorted(retained),
            "forgotten_classes": sorted(forgotten),
            "retain_mean": _mean_cells(final_cells, retained) if matrix.rows else None,
            "forget_mean": _mean_cells(final_cells, forgotten) if matrix.rows else None,
            "buffer_histogram": {str(k): v for k, v in sorted(class_histogram(state.buffer).items())},
            "buffer_n_seen": state.buffer.n_seen,
        },
    }
    with open(os.path.join(cfg.output_dir, "summary.json"), "w", encoding="ascii", newline="\n") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return summary


def cmd_run(cfg: ExperimentConfig) -> int:
    try:
        summary = run_experiment(cfg)
    except LetheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    final = summary["final"]
    print(f"wrote {os.path.join(cfg.output_dir, 'matrix.csv')}")
    print(
        f"retain mean {final['retain_mean']}, forget mean {final['forget_mean']}, "
        f"buffer holds {sum(final['buffer_histogram'].values())}"
    )
    return 0


def _sweep_job(payload: tuple) -> tuple[int, int, float | None]:
    cfg_dict, capacity, seed = payload
    cfg = dataclasses.replace(
        _config_from_dict(cfg_dict),
        buffer_capacity=capacity,
        seed=seed,
    )
    cfg = dataclasses.replace(cfg, output_dir=os.path.join(cfg.output_dir, f"cap{capacity}", f"seed{seed}"))
    summary = run_experiment(cfg)
    return capacity, seed, summary["final"]["retain_mean"]


def _config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "net": dataclasses.asdict(cfg.net),
        "hyper": {
            **{k: v for k, v in dataclasses.asdict(cfg.hyper).items() if k != "weights"},
            "weights": dataclasses.asdict(cfg.hyper.weights),
        },
        "data": dataclasses.asdict(cfg.data),
        "buffer_capacity": cfg.buffer_capacity,
        "decrement_seen_on_purge": cfg.decrement_seen_on_purge,
        "seed": cfg.seed,
        "stream": cfg.stream,
        "output_dir": cfg.output_dir,
        "kernels": cfg.kernels,
        "mask_forgotten_eval": cfg.mask_forgotten_eval,
    }


def _config_from_dict(d: dict) -> ExperimentConfig:
    from .config import DataParams
    from .engine import HyperParams
    from .losses import LossWeights

    hyper = dict(d["hyper"])
    weights = LossWeights(**hyper.pop("weights"))
    return ExperimentConfig(
        net=model.NetConfig(**d["net"]),
        hyper=HyperParams(weights=weights, **hyper),
        data=DataParams(**d["data"]),
        buffer_capacity=d["buffer_capacity"],
        decrement_seen_on_purge=d["decrement_seen_on_purge"],
        seed=d["seed"],
        stream=d["stream"],
        output_dir=d["output_dir"],
        kernels=d["kernels"],
        mask_forgotten_eval=d["mask_forgotten_eval"],
    )


def cmd_sweep(cfg: ExperimentConfig, capacities: list[int], workers: int = 1) -> int:
    if len(capacities) < 3:
        print("error: sweep needs at least 3 capacities to fit the trade-off model", file=sys.stderr)
        return 2
    try:
        seeds = [cfg.seed + i for i in range(SWEEP_SEEDS)]
        jobs = [
            (_config_to_dict(cfg), capacity, seed)
            for capacity in sorted(capacities)
            for seed in seeds
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_job, jobs))
        else:
            results = [_sweep_job(job) for job in jobs]

        by_capacity: dict[int, list[float]] = {}
        for capacity, _seed, retain in results:
            if retain is not None:
                by_capacity.setdefault(capacity, []).append(retain)
        points = [(cap, float(np.mean(vals))) for cap, vals in sorted(by_capacity.items())]
        fit = evaluate.fit_tradeoff(points)

        os.makedirs(cfg.output_dir, exist_ok=True)
        lines = ["N,measured,fitted"]
        for n, measured in points:
            fitted = evaluate.total_performance(n, fit) if not fit.degenerate else 0.0
            lines.append(f"{n},{measured!r},{fitted!r}")
        with open(os.path.join(cfg.output_dir, "sweep_fit.csv"), "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        payload = {
            "points": [{"capacity": n, "retain_mean": m} for n, m in points],
            "runs": [
                {"capacity": c, "seed": s, "retain_mean": r}
                for c, s, r in sorted(results, key=lambda t: (t[0], t[1]))
            ],
            "fit": {"alpha": fit.alpha, "beta": fit.beta, "degenerate": fit.degenerate},
        }
        with open(os.path.join(cfg.output_dir, "sweep_summary.json"), "w", encoding="ascii", newline="\n") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    except LetheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(f"{len(jobs)} runs over capacities {sorted(capacities)}")
    print(f"fit: alpha={fit.alpha:.4f} beta={fit.beta:.4f} degenerate={fit.degenerate}")
    return 0


def cmd_verify() -> int:
    return 0 if verify.run_suites(out=sys.stdout) else 1


def _parse_capacities(raw: str) -> list[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--capacities wants comma-separated integers, got {raw!r}") from None
    if not values:
        raise ConfigError("--capacities is empty")
    return values


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.mode is not None:
        cfg = dataclasses.replace(cfg, hyper=dataclasses.replace(cfg.hyper, objective_mode=args.mode))
    return resolve_output_dir(cfg, args.out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lethe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one scripted experiment")
    sweep_p = sub.add_parser("sweep", help="run per capacity per seed and fit the trade-off")
    for p in (run_p, sweep_p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--mode", choices=["paper_eq11", "algorithm1"], default=None,
                       help="override objective mode")
    sweep_p.add_argument("--capacities", required=True, help="comma-separated buffer sizes")
    sweep_p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sub.add_parser("verify", help="run the property suites")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_load(args))
        if args.command == "sweep":
            return cmd_sweep(_load(args), _parse_capacities(args.capacities), workers=args.workers)
        return cmd_verify()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
