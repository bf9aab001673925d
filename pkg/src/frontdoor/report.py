"""Experiment reports: delimited metrics, canonical summaries, figures.

A run writes its artifacts into one output directory: a per-fold
metrics CSV, a summary JSON in canonical form (sorted keys, newline
terminated, no wall-clock so repeated runs are byte-identical), the
resolved config echo that replays the run, and rendered figures.
Accuracies in summaries and CSVs are percentages in [0, 100].
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .bench import SyntheticDataset, default_domains
from .classifier import evaluate_lodo
from .config import echo_config

METRIC_COLUMNS = (
    "seed",
    "fold",
    "epoch",
    "train_loss",
    "train_acc",
    "val_acc",
    "test_acc",
)


@dataclasses.dataclass
class RunReport:
    csv_path: str
    summary_path: str
    config_path: str
    figure_paths: list
    wall_clock: float
    summary: dict


def dataset_from_config(cfg):
    """The synthetic benchmark spec a config describes."""
    by_name = {d.name: d for d in default_domains()}
    domains = [by_name[name] for name in cfg.domains]
    return SyntheticDataset(domains, per_class=cfg.per_class, rho=cfg.rho, size=cfg.size)


def _pct(acc):
    return round(100.0 * acc, 4)


def _seed_cell(args):
    cfg, dataset = args
    return evaluate_lodo(cfg, dataset)


def _map_cells(worker, cells, jobs):
    if jobs <= 1 or len(cells) <= 1:
        return [worker(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, cells))


def _write_metrics_csv(path, blocks):
    """blocks: (seed, result) pairs; one row per (fold, epoch)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for seed, result in blocks:
            for fold in sorted(result["metrics"]):
                rows = result["metrics"][fold]
                final = len(rows) - 1
                for i, row in enumerate(rows):
                    writer.writerow(
                        [
                            seed,
                            fold,
                            row["epoch"],
                            f"{row['train_loss']:.6f}" if "train_loss" in row else "",
                            _pct(row["train_acc"]) if "train_acc" in row else "",
                            _pct(row["val_acc"]) if "val_acc" in row else "",
                            _pct(result["per_domain"][fold]) if i == final else "",
                        ]
                    )


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bar_figure(path, labels, values, title, ylabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(labels, values, color="#4878b0")
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 100)
    ax.set_title(title)
    for x, v in enumerate(values):
        ax.text(x, v + 1.0, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def run_experiment(cfg, out_dir, repeats=10, jobs=1):
    """Repeated leave-one-domain-out evaluation: seeds cfg.seed ..
    cfg.seed+repeats-1, averaged into one report."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    started = time.time()
    os.makedirs(out_dir, exist_ok=True)
    dataset = dataset_from_config(cfg)
    seeds = [cfg.seed + i for i in range(repeats)]
    cells = [(dataclasses.replace(cfg, seed=s), dataset) for s in seeds]
    results = _map_cells(_seed_cell, cells, jobs)

    per_seed = {}
    for seed, result in zip(seeds, results):
        per_seed[str(seed)] = {
            "per_domain": {d: _pct(a) for d, a in sorted(result["per_domain"].items())},
            "mean": _pct(result["mean"]),
        }
    domain_names = sorted(results[0]["per_domain"])
    per_domain_mean = {
        d: _pct(float(np.mean([r["per_domain"][d] for r in results])))
        for d in domain_names
    }
    summary = {
        "method": cfg.method,
        "seeds": seeds,
        "per_seed": per_seed,
        "per_domain_mean": per_domain_mean,
        "accuracy_mean": _pct(float(np.mean([r["mean"] for r in results]))),
        "config": echo_config(cfg),
    }

    csv_path = os.path.join(out_dir, "metrics.csv")
    _write_metrics_csv(csv_path, list(zip(seeds, results)))
    summary_path = os.path.join(out_dir, "summary.json")
    _write_json(summary_path, summary)
    config_path = os.path.join(out_dir, "config.txt")
    with open(config_path, "w") as fh:
        fh.write(echo_config(cfg))
    figure = _bar_figure(
        os.path.join(out_dir, "accuracy.png"),
        domain_names,
        [per_domain_mean[d] for d in domain_names],
        f"{cfg.method}: held-out accuracy over {repeats} seed(s)",
        "accuracy [%]",
    )
    wall = time.time() - started
    with open(os.path.join(out_dir, "timing.txt"), "w") as fh:
        fh.write(f"wall_clock_seconds = {wall:.3f}\n")
    return RunReport(csv_path, summary_path, config_path, [figure], wall, summary)


ABLATE_DEFAULTS = {
    "k": (1, 2, 3, 4),
    "alpha": (0.2, 0.4, 0.6, 0.8, 1.0),
}


def _validate_sweep(cfg, sweep, values):
    if sweep not in ABLATE_DEFAULTS:
        raise ValueError(f"sweep must be 'k' or 'alpha', got {sweep!r}")
    if cfg.method == "erm":
        raise ValueError("ablation sweeps style parameters; method=erm has none")
    if not values:
        raise ValueError("sweep needs at least one value")
    for v in values:
        if sweep == "k" and (int(v) != v or v < 1):
            raise ValueError(f"k values must be integers >= 1, got {v}")
        if sweep == "alpha" and not 0.0 <= v <= 1.0:
            raise ValueError(f"alpha values must lie in [0,1], got {v}")
    if sweep == "alpha" and cfg.method == "faft":
        raise ValueError("alpha does not apply to faft; sweep k instead")


def _ablate_cell(args):
    cfg, dataset = args
    return evaluate_lodo(cfg, dataset)


def ablate(cfg, sweep, out_dir, values=None, repeats=1, jobs=1):
    """Accuracy versus one swept style parameter.

    k sweeps run under both sampling strategies; alpha sweeps keep the
    configured strategy.  One full leave-one-domain-out run per (value,
    strategy, repeat); rows land in ablate.csv and the mean curves in
    ablate.png.
    """
    values = tuple(ABLATE_DEFAULTS[sweep]) if values is None else tuple(values)
    _validate_sweep(cfg, sweep, values)
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    started = time.time()
    os.makedirs(out_dir, exist_ok=True)
    dataset = dataset_from_config(cfg)
    strategies = ("random", "domain-balance") if sweep == "k" else (cfg.sampling,)
    seeds = [cfg.seed + i for i in range(repeats)]

    plan = []
    for value in values:
        for strategy in strategies:
            for seed in seeds:
                changes = {"seed": seed, "sampling": strategy}
                changes["k" if sweep == "k" else "alpha"] = (
                    int(value) if sweep == "k" else float(value)
                )
                plan.append((value, strategy, seed, dataclasses.replace(cfg, **changes)))

    if jobs > 1:
        results = _map_cells(_ablate_cell, [(c, dataset) for *_, c in plan], jobs)
    else:
        cache = {}
        results = [
            evaluate_lodo(c, dataset, nst_cache=cache) for *_, c in plan
        ]

    rows = []
    for (value, strategy, seed, _), result in zip(plan, results):
        row = {
            "sweep": sweep,
            "value": value,
            "sampling": strategy,
            "seed": seed,
            "accuracy": _pct(result["mean"]),
        }
        for d in sorted(result["per_domain"]):
            row[f"acc_{d}"] = _pct(result["per_domain"][d])
        rows.append(row)

    csv_path = os.path.join(out_dir, "ablate.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    figure = _ablate_figure(
        os.path.join(out_dir, "ablate.png"), sweep, values, strategies, seeds, rows
    )
    return {
        "csv_path": csv_path,
        "figure_paths": [figure],
        "rows": rows,
        "wall_clock": time.time() - started,
    }


def _ablate_figure(path, sweep, values, strategies, seeds, rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for strategy in strategies:
        means = []
        for value in values:
            cell = [
                r["accuracy"]
                for r in rows
                if r["value"] == value and r["sampling"] == strategy
            ]
            means.append(float(np.mean(cell)))
        ax.plot(values, means, marker="o", label=strategy)
    ax.set_xlabel({"k": "styles per sample K", "alpha": "style strength alpha"}[sweep])
    ax.set_ylabel("mean held-out accuracy [%]")
    ax.set_title(f"{sweep} sweep, {len(seeds)} seed(s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _final_val_accuracy(result):
    """Mean over folds of the last epoch's validation accuracy."""
    vals = []
    for rows in result["metrics"].values():
        finals = [r["val_acc"] for r in rows if "val_acc" in r]
        if not finals:
            raise ValueError("fold metrics carry no validation accuracy")
        vals.append(finals[-1])
    return float(np.mean(vals))


def _grid_cell(args):
    cfg, dataset = args
    return evaluate_lodo(cfg, dataset)


def best_cell(cells):
    """Highest validation accuracy; ties prefer smaller alpha, then beta."""
    return min(cells, key=lambda c: (-c["val_accuracy"], c["alpha"], c["beta"]))


def gridsearch(cfg, out_dir, alpha_grid=None, beta_grid=None, jobs=1):
    """Exhaustive (alpha, beta) search scored by mean validation accuracy
    across folds; ties prefer smaller alpha, then smaller beta."""
    alpha_grid = (
        tuple(np.round(np.arange(0.6, 0.8 + 1e-9, 0.05), 2))
        if alpha_grid is None
        else tuple(alpha_grid)
    )
    beta_grid = (
        tuple(np.round(np.arange(0.25, 0.45 + 1e-9, 0.05), 2))
        if beta_grid is None
        else tuple(beta_grid)
    )
    if not alpha_grid or not beta_grid:
        raise ValueError("alpha and beta grids must be nonempty")
    for name, grid in (("alpha", alpha_grid), ("beta", beta_grid)):
        for v in grid:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} grid values must lie in [0,1], got {v}")
    if cfg.method == "erm":
        raise ValueError("gridsearch tunes style parameters; method=erm has none")
    started = time.time()
    os.makedirs(out_dir, exist_ok=True)
    dataset = dataset_from_config(cfg)
    plan = [
        (float(a), float(b), dataclasses.replace(cfg, alpha=float(a), beta=float(b)))
        for a in alpha_grid
        for b in beta_grid
    ]
    if jobs > 1:
        results = _map_cells(_grid_cell, [(c, dataset) for _, _, c in plan], jobs)
    else:
        cache = {}
        results = [evaluate_lodo(c, dataset, nst_cache=cache) for _, _, c in plan]

    cells = []
    for (a, b, _), result in zip(plan, results):
        cells.append(
            {
                "alpha": a,
                "beta": b,
                "val_accuracy": _pct(_final_val_accuracy(result)),
                "heldout_accuracy": _pct(result["mean"]),
            }
        )
    best = best_cell(cells)

    csv_path = os.path.join(out_dir, "grid.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["alpha", "beta", "val_accuracy", "heldout_accuracy"]
        )
        writer.writeheader()
        writer.writerows(cells)
    figure = _grid_figure(
        os.path.join(out_dir, "grid.png"), alpha_grid, beta_grid, cells
    )
    return {
        "best": {"alpha": best["alpha"], "beta": best["beta"]},
        "cells": cells,
        "csv_path": csv_path,
        "figure_paths": [figure],
        "wall_clock": time.time() - started,
    }


def _grid_figure(path, alpha_grid, beta_grid, cells):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = np.zeros((len(alpha_grid), len(beta_grid)))
    lookup = {(c["alpha"], c["beta"]): c["val_accuracy"] for c in cells}
    for i, a in enumerate(alpha_grid):
        for j, b in enumerate(beta_grid):
            table[i, j] = lookup[(float(a), float(b))]
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    im = ax.imshow(table, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(beta_grid)), [f"{b:.2f}" for b in beta_grid])
    ax.set_yticks(range(len(alpha_grid)), [f"{a:.2f}" for a in alpha_grid])
    ax.set_xlabel("beta")
    ax.set_ylabel("alpha")
    ax.set_title("validation accuracy [%]")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
