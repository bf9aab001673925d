"""Command-line front end.

Subcommands: scm-verify, dataset gen, train-nst, stylize, run, ablate,
gridsearch.  Shared flags: --config PATH, --seed N, --out DIR,
--jobs N.  Every failure exits nonzero after printing a single
machine-parsable line `error: <kind>: <message>` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .bench import generate, save_dataset, load_dataset
from .classifier import _nst_training_pool
from .config import ExperimentConfig, echo_config, parse_config
from .fourier import amplitude_mix, sample_lambda
from .nst import NstModel, load_nst, nst_stylize, save_nst, train_nst
from .report import ablate, dataset_from_config, gridsearch, run_experiment
from .rng import stream
from .scm import (
    backdoor_estimate,
    check_frontdoor_criterion,
    frontdoor_estimate,
    interventional,
    observational_conditional,
    parse_scm,
)

RUN_REPEATS = 10  # headline numbers average this many seeds


def _load_config(args):
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _print_json(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_scm_verify(args):
    with open(args.scm_file, "r", encoding="utf-8") as fh:
        scm = parse_scm(fh.read())
    t, y, z = args.treatment, args.outcome, args.mediator
    for name in (t, y, z):
        scm.graph.require(name)
    report = check_frontdoor_criterion(scm.graph, t, y, z)
    adjustment = scm.graph.parents(t)

    # frontdoor/backdoor tables only where the estimator is defined
    tables = {"observational": {}, "interventional": {}}
    gaps = {}
    if report.holds:
        tables["frontdoor"] = {}
        gaps["frontdoor_vs_interventional"] = 0.0
    if adjustment:
        tables["backdoor"] = {}
        gaps["backdoor_vs_interventional"] = 0.0
    for x in range(scm.graph.domain(t)):
        truth = interventional(scm, y, {t: x})
        tables["observational"][f"{t}={x}"] = observational_conditional(
            scm, y, {t: x}
        ).probs.tolist()
        tables["interventional"][f"do({t}={x})"] = truth.probs.tolist()
        if report.holds:
            fd = frontdoor_estimate(scm, y, t, x, z)
            tables["frontdoor"][f"do({t}={x})"] = fd.probs.tolist()
            gaps["frontdoor_vs_interventional"] = max(
                gaps["frontdoor_vs_interventional"], fd.tv(truth)
            )
        if adjustment:
            bd = backdoor_estimate(scm, y, t, x, adjustment)
            tables["backdoor"][f"do({t}={x})"] = bd.probs.tolist()
            gaps["backdoor_vs_interventional"] = max(
                gaps["backdoor_vs_interventional"], bd.tv(truth)
            )
    _print_json(
        {
            "roles": {"treatment": t, "outcome": y, "mediator": z},
            "criterion": report.as_dict(),
            "backdoor_adjustment_set": list(adjustment),
            "tables": tables,
            "max_total_variation": gaps,
        }
    )
    return 0


def cmd_dataset_gen(args):
    cfg = _load_config(args)
    spec = dataset_from_config(cfg)
    if args.holdout is not None and args.holdout not in cfg.domains:
        raise ValueError(f"holdout {args.holdout!r} is not one of the domains")
    splits = generate(spec, cfg.seed, holdout=args.holdout)
    manifest = {"seed": cfg.seed, "holdout": args.holdout, "config": echo_config(cfg)}
    save_dataset(args.out, splits, manifest)
    total = sum(
        len(split.labels) for by_split in splits.values() for split in by_split.values()
    )
    print(f"dataset: {args.out} ({total} images, {len(splits)} domains)")
    return 0


def cmd_train_nst(args):
    cfg = _load_config(args)
    splits, _ = load_dataset(args.dataset)
    if args.holdout not in splits:
        raise ValueError(f"holdout {args.holdout!r} is not in the dataset")
    train_images = {
        name: by_split["train"].images
        for name, by_split in splits.items()
        if name != args.holdout and "train" in by_split
    }
    if not train_images:
        raise ValueError("no source training splits to train on")
    model = NstModel(stream(cfg.seed, "nst", args.holdout, "init"))
    train_nst(
        model,
        _nst_training_pool(train_images, stream(cfg.seed, "nst", args.holdout, "subset")),
        epochs=cfg.nst_epochs,
        lr=cfg.nst_lr,
        rng=stream(cfg.seed, "nst", args.holdout, "train"),
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"nst_{args.holdout}.ckpt")
    save_nst(path, model)
    print(f"nst checkpoint: {path}")
    return 0


def _read_image(path):
    import matplotlib.image as mpimg

    arr = np.asarray(mpimg.imread(path))
    if arr.dtype == np.uint8:
        arr = arr / 255.0
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return np.ascontiguousarray(arr[..., :3].transpose(2, 0, 1), dtype=np.float64)


def _write_image(path, chw):
    import matplotlib.image as mpimg

    mpimg.imsave(path, np.clip(chw, 0.0, 1.0).transpose(1, 2, 0), vmin=0.0, vmax=1.0)


def cmd_stylize(args):
    content = _read_image(args.content)
    style = _read_image(args.style)
    if args.method == "adain":
        if args.nst is None:
            raise ValueError("adain stylization needs --nst CHECKPOINT")
        model = load_nst(args.nst, stream(args.seed or 0, "stylize", "init"))
        alpha = 0.7 if args.alpha is None else args.alpha
        out = nst_stylize(model, content, style, alpha)
    else:
        lam = (
            sample_lambda(1.0, stream(args.seed or 0, "stylize", "lambda"))
            if args.lam is None
            else args.lam
        )
        out = amplitude_mix(content, style, lam)
    _write_image(args.output, out)
    print(f"stylized image: {args.output}")
    return 0


def cmd_run(args):
    cfg = _load_config(args)
    report = run_experiment(cfg, args.out, repeats=args.repeats, jobs=args.jobs)
    print(f"summary: {report.summary_path}")
    print(f"metrics: {report.csv_path}")
    print(f"figure:  {report.figure_paths[0]}")
    print(f"mean held-out accuracy: {report.summary['accuracy_mean']:.4f}%")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    values = None
    if args.values is not None:
        parts = [p for p in args.values.split(",") if p.strip()]
        values = [
            int(p) if args.sweep == "k" else float(p) for p in (s.strip() for s in parts)
        ]
    result = ablate(
        cfg, args.sweep, args.out, values=values, repeats=args.repeats, jobs=args.jobs
    )
    print(f"ablation rows: {result['csv_path']}")
    print(f"figure:        {result['figure_paths'][0]}")
    return 0


def cmd_gridsearch(args):
    cfg = _load_config(args)

    def grid(text):
        if text is None:
            return None
        return [float(p) for p in text.split(",") if p.strip()]

    result = gridsearch(
        cfg,
        args.out,
        alpha_grid=grid(args.alpha_grid),
        beta_grid=grid(args.beta_grid),
        jobs=args.jobs,
    )
    best = result["best"]
    print(f"grid rows: {result['csv_path']}")
    print(f"figure:    {result['figure_paths'][0]}")
    print(f"best alpha={best['alpha']} beta={best['beta']}")
    return 0


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="experiment config file")
    shared.add_argument("--seed", type=int, metavar="N", help="override the master seed")
    shared.add_argument("--out", metavar="DIR", default="out", help="output directory")
    shared.add_argument("--jobs", type=int, metavar="N", default=1, help="worker processes")

    parser = argparse.ArgumentParser(
        prog="frontdoor",
        description="Interventional-prediction experiments on a styled synthetic benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scm-verify", parents=[shared], help="causal diagnostics for an SCM file")
    p.add_argument("scm_file")
    p.add_argument("--treatment", default="X")
    p.add_argument("--outcome", default="Y")
    p.add_argument("--mediator", default="Z")
    p.set_defaults(handler=cmd_scm_verify)

    p = sub.add_parser("dataset", help="dataset commands")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    g = dsub.add_parser("gen", parents=[shared], help="render the benchmark to disk")
    g.add_argument("--holdout", metavar="DOMAIN", help="write this domain as all-test")
    g.set_defaults(handler=cmd_dataset_gen)

    p = sub.add_parser("train-nst", parents=[shared], help="train the style model")
    p.add_argument("dataset", help="dataset directory from `dataset gen`")
    p.add_argument("--holdout", required=True, metavar="DOMAIN")
    p.set_defaults(handler=cmd_train_nst)

    p = sub.add_parser("stylize", parents=[shared], help="restyle one image by another")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("output")
    p.add_argument("--method", choices=("adain", "fourier"), required=True)
    p.add_argument("--nst", metavar="CHECKPOINT", help="style model for adain")
    p.add_argument("--alpha", type=float, help="adain style strength")
    p.add_argument("--lam", type=float, help="fourier mix weight; omitted draws one")
    p.set_defaults(handler=cmd_stylize)

    p = sub.add_parser("run", parents=[shared], help="repeated leave-one-domain-out runs")
    p.add_argument(
        "--repeats", type=int, default=RUN_REPEATS, metavar="N",
        help=f"seeds averaged into the report (default {RUN_REPEATS})",
    )
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("ablate", parents=[shared], help="sweep one style parameter")
    p.add_argument("sweep", choices=("k", "alpha"))
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--repeats", type=int, default=1, metavar="N")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("gridsearch", parents=[shared], help="pick alpha/beta on validation")
    p.add_argument("--alpha-grid", help="comma-separated alpha values")
    p.add_argument("--beta-grid", help="comma-separated beta values")
    p.set_defaults(handler=cmd_gridsearch)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
