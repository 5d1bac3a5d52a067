"""Reproducible experiment runner.

Subcommands: ``run <config.json>``, ``validate <config.json>``, and
``plot <metrics.csv> [...] --curve <metric>``. Every run writes a
manifest with the fully resolved config (re-running the manifest
reproduces the metrics byte for byte), a metrics CSV, a summary JSON,
and model checkpoints where applicable.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import config_files, load_config
from .cotrain import CotrainConfig, run_cotraining
from .data import (PairedViews, SplitSpec, SyntheticSpec, generate_synthetic,
                   load_view, save_view, stratified_split_indices)
from .diagnostics import (ProbeConfig, format_sufficiency_table,
                          format_translation_table, independence_probe,
                          sufficiency_probe)
from .errors import (AlignmentError, ConfigError, CotrainlabError,
                     DimensionError, FormatError, NumericError)
from .mct import MctConfig, run_mct
from .metrics import MetricsLog

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_paired(cfg):
    """Materialize (labeled, unlabeled, test) PairedViews from a config."""
    data = cfg["data"]
    if "synthetic" in data:
        s = data["synthetic"]
        out = generate_synthetic(SyntheticSpec(
            classes=s["classes"], d1=s["d1"], d2=s["d2"],
            separation=s["separation"], noise=s["noise"],
            n_labeled=s["n_labeled"], n_unlabeled=s["n_unlabeled"],
            n_test=s["n_test"], seed=s["seed"]))
        return out.labeled, out.unlabeled, out.test

    views = data["views"]
    missing = [p for p in config_files(cfg) if not os.path.exists(p)]
    if missing:
        raise FormatError(f"missing view files: {missing}")
    if "train" in views["view1"]:
        train = PairedViews(load_view(views["view1"]["train"], "view1"),
                            load_view(views["view2"]["train"], "view2"))
        test = PairedViews(load_view(views["view1"]["test"], "view1"),
                           load_view(views["view2"]["test"], "view2"))
        if train.labels is None:
            raise FormatError("train view files carry no labels to split")
        sp = views["split"]
        sel, rest = stratified_split_indices(
            train.labels, SplitSpec(sp["fraction"], sp["seed"], sp["stratified"]))
        return train.select(sel), train.select(rest), test
    labeled = PairedViews(load_view(views["view1"]["labeled"], "view1"),
                          load_view(views["view2"]["labeled"], "view2"))
    unlabeled = PairedViews(load_view(views["view1"]["unlabeled"], "view1"),
                            load_view(views["view2"]["unlabeled"], "view2"))
    test = PairedViews(load_view(views["view1"]["test"], "view1"),
                       load_view(views["view2"]["test"], "view2"))
    return labeled, unlabeled, test


def _mct_config(cfg, total=None, warmup=None):
    m = cfg["mct"]
    return MctConfig(
        total_steps=total if total is not None else m["total_steps"],
        warmup_steps=warmup if warmup is not None else m["warmup_steps"],
        batch_size=m["batch_size"], model_kind=cfg["model"]["kind"],
        hidden_width=cfg["model"]["hidden_width"],
        hidden_layers=cfg["model"]["hidden_layers"],
        opt=dict(cfg["optimizer"]), sched=dict(cfg["schedule"]),
        supervised_weight=m["supervised_weight"],
        labeled_grad_at=m["labeled_grad_at"], optimizer=m["optimizer"],
        eval_every=m["eval_every"], init_seed=cfg["seeds"]["init"],
        sample_seed=cfg["seeds"]["sample"])


def _run_synth_gen(cfg, outdir):
    s = cfg["data"].get("synthetic")
    if s is None:
        raise ConfigError("synth-gen requires data.synthetic")
    out = generate_synthetic(SyntheticSpec(
        classes=s["classes"], d1=s["d1"], d2=s["d2"],
        separation=s["separation"], noise=s["noise"],
        n_labeled=s["n_labeled"], n_unlabeled=s["n_unlabeled"],
        n_test=s["n_test"], seed=s["seed"]))
    written = []
    for split_name, paired in (("labeled", out.labeled),
                               ("unlabeled", out.unlabeled),
                               ("test", out.test)):
        for v, view in (("view1", paired.view1), ("view2", paired.view2)):
            ds = view.without_labels() if split_name == "unlabeled" else view
            path = os.path.join(outdir, f"{v}_{split_name}.embv")
            save_view(ds, path)
            written.append(path)
    return MetricsLog(), {"written": written}


def _run_supervised(cfg, outdir):
    labeled, unlabeled, test = _load_paired(cfg)
    steps = cfg["supervised"]["train_steps"]
    mcfg = _mct_config(cfg, total=steps, warmup=steps)
    mcfg.batch_size = cfg["supervised"]["batch_size"]
    log, models, _, summary = run_mct(labeled, unlabeled, test, mcfg)
    log.rows = [(s, i, "supervised", mid, sp, met, val)
                for s, i, _, mid, sp, met, val in log.rows]
    models[0].save_checkpoint(os.path.join(outdir, "model1.ckpt"))
    models[1].save_checkpoint(os.path.join(outdir, "model2.ckpt"))
    summary.pop("warmup_joint_top1", None)
    return log, summary


def _run_mct(cfg, outdir):
    labeled, unlabeled, test = _load_paired(cfg)
    log, models, _, summary = run_mct(labeled, unlabeled, test,
                                      _mct_config(cfg))
    models[0].save_checkpoint(os.path.join(outdir, "model1.ckpt"))
    models[1].save_checkpoint(os.path.join(outdir, "model2.ckpt"))
    return log, summary


def _run_cotrain(cfg, outdir):
    labeled, unlabeled, test = _load_paired(cfg)
    ct = cfg["cotrain"]
    ccfg = CotrainConfig(
        steps_per_iteration=ct["steps_per_iteration"],
        k_fraction=ct["k_fraction"], max_iterations=ct["max_iterations"],
        batch_size=ct["batch_size"], model_kind=cfg["model"]["kind"],
        hidden_width=cfg["model"]["hidden_width"],
        hidden_layers=cfg["model"]["hidden_layers"],
        opt=dict(cfg["optimizer"]), sched=dict(cfg["schedule"]),
        init_seed=cfg["seeds"]["init"], sample_seed=cfg["seeds"]["sample"])
    log, state, summary = run_cotraining(labeled, unlabeled, test, ccfg)
    state.models[1].save_checkpoint(os.path.join(outdir, "model1.ckpt"))
    state.models[2].save_checkpoint(os.path.join(outdir, "model2.ckpt"))
    return log, summary


def _probe_config(cfg, section):
    sec = cfg[section]
    return ProbeConfig(
        train_steps=sec["train_steps"], batch_size=sec["batch_size"],
        hidden_width=sec.get("hidden_width", cfg["model"]["hidden_width"]),
        hidden_layers=sec.get("hidden_layers", cfg["model"]["hidden_layers"]),
        opt=dict(cfg["optimizer"]), sched=dict(cfg["schedule"]),
        translator_lr=sec.get("translator_lr", 0.1),
        init_seed=cfg["seeds"]["init"], sample_seed=cfg["seeds"]["sample"])


def _run_sufficiency(cfg, outdir):
    labeled, unlabeled, test = _load_paired(cfg)
    suf = cfg["sufficiency"]
    pcfg = ProbeConfig(train_steps=suf["train_steps"],
                       batch_size=suf["batch_size"],
                       hidden_width=cfg["model"]["hidden_width"],
                       hidden_layers=cfg["model"]["hidden_layers"],
                       opt=dict(cfg["optimizer"]), sched=dict(cfg["schedule"]),
                       init_seed=cfg["seeds"]["init"],
                       sample_seed=cfg["seeds"]["sample"])
    split = SplitSpec(suf["fraction"], cfg["seeds"]["data"], True)
    tasks = [(labeled.view1, test.view1), (labeled.view2, test.view2)]

    def probe(pair):
        return sufficiency_probe(pair[0], pair[1], split, suf["probe"],
                                 suf["threshold"], pcfg)

    if cfg["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            reports = list(pool.map(probe, tasks))
    else:
        reports = [probe(t) for t in tasks]
    log = MetricsLog()
    for i, r in enumerate(reports, start=1):
        log.append(0, 0, "sufficiency", str(i), "test", "top1", r.top1)
        log.append(0, 0, "sufficiency", str(i), "test", "passed",
                   1.0 if r.passed else 0.0)
    print(format_sufficiency_table(reports))
    summary = {"reports": [vars(r) for r in reports]}
    return log, summary


def _run_independence(cfg, outdir):
    labeled, unlabeled, test = _load_paired(cfg)
    pcfg = _probe_config(cfg, "independence")
    tasks = [(labeled.view1, labeled.view2, test.view1),
             (labeled.view2, labeled.view1, test.view2)]

    def probe(task):
        src, tgt, src_test = task
        return independence_probe(src, tgt, pcfg, source_test=src_test)

    if cfg["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            reports = list(pool.map(probe, tasks))
    else:
        reports = [probe(t) for t in tasks]
    log = MetricsLog()
    for i, r in enumerate(reports, start=1):
        log.append(0, 0, "independence", str(i), "test", "top1", r.top1)
        log.append(0, 0, "independence", str(i), "train", "translation_mse",
                   r.train_mse)
    print(format_translation_table(reports))
    summary = {"reports": [vars(r) for r in reports]}
    return log, summary


RUNNERS = {
    "supervised": _run_supervised,
    "cotrain": _run_cotrain,
    "mct": _run_mct,
    "sufficiency": _run_sufficiency,
    "independence": _run_independence,
}


def run_experiment(config_path, jobs=None):
    cfg = load_config(config_path)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        cfg["jobs"] = jobs
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "manifest.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    if cfg["method"] == "synth-gen":
        log, summary = _run_synth_gen(cfg, outdir)
    else:
        log, summary = RUNNERS[cfg["method"]](cfg, outdir)
    log.write_csv(os.path.join(outdir, "metrics.csv"))
    summary = {"method": cfg["method"], **summary}
    with open(os.path.join(outdir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def emit_plot_data(metrics_paths, metric, model_id=None, split=None,
                   method=None, x_axis="step", out=None):
    """Project metric rows onto (x, y) columns, optionally aggregated.

    One input file gives ``x,y`` rows sorted by x; several files give
    ``x,min,mean,max`` across files.
    """
    logs = [MetricsLog.read_csv(p) for p in metrics_paths]
    available = sorted({name for log in logs for name in log.metric_names()})
    if metric not in available:
        raise ConfigError(
            f"unknown metric {metric!r}; available: {', '.join(available)}")
    series = []
    for log in logs:
        rows = log.values(metric, model_id=model_id, split=split, method=method)
        xi = 1 if x_axis == "iteration" else 0
        series.append({r[xi]: r[2] for r in rows})
    lines = []
    if len(series) == 1:
        lines.append("x,y")
        for x in sorted(series[0]):
            lines.append(f"{x},{series[0][x]!r}")
    else:
        lines.append("x,min,mean,max")
        xs = sorted(set().union(*[set(s) for s in series]))
        for x in xs:
            vals = [s[x] for s in series if x in s]
            lines.append(f"{x},{min(vals)!r},{float(np.mean(vals))!r},{max(vals)!r}")
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return text


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cotrainlab",
        description="Two-view semi-supervised learning experiments on "
                    "frozen embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=None,
                       help="bound worker threads (overrides the config)")

    p_val = sub.add_parser("validate", help="validate a config and exit")
    p_val.add_argument("config")

    p_plot = sub.add_parser("plot", help="emit columnar plot data for a curve")
    p_plot.add_argument("metrics", nargs="+", help="metrics CSV file(s)")
    p_plot.add_argument("--curve", required=True, help="metric name")
    p_plot.add_argument("--model-id", default=None)
    p_plot.add_argument("--split", default=None)
    p_plot.add_argument("--method", default=None)
    p_plot.add_argument("--x", choices=("step", "iteration"), default="step")
    p_plot.add_argument("--out", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = run_experiment(args.config, jobs=args.jobs)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "validate":
            load_config(args.config)
            print("config ok")
        elif args.command == "plot":
            for p in args.metrics:
                if not os.path.exists(p):
                    raise FormatError(f"metrics file not found: {p}")
            emit_plot_data(args.metrics, args.curve, model_id=args.model_id,
                           split=args.split, method=args.method,
                           x_axis=args.x, out=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, AlignmentError, DimensionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CotrainlabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
