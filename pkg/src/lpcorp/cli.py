"""Command-line entry point: ``lpcorp <subcommand>``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 transport error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy

from . import __version__, analytics, costmodel, features, temporal
from .config import load_config
from .corpus import Dataset, SplitSpec, downsample_majority, load_dataset, split, synthetic_dataset, write_jsonl
from .corrector import CorrectionModel, apply_correction, make_labels
from .errors import DataError, LpcorpError, UsageError
from .metrics import rows_to_json, rows_to_text, three_row_report
from .pipeline import TrainParams, run_correction
from .reasoner import (Conclusion, OracleConfig, PromptTemplate, ReasonedSample, SyntheticOracle,
                       read_reasoned, run_stage1, write_reasoned)
from .seeding import derive_seed

log = logging.getLogger("lpcorp")

DATASET_FILE = "dataset.jsonl"
CLASSES_FILE = "classes.json"
REASONED_FILE = "reasoned.jsonl"


# --------------------------------------------------------------------------
# run directory plumbing

@contextmanager
def run_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out} is locked by another run (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out: Path, command: str, cfg, counts: dict, files) -> dict:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["versions"] = {
        "lpcorp": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "scipy": scipy.__version__,
    }
    manifest[command] = {
        "config": cfg,
        "counts": counts,
        "checksums": {Path(f).name: _sha256(Path(f)) for f in files},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _seed(cfg, purpose):
    return derive_seed(cfg["seed"], purpose) % (2 ** 32)


def build_dataset(cfg) -> Dataset:
    d = cfg["dataset"]
    if d["path"]:
        ds = load_dataset(d["path"], d["format"] or None, d["label_map"] or None,
                          d["class0_name"], d["class1_name"])
    else:
        sd = cfg["synthetic_dataset"]
        ds = synthetic_dataset(sd["n"], sd["prevalence"], _seed(cfg, "dataset"), sd["signal_token"],
                               sd["signal_rate_pos"], sd["signal_rate_neg"])
    if d["downsample_ratio"]:
        ds = downsample_majority(ds, d["downsample_ratio"], _seed(cfg, "downsample"))
    return ds


def build_template(cfg, ds: Dataset) -> PromptTemplate:
    p = cfg["prompt"]
    kw = {"not_sure_name": p["not_sure_name"]}
    if p["task_statement"]:
        kw["task_statement"] = p["task_statement"]
    if p["instruction_block"]:
        kw["instruction_block"] = p["instruction_block"]
    return PromptTemplate.for_dataset(ds, **kw)


def build_oracle(cfg):
    o = cfg["oracle"]
    if o["mode"] == "endpoint":
        return OracleConfig(o["endpoint_url"], o["model_name"], o["timeout"], o["max_retries"],
                            o["temperature"], o["backoff_base"], o["max_in_flight"])
    return SyntheticOracle(seed=_seed(cfg, "oracle"), **o["synthetic"])


def build_costs(cfg, ep=None) -> costmodel.CostParams:
    c = cfg["costs"]
    if ep is None:
        ep = c["ep"] if c["ep"] >= 0 else 0.0
    if c["ce"] or c["ci"]:
        return costmodel.CostParams(ep, c["ce"], c["ci"], c["e"])
    return costmodel.preset(c["preset"], ep, c["e"])


def _tfidf_cfg(cfg):
    t = cfg["tfidf"]
    return features.TfidfConfig(t["ngram_min"], t["ngram_max"], t["min_df"],
                                t["max_features"] or None, t["lowercase"])


def _save_run_dataset(out: Path, ds: Dataset) -> None:
    write_jsonl(ds, out / DATASET_FILE)
    names = {"class0_name": ds.class0_name, "class1_name": ds.class1_name}
    (out / CLASSES_FILE).write_text(json.dumps(names, indent=2) + "\n")


def _load_run_dataset(out: Path, cfg) -> Dataset:
    """The run's frozen copy of the dataset, with the class names it was reasoned under."""
    ds_path = out / DATASET_FILE
    if not ds_path.exists():
        raise DataError(f"{ds_path} not found; run `lpcorp reason` first")
    names_path = out / CLASSES_FILE
    names = json.loads(names_path.read_text()) if names_path.exists() else cfg["dataset"]
    return load_dataset(ds_path, "jsonl", None, names["class0_name"], names["class1_name"])


def _load_run_inputs(out: Path, cfg):
    ds = _load_run_dataset(out, cfg)
    r_path = out / REASONED_FILE
    if not r_path.exists():
        raise DataError(f"{r_path} not found; run `lpcorp reason` first")
    return ds, read_reasoned(r_path)


# --------------------------------------------------------------------------
# subcommands

def cmd_reason(cfg, args) -> int:
    out = Path(cfg["output_dir"])
    with run_lock(out):
        ds_path = out / DATASET_FILE
        if ds_path.exists():
            ds = _load_run_dataset(out, cfg)
        else:
            ds = build_dataset(cfg)
            _save_run_dataset(out, ds)
        tpl = build_template(cfg, ds)
        r_path = out / REASONED_FILE
        done = [r.sample_id for r in read_reasoned(r_path)] if r_path.exists() else []
        res = run_stage1(ds, build_oracle(cfg), tpl, audit_path=out / "audit.jsonl", skip_ids=done)
        write_reasoned(res.reasoned, r_path, append=True)

        # rewrite in dataset order so resumed runs match uninterrupted ones
        by_id = {r.sample_id: r for r in read_reasoned(r_path)}
        ordered = [by_id[s.id] for s in ds.samples if s.id in by_id]
        write_reasoned(ordered, r_path)
        n_ns = sum(r.excluded for r in ordered)
        counts = {
            "ingested": len(ds),
            "rejected_empty_text": ds.info.get("n_rejected_empty", 0),
            "oracle_calls": len(res.reasoned),
            "resumed_skipped": len(done),
            "reasoned": len(ordered),
            "evaluable": len(ordered) - n_ns,
            "excluded_not_sure": n_ns,
            "transport_failures": res.n_failed,
        }
        update_manifest(out, "reason", cfg, counts, [ds_path, out / CLASSES_FILE, r_path])
    print(f"reasoned {len(ordered)} samples ({len(res.reasoned)} oracle calls, {n_ns} not sure) -> {r_path}")
    return 0


def _write_reports(out: Path, run, costs):
    files = []
    for P, rows in run.reports.items():
        stem = f"metrics_P{P:.2f}"
        (out / f"{stem}.json").write_text(rows_to_json(rows, threshold=P) + "\n")
        (out / f"{stem}.txt").write_text(rows_to_text(rows, title=f"probability threshold P = {P:.2f}"))
        files += [out / f"{stem}.json", out / f"{stem}.txt"]
    run.sweep.to_csv(out / "sweep.csv")
    files.append(out / "sweep.csv")
    if costs is not None:
        cost_rows = []
        for r in run.sweep.rows:
            m = costmodel.OperatingMetrics(r["recall"] or 0.0, r["precision"])
            cost_rows.append(costmodel.cost_row(costs, m, threshold=r["P"]))
        costmodel.write_cost_csv(cost_rows, out / "cost.csv")
        files.append(out / "cost.csv")
    sel = {"P_opt_acc": run.sweep.p_opt_acc, "P_opt_cost": run.sweep.p_opt_cost,
           "cost_params": None if costs is None else vars(costs)}
    (out / "selection.json").write_text(json.dumps(sel, indent=2) + "\n")
    files.append(out / "selection.json")
    return files


def _write_scores(out: Path, run):
    path = out / "scores.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "conclusion", "p_correct", "truth"])
        for sid, c, p, t in zip(run.test_set.ids, run.test_set.conclusions, run.p_correct, run.test_set.truths):
            w.writerow([sid, int(c), repr(float(p)), int(t)])
    return path


def cmd_correct(cfg, args) -> int:
    out = Path(cfg["output_dir"])
    with run_lock(out):
        ds, reasoned = _load_run_inputs(out, cfg)
        t = cfg["train"]
        run = run_correction(
            ds, reasoned, SplitSpec(cfg["split"]["train_fraction"], _seed(cfg, "split")), _tfidf_cfg(cfg),
            TrainParams(t["l2"] or None, t["tol"], t["max_iter"]), build_costs(cfg),
            cfg["thresholds"]["grid"], cfg["thresholds"]["report"],
            prevalence_from_test=cfg["costs"]["ep"] < 0,
        )
        costs = run.sweep.extra["costs"]
        run.vectorizer.save(out / "vectorizer.json")
        run.model.save(out / "corrector.json")
        files = [out / "vectorizer.json", out / "corrector.json", _write_scores(out, run)]
        files += _write_reports(out, run, costs)
        n_excl = run.n_excluded_train + run.n_excluded_test
        counts = {
            "ingested": len(ds),
            "evaluated": len(run.train_set.ids) + len(run.test_set.ids),
            "excluded_not_sure": n_excl,
            "train": len(run.train_set.ids),
            "test": len(run.test_set.ids),
            "target_balance": run.target_balance,
            "flagged": {f"{r['P']:.2f}": r["flagged"] for r in run.sweep.rows},
            "flipped": {f"{r['P']:.2f}": r["flipped"] for r in run.sweep.rows},
        }
        update_manifest(out, "correct", cfg, counts, files)
    for P, rows in run.reports.items():
        print(rows_to_text(rows, title=f"probability threshold P = {P:.2f}"))
    p_cost = "n/a" if run.sweep.p_opt_cost is None else f"{run.sweep.p_opt_cost:.2f}"
    print(f"P_opt (accuracy) = {run.sweep.p_opt_acc:.2f}; P_opt (cost) = {p_cost}")
    return 0


def _rescore(out: Path, cfg):
    """Rebuild the test split and score it with the saved vectorizer and corrector."""
    ds, reasoned = _load_run_inputs(out, cfg)
    for name in ("vectorizer.json", "corrector.json"):
        if not (out / name).exists():
            raise DataError(f"{out / name} not found; run `lpcorp correct` first")
    vec = features.TfidfModel.load(out / "vectorizer.json")
    model = CorrectionModel.load(out / "corrector.json", vectorizer=vec)
    _, test_ds = split(ds, SplitSpec(cfg["split"]["train_fraction"], _seed(cfg, "split")))
    r_by_id = {r.sample_id: r for r in reasoned}
    te = make_labels([r_by_id[s.id] for s in test_ds.samples], test_ds)
    p = model.predict_proba(vec.transform_many(te.docs))
    return te, p


def cmd_sweep(cfg, args) -> int:
    out = Path(cfg["output_dir"])
    with run_lock(out):
        te, p = _rescore(out, cfg)
        ep = float(np.mean(te.truths)) if cfg["costs"]["ep"] < 0 else None
        costs = build_costs(cfg, ep)
        res = analytics.sweep_threshold(te.conclusions, p, te.truths, costs, cfg["thresholds"]["grid"])
        res.to_csv(out / "sweep.csv")
    for r in res.rows:
        print(f"P={r['P']:.2f} acc={r['acc']:.4f} flagged={r['flagged']} cost={r['cost']:.2f} "
              f"reduction={r['reduction_pct']:.2f}%")
    print(f"P_opt (accuracy) = {res.p_opt_acc:.2f}; P_opt (cost) = {res.p_opt_cost:.2f}")
    return 0


def cmd_report(cfg, args) -> int:
    out = Path(cfg["output_dir"])
    with run_lock(out):
        te, p = _rescore(out, cfg)
        stage1 = [Conclusion.from_label(int(c)) for c in te.conclusions]
        for P in (args.threshold or cfg["thresholds"]["report"]):
            decisions = [apply_correction(ReasonedSample(i, "", c, ""), float(q), P)
                         for i, c, q in zip(te.ids, stage1, p)]
            rows = three_row_report(stage1, decisions, te.truths.tolist())
            stem = f"metrics_P{P:.2f}"
            (out / f"{stem}.json").write_text(rows_to_json(rows, threshold=P) + "\n")
            text = rows_to_text(rows, title=f"probability threshold P = {P:.2f}")
            (out / f"{stem}.txt").write_text(text)
            print(text)
    return 0


def cmd_cost(cfg, args) -> int:
    ep = args.ep if args.ep is not None else (cfg["costs"]["ep"] if cfg["costs"]["ep"] >= 0 else None)
    if ep is None:
        raise UsageError("cost needs an event prevalence (--ep or costs.ep)")
    try:
        params = build_costs(cfg, ep)
        m = costmodel.OperatingMetrics(args.recall, args.precision)
        row = costmodel.cost_row(params, m)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    costmodel.write_cost_csv([row], out / "cost_point.csv")
    print(f"baseline {row['baseline']:.2f}/sample, model {row['cost_per_sample']:.2f}/sample, "
          f"reduction {row['reduction_pct']:.2f}%")
    return 0


def cmd_simulate(cfg, args) -> int:
    try:
        op = analytics.OperatingPoint(args.pi, args.tpr, args.tnr)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    if args.n < 1:
        raise UsageError("n must be >= 1")
    closed = analytics.acc_corrected(op)
    mc = analytics.monte_carlo_acc(op, args.n, args.seed)
    se = (closed * (1 - closed) / args.n) ** 0.5
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "simulate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pi", "tpr", "tnr", "n", "seed", "acc_closed_form", "acc_monte_carlo", "std_error",
                     "net_improvement", "improves"])
        w.writerow([args.pi, args.tpr, args.tnr, args.n, args.seed, repr(closed), repr(mc), repr(se),
                    repr(analytics.net_improvement(op)), analytics.improves(op)])
    print(f"closed form {closed:.6f}  monte carlo {mc:.6f}  (n={args.n}, std err {se:.2e})")
    print(f"net improvement {analytics.net_improvement(op):+.6f}; improves: {analytics.improves(op)}")
    return 0


def cmd_heatmap(cfg, args) -> int:
    if not 0 <= args.pi <= 1 or args.steps < 2:
        raise UsageError("need 0 <= pi <= 1 and steps >= 2")
    grid = analytics.heatmap_grid(args.pi, args.steps, args.steps)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    grid.to_csv(out / "heatmap.csv")
    if args.svg:
        grid.to_svg(out / "heatmap.svg")
    print(f"wrote {args.steps * args.steps} cells to {out / 'heatmap.csv'}")
    return 0


def cmd_tempalign(cfg, args) -> int:
    tl = cfg["temporal"]["timelines"]
    if not tl:
        raise UsageError("tempalign needs temporal.timelines (or --timelines)")
    timelines = temporal.read_timelines(tl)
    h = temporal.HorizonConfig(cfg["temporal"]["horizon_hours"])
    res = temporal.align_cohort(timelines, h, _seed(cfg, "pseudo-event"),
                                cfg["dataset"]["class0_name"], cfg["dataset"]["class1_name"])
    out = Path(cfg["output_dir"])
    with run_lock(out):
        write_jsonl(res.dataset, out / "aligned.jsonl")
        rep = res.exclusion_report()
        rep["input_admissions"] = len(timelines)
        (out / "exclusions.json").write_text(json.dumps(rep, indent=2) + "\n")
        pos_only = temporal.export_distributions(res.positive_offsets, None, cfg["temporal"]["bins"])
        pos_only.histogram_csv(out / "offsets_positive_hist.csv")
        pos_only.kde_csv(out / "offsets_positive_kde.csv")
        files = [out / "aligned.jsonl", out / "exclusions.json",
                 out / "offsets_positive_hist.csv", out / "offsets_positive_kde.csv"]
        if len(res.negative_offsets):
            both = temporal.export_distributions(res.positive_offsets, res.negative_offsets, cfg["temporal"]["bins"])
            both.histogram_csv(out / "offsets_compare_hist.csv")
            both.kde_csv(out / "offsets_compare_kde.csv")
            files += [out / "offsets_compare_hist.csv", out / "offsets_compare_kde.csv"]
        update_manifest(out, "tempalign", cfg, rep, files)
    print(f"aligned {rep['emitted']} admissions ({rep['emitted_positive']} positive); excluded {rep['excluded']}")
    return 0


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML run configuration")
    common.add_argument("-o", "--output-dir", help="run directory (config: output_dir)")
    common.add_argument("--seed", type=int, help="global seed (config: seed)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. tfidf.ngram_max=3")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lpcorp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("reason", parents=[common], help="stage 1: reason over every sample")
    s.add_argument("--dataset", help="dataset file (config: dataset.path)")
    s.set_defaults(func=cmd_reason)

    s = sub.add_parser("correct", parents=[common], help="stage 2: train, correct, evaluate, sweep")
    s.set_defaults(func=cmd_correct)

    s = sub.add_parser("sweep", parents=[common], help="re-run the threshold sweep from saved models")
    s.add_argument("--grid", type=float, nargs="+", help="thresholds (config: thresholds.grid)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="three-row metrics tables from saved models")
    s.add_argument("--threshold", type=float, nargs="+")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("cost", parents=[common], help="expected cost of one operating point")
    s.add_argument("--preset", help="complaints | readmission | ihca (config: costs.preset)")
    s.add_argument("--ep", type=float, help="event prevalence")
    s.add_argument("--recall", type=float, required=True)
    s.add_argument("--precision", type=float)
    s.set_defaults(func=cmd_cost)

    s = sub.add_parser("simulate", parents=[common], help="closed-form vs Monte Carlo corrected accuracy")
    s.add_argument("--pi", type=float, required=True)
    s.add_argument("--tpr", type=float, required=True)
    s.add_argument("--tnr", type=float, required=True)
    s.add_argument("-n", type=int, default=1_000_000)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("heatmap", parents=[common], help="net-improvement grid over (TPR, TNR)")
    s.add_argument("--pi", type=float, default=0.7)
    s.add_argument("--steps", type=int, default=101)
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_heatmap)

    s = sub.add_parser("tempalign", parents=[common], help="index-time alignment of admission timelines")
    s.add_argument("--timelines", help="timeline JSONL (config: temporal.timelines)")
    s.add_argument("--horizon", type=float, help="hours (config: temporal.horizon_hours)")
    s.set_defaults(func=cmd_tempalign)
    return p


_FLAG_KEYS = {
    "output_dir": "output_dir", "dataset": "dataset.path", "timelines": "temporal.timelines",
    "horizon": "temporal.horizon_hours", "preset": "costs.preset", "grid": "thresholds.grid",
}


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = list(args.set)
        for attr, key in _FLAG_KEYS.items():
            v = getattr(args, attr, None)
            if v is not None:
                overrides.append(f"{key}={json.dumps(v)}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            args.seed = cfg["seed"]
        return args.func(cfg, args)
    except LpcorpError as exc:
        print(f"lpcorp: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
