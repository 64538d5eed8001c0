"""Command-line entry point.

    cpr synth  --config run.ini          write synthetic feature files
    cpr ingest --config run.ini [FILE..] validate feature files
    cpr train  --config run.ini          train (one run per sweep combination)
    cpr mine   --config run.ini          one-shot mining over a dataset
    cpr eval   --config run.ini --checkpoint CKPT
    cpr report --out DIR                 collect run reports into CSV tables

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from cpr import config as config_mod
from cpr.metrics import MetricsReport, epoch_metrics
from cpr.miner import format_trace
from cpr.pipeline import mine_once, retrieval_for, run_training
from cpr.store import Dataset, ValidationError, load_features, save_features
from cpr.synthetic import generate_holdout, generate_synthetic
from cpr.trainer import init_encoders, load_checkpoint, save_checkpoint

log = logging.getLogger("cpr")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_lines(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines))


def load_data(cfg: config_mod.RunConfig) -> tuple[Dataset, Dataset | None]:
    if cfg.train_path:
        train = load_features(cfg.train_path)
        test = load_features(cfg.test_path) if cfg.test_path else None
        return train, test
    train = generate_synthetic(cfg.synthetic, cfg.seed)
    test = generate_holdout(cfg.synthetic, cfg.seed, cfg.holdout_per_class) if cfg.holdout_per_class else None
    return train, test


def _runs(args) -> list[tuple[str, config_mod.RunConfig]]:
    if not args.config:
        raise ValidationError("--config is required")
    cp = config_mod.read_parser(args.config)
    config_mod.apply_overrides(cp, args.seed, args.out)
    runs = config_mod.expand(cp)
    if len(runs) > 1:
        for name, cfg in runs:
            cfg.out = str(Path(cfg.out) / name)
    return runs


def _dry(runs) -> int:
    for name, cfg in runs:
        print(_dump({"run": name, "config": cfg.to_dict()}))
    return 0


def cmd_synth(args) -> int:
    runs = _runs(args)
    if args.dry_run:
        return _dry(runs)
    for _, cfg in runs:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        train = generate_synthetic(cfg.synthetic, cfg.seed)
        save_features(train, out / "train.tsv")
        print(f"wrote {len(train)} records to {out / 'train.tsv'}")
        if cfg.holdout_per_class:
            test = generate_holdout(cfg.synthetic, cfg.seed, cfg.holdout_per_class)
            save_features(test, out / "test.tsv")
            print(f"wrote {len(test)} records to {out / 'test.tsv'}")
    return 0


def _summary(name: str, ds: Dataset) -> dict:
    labels = Counter(c for c in ds.labels if c is not None)
    return {
        "file": name,
        "instances": len(ds),
        "views": list(ds.views),
        "dims": ds.dims,
        "labeled": sum(labels.values()),
        "classes": len(labels),
    }


def cmd_ingest(args) -> int:
    paths = list(args.files)
    out = Path(args.out) if args.out else None
    if args.config:
        (_, cfg), *_ = _runs(args)
        paths += [p for p in (cfg.train_path, cfg.test_path) if p]
        out = Path(cfg.out)
    if not paths:
        raise ValidationError("no feature files given (pass FILE arguments or [data] in --config)")
    if args.dry_run:
        print(_dump({"files": paths}))
        return 0
    lines = [_dump(_summary(p, load_features(p))) for p in paths]
    for line in lines:
        print(line)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_lines(out / "ingest.jsonl", lines)
    return 0


def _train_one(cfg: config_mod.RunConfig) -> MetricsReport:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_data(cfg)
    result, report, last = run_training(train_ds, cfg.cascade, cfg.schedule, test_ds, cfg.ks, cfg.eval_view)
    resolved = cfg.to_dict()
    save_checkpoint(out / "checkpoint.json", result, resolved)
    rows = ["epoch\tcycle\tloss_mean\tpmr_mean\tcmr_median\tmining_r_at_1"]
    for e in report.epochs:
        rows.append(f"{e.epoch}\t{e.cycle}\t{e.loss_mean!r}\t{e.pmr_mean!r}\t{e.cmr_median!r}\t{e.mining_r_at_1!r}")
    _write_lines(out / "run_log.tsv", rows)
    _write_lines(out / "report.jsonl", report.to_lines(resolved))
    (out / "cmr_per_class.csv").write_text(report.cmr_table())
    _write_lines(out / "traces.tsv", [line for qid, res in last for line in format_trace(qid, res)])
    return report


def cmd_train(args) -> int:
    runs = _runs(args)
    if args.dry_run:
        return _dry(runs)
    for name, cfg in runs:
        report = _train_one(cfg)
        recalls = " ".join(f"R@{k}={v:.3f}" for k, v in sorted(report.retrieval_recalls.items()))
        print(
            f"{name}: pmr_last={report.pmr_series[-1]:.4f} cmr_median={report.cmr_median:.4f} "
            f"mining_r@1={report.mining_r_at_1:.4f} {recalls} -> {cfg.out}"
        )
    return 0


def cmd_mine(args) -> int:
    runs = _runs(args)
    if args.dry_run:
        return _dry(runs)
    for name, cfg in runs:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        ds, _ = load_data(cfg)
        if args.checkpoint:
            encoders = load_checkpoint(args.checkpoint)[0].live
        else:
            encoders = init_encoders(ds.dims)
        qv = cfg.query_view or ds.views[0]
        _, traces = mine_once(ds, cfg.cascade, qv, encoders)
        _write_lines(out / "mine_traces.tsv", [line for qid, res in traces for line in format_trace(qid, res)])
        lines = [_dump({"type": "config", "config": cfg.to_dict(), "query_view": qv})]
        if all(c is not None for c in ds.labels):
            id_labels = {r.id: r.class_label for r in ds.records}
            sizes = dict(sorted(Counter(id_labels.values()).items()))
            em, per_class, tp = epoch_metrics(0, 0, float("nan"), traces, id_labels, sizes)
            rep = MetricsReport([em], per_class, tp, sizes)
            lines += rep.to_lines()
            print(f"{name}: pmr={em.pmr_mean:.4f} cmr_median={rep.cmr_median:.4f} mining_r@1={em.mining_r_at_1:.4f}")
        _write_lines(out / "mine_report.jsonl", lines)
    return 0


def cmd_eval(args) -> int:
    runs = _runs(args)
    if not args.checkpoint:
        raise ValidationError("--checkpoint is required for eval")
    if args.dry_run:
        return _dry(runs)
    result, _ = load_checkpoint(args.checkpoint)
    for name, cfg in runs:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        train_ds, test_ds = load_data(cfg)
        sanity = test_ds is None
        if sanity:
            test_ds = train_ds
        lines = [_dump({"type": "config", "config": cfg.to_dict(), "checkpoint": str(args.checkpoint)})]
        for view in ([cfg.eval_view] if cfg.eval_view else list(train_ds.views)):
            recalls = retrieval_for(result.live, train_ds, test_ds, view, cfg.ks)
            rec = {"type": "retrieval", "view": view, "recalls": {str(k): v for k, v in recalls.items()}}
            if sanity:
                rec["sanity_train_equals_test"] = True
                rec["sanity_r1_ok"] = recalls.get(1) == 1.0 if 1 in recalls else None
            lines.append(_dump(rec))
            print(f"{name} [{view}]: " + " ".join(f"R@{k}={v:.3f}" for k, v in recalls.items())
                  + (" (train=test sanity check)" if sanity else ""))
        _write_lines(out / "eval_report.jsonl", lines)
    return 0


def cmd_report(args) -> int:
    root = Path(args.out or (args.config and config_mod.build(config_mod.read_parser(args.config)).out) or ".")
    reports = sorted(root.glob("**/report.jsonl"))
    if not reports:
        raise ValidationError(f"no report.jsonl found under {root}")
    if args.dry_run:
        for p in reports:
            print(p)
        return 0
    summary = ["run,num_stages,selection_ratio,pmr_last,cmr_median,mining_r_at_1,recalls"]
    series = ["run,epoch,loss_mean,pmr_mean,cmr_median"]
    for p in reports:
        recs = [json.loads(line) for line in p.read_text().splitlines() if line]
        conf = next((r["config"] for r in recs if r["type"] == "config"), {})
        summ = next(r for r in recs if r["type"] == "summary")
        run = str(p.parent.relative_to(root)) or "."
        cas = conf.get("cascade", {})
        recalls = " ".join(
            f"R@{k}={v!r}" for k, v in sorted(summ["retrieval_recalls"].items(), key=lambda kv: int(kv[0]))
        )
        summary.append(
            f"{run},{cas.get('num_stages')},{cas.get('selection_ratio')},{summ['pmr_last']!r},"
            f"{summ['cmr_median']!r},{summ['mining_r_at_1']!r},{recalls}"
        )
        for r in recs:
            if r["type"] == "epoch":
                series.append(f"{run},{r['epoch']},{r['loss_mean']!r},{r['pmr_mean']!r},{r['cmr_median']!r}")
    _write_lines(root / "summary.csv", summary)
    _write_lines(root / "pmr_series.csv", series)
    print("\n".join(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpr", description="Cascade positive retrieval toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train,
        "mine": cmd_mine, "eval": cmd_eval, "report": cmd_report,
    }
    for name, fn in handlers.items():
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--dry-run", action="store_true")
        if name in ("mine", "eval"):
            p.add_argument("--checkpoint")
        if name == "ingest":
            p.add_argument("files", nargs="*")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
