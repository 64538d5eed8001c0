"""Glue between the label-blind trainer and the evaluator."""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence

import numpy as np

from cpr.metrics import DEFAULT_KS, MetricsReport, epoch_metrics, retrieval_recall
from cpr.miner import CascadeConfig, MiningResult, cascade_mine
from cpr.store import Dataset, MemoryBank, ValidationError
from cpr.trainer import EpochLog, ToyEncoder, TrainResult, TrainSchedule, fill_bank, train


def _labels(ds: Dataset) -> tuple[dict[str, int], dict[int, int]]:
    id_labels = {r.id: r.class_label for r in ds.records}
    if any(c is None for c in id_labels.values()):
        raise ValidationError("evaluation needs class labels for every instance")
    return id_labels, dict(sorted(Counter(id_labels.values()).items()))


def retrieval_for(
    encoders: dict[str, ToyEncoder], train_ds: Dataset, test_ds: Dataset, view: str,
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, float]:
    enc = encoders[view]
    return retrieval_recall(
        enc.encode(test_ds.matrix(view)), test_ds.labels,
        enc.encode(train_ds.matrix(view)), train_ds.labels, ks,
    )


def run_training(
    train_ds: Dataset,
    cfg: CascadeConfig,
    sched: TrainSchedule,
    test_ds: Dataset | None = None,
    ks: Sequence[int] = DEFAULT_KS,
    eval_view: str | None = None,
) -> tuple[TrainResult, MetricsReport, list[tuple[str, MiningResult]]]:
    """Train, then report per-epoch PMR/CMR and held-out R@k.

    Returns the training result, the report, and the last epoch's traces.
    The trainer receives a label-free copy of ``train_ds``.
    """
    id_labels, class_sizes = _labels(train_ds)
    report = MetricsReport(class_sizes=class_sizes)
    last: list[tuple[str, MiningResult]] = []

    def on_epoch(log: EpochLog) -> None:
        em, per_class, tp = epoch_metrics(log.cycle, log.epoch, log.loss_mean, log.traces, id_labels, class_sizes)
        report.epochs.append(em)
        report.cmr_per_class = per_class
        report.per_class_tp_counts = tp
        last[:] = log.traces

    result = train(train_ds.without_labels(), cfg, sched, on_epoch=on_epoch)
    if test_ds is not None:
        if eval_view is None:
            eval_view = sched.view_for_cycle(len(sched.cycles) - 1, train_ds.views)
        report.retrieval_recalls = retrieval_for(result.live, train_ds, test_ds, eval_view, ks)
    return result, report, last


def mine_once(
    ds: Dataset,
    cfg: CascadeConfig,
    query_view: str,
    encoders: dict[str, ToyEncoder],
    capacity: int | None = None,
) -> tuple[MemoryBank, list[tuple[str, MiningResult]]]:
    """Encode ``ds`` into a fresh bank and mine a positive set for every instance.

    The query variant is the instance itself (no augmentation); its own
    bank slots are excluded.
    """
    ccfg = cfg.resolve(query_view, ds.views)
    feats = {v: encoders[v].encode(ds.matrix(v)) for v in ds.views}
    dims = {v: feats[v].shape[1] for v in ds.views}
    bank = fill_bank(
        MemoryBank(capacity or len(ds), dims), ds.ids,
        {v: ds.matrix(v) for v in ds.views}, encoders, len(ds),
    )
    slot_ids = np.array(bank.slot_ids[: bank.size], dtype=object)
    traces = []
    for i, qid in enumerate(ds.ids):
        exclude = np.flatnonzero(slot_ids == qid).tolist()
        traces.append((qid, cascade_mine({v: feats[v][i] for v in ds.views}, bank, ccfg, exclude)))
    return bank, traces
