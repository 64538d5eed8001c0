"""Mining-quality and retrieval metrics.

This is the only module that reads class labels. PMR is the fraction of
true positives in one mined set (the query's own variant is not counted);
CMR is, per class, the fraction of its instances mined at least once as a
true positive during one epoch.
"""

from __future__ import annotations

import json
import statistics
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from cpr.miner import MiningResult
from cpr.store import ValidationError, normalize

DEFAULT_KS = (1, 5, 10, 20)


def slot_labels(mining: MiningResult, id_labels: Mapping[str, Hashable]) -> dict[int, Hashable]:
    """Map each positive slot of ``mining`` to the class of the instance it held."""
    return {t: id_labels[iid] for t, iid in zip(mining.positives, mining.positive_ids)}


def pmr(mining: MiningResult, query_class, labels: Mapping[int, Hashable]) -> float:
    if not mining.positives:
        raise ValidationError("empty positive set")
    tp = sum(1 for t in mining.positives if labels[t] == query_class)
    return tp / len(mining.positives)


def mining_r_at_1(mining: MiningResult, query_class, labels: Mapping[int, Hashable]) -> int:
    if not mining.positives:
        raise ValidationError("empty positive set")
    return int(labels[mining.positives[0]] == query_class)


def distinct_true_positives(
    epoch_traces: Sequence[tuple[str, MiningResult]], id_labels: Mapping[str, Hashable]
) -> dict[Hashable, set[str]]:
    found: dict[Hashable, set[str]] = {}
    for qid, res in epoch_traces:
        qc = id_labels[qid]
        for iid in res.positive_ids:
            if iid != qid and id_labels[iid] == qc:
                found.setdefault(qc, set()).add(iid)
    return found


def cmr(
    epoch_traces: Sequence[tuple[str, MiningResult]],
    id_labels: Mapping[str, Hashable],
    class_sizes: Mapping[Hashable, int],
) -> dict[Hashable, float]:
    """Per-class fraction of distinct instances mined as true positives.

    ``epoch_traces`` pairs each query id with its mining result. Duplicate
    bank copies of one instance count once.
    """
    for qid, _ in epoch_traces:
        if id_labels[qid] not in class_sizes:
            raise ValidationError(f"unknown class size for class {id_labels[qid]!r}")
    found = distinct_true_positives(epoch_traces, id_labels)
    return {c: len(found.get(c, ())) / n for c, n in class_sizes.items()}


def retrieval_recall(
    test_emb: np.ndarray,
    test_labels: Sequence[Hashable],
    train_emb: np.ndarray,
    train_labels: Sequence[Hashable],
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, float]:
    """R@k: a test query counts as correct if any of its k nearest training
    neighbors (cosine) shares its class. Ties go to the lower training index."""
    train_emb = np.asarray(train_emb, dtype=np.float64)
    if train_emb.size == 0:
        raise ValidationError("empty train set")
    test = normalize(test_emb)
    train = normalize(train_emb)
    if any(k < 1 for k in ks):
        raise ValidationError("k must be >= 1")
    sims = test @ train.T
    order = np.argsort(-sims, axis=1, kind="stable")
    kmax = min(max(ks), train.shape[0])
    tl = np.asarray(train_labels)
    hits = tl[order[:, :kmax]] == np.asarray(test_labels)[:, None]
    first = np.where(hits.any(axis=1), hits.argmax(axis=1), kmax)
    return {int(k): float(np.mean(first < k)) for k in ks}


@dataclass
class EpochMetrics:
    cycle: int
    epoch: int
    loss_mean: float
    pmr_mean: float
    mining_r_at_1: float
    cmr_median: float


@dataclass
class MetricsReport:
    epochs: list[EpochMetrics] = field(default_factory=list)
    cmr_per_class: dict = field(default_factory=dict)
    per_class_tp_counts: dict = field(default_factory=dict)
    class_sizes: dict = field(default_factory=dict)
    retrieval_recalls: dict = field(default_factory=dict)

    @property
    def pmr_series(self) -> list[float]:
        return [e.pmr_mean for e in self.epochs]

    @property
    def loss_series(self) -> list[float]:
        return [e.loss_mean for e in self.epochs]

    @property
    def cmr_median(self) -> float:
        return statistics.median(self.cmr_per_class.values()) if self.cmr_per_class else float("nan")

    @property
    def mining_r_at_1(self) -> float:
        return self.epochs[-1].mining_r_at_1 if self.epochs else float("nan")

    def to_lines(self, config: Mapping | None = None) -> list[str]:
        """Line-delimited JSON; the first line embeds the resolved config."""
        dump = lambda obj: json.dumps(obj, sort_keys=True)  # noqa: E731
        lines = []
        if config is not None:
            lines.append(dump({"type": "config", "config": config}))
        for e in self.epochs:
            lines.append(dump({"type": "epoch", **asdict(e)}))
        for c in sorted(self.cmr_per_class):
            lines.append(dump({
                "type": "class",
                "class": c,
                "cmr": self.cmr_per_class[c],
                "tp_count": self.per_class_tp_counts.get(c, 0),
                "class_size": self.class_sizes.get(c),
            }))
        summary = {
            "type": "summary",
            "pmr_last": self.pmr_series[-1] if self.epochs else None,
            "mining_r_at_1": self.mining_r_at_1 if self.epochs else None,
            "cmr_median": self.cmr_median if self.cmr_per_class else None,
            "retrieval_recalls": {str(k): v for k, v in sorted(self.retrieval_recalls.items())},
        }
        lines.append(dump(summary))
        return lines

    def cmr_table(self) -> str:
        rows = ["class,cmr,tp_count,class_size"]
        for c in sorted(self.cmr_per_class):
            rows.append(
                f"{c},{self.cmr_per_class[c]!r},{self.per_class_tp_counts.get(c, 0)},{self.class_sizes.get(c)}"
            )
        return "\n".join(rows) + "\n"


def epoch_metrics(
    cycle: int,
    epoch: int,
    loss_mean: float,
    traces: Sequence[tuple[str, MiningResult]],
    id_labels: Mapping[str, Hashable],
    class_sizes: Mapping[Hashable, int],
) -> tuple[EpochMetrics, dict, dict]:
    """Aggregate one epoch of traces into (EpochMetrics, cmr per class, tp counts)."""
    ordered = sorted(traces, key=lambda qt: qt[0])
    pmrs, r1s = [], []
    for qid, res in ordered:
        labels = slot_labels(res, id_labels)
        pmrs.append(pmr(res, id_labels[qid], labels))
        r1s.append(mining_r_at_1(res, id_labels[qid], labels))
    per_class = cmr(ordered, id_labels, class_sizes)
    tp = {c: len(s) for c, s in distinct_true_positives(ordered, id_labels).items()}
    em = EpochMetrics(
        cycle=cycle,
        epoch=epoch,
        loss_mean=loss_mean,
        pmr_mean=float(np.mean(pmrs)) if pmrs else float("nan"),
        mining_r_at_1=float(np.mean(r1s)) if r1s else float("nan"),
        cmr_median=statistics.median(per_class.values()) if per_class else float("nan"),
    )
    return em, per_class, {c: tp.get(c, 0) for c in class_sizes}
