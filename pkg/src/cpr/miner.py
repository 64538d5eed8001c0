"""Staged cascade selection of positive slots from a memory bank.

Each stage ranks the surviving candidates by similarity to the query
variant in one view. Stages before the last keep ``ceil(r * count)`` of
them; the last keeps the top ``final_topk``, which becomes the mined
positive set. Everything else in the bank (minus excluded slots) is a
negative.

Mining is a pure function of the query features, a bank snapshot and the
config, so many queries can be mined in parallel against a frozen bank.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from cpr.store import MemoryBank, ValidationError, rank_slots


@dataclass(frozen=True)
class CascadeConfig:
    num_stages: int = 1
    selection_ratio: float = 0.5
    final_topk: int = 5
    # None means "alternate views starting from the one after the query view".
    view_schedule: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_stages < 1:
            raise ValidationError("num_stages must be >= 1")
        if not 0.0 < self.selection_ratio <= 1.0:
            raise ValidationError("selection_ratio must be in (0, 1]")
        if self.final_topk < 1:
            raise ValidationError("final_topk must be >= 1")
        if self.view_schedule is not None:
            object.__setattr__(self, "view_schedule", tuple(self.view_schedule))
            if len(self.view_schedule) != self.num_stages:
                raise ValidationError(
                    f"view_schedule has {len(self.view_schedule)} entries, "
                    f"expected num_stages={self.num_stages}"
                )

    def resolve(self, query_view: str, views: Sequence[str]) -> CascadeConfig:
        """Fill in the default alternating schedule for ``query_view``."""
        if self.view_schedule is not None:
            unknown = set(self.view_schedule) - set(views)
            if unknown:
                raise ValidationError(f"view_schedule names unknown view(s) {sorted(unknown)}")
            return self
        return replace(self, view_schedule=default_schedule(query_view, views, self.num_stages))


def default_schedule(query_view: str, views: Sequence[str], num_stages: int) -> tuple[str, ...]:
    """Cycle through ``views`` starting with the one after ``query_view``.

    With two views and an rgb query this gives flow, rgb, flow, ...
    """
    views = list(views)
    if query_view not in views:
        raise ValidationError(f"unknown query view {query_view!r}")
    start = views.index(query_view) + 1
    return tuple(views[(start + s) % len(views)] for s in range(num_stages))


def ratio_count(n: int, ratio: float) -> int:
    # Rounded before ceil so 0.3 * 10 gives 3, not 4.
    return max(1, math.ceil(round(ratio * n, 9)))


@dataclass(frozen=True)
class StageTrace:
    stage: int
    view: str
    num_candidates: int
    selected: tuple[int, ...]
    # Set on the last stage when fewer than final_topk candidates survived.
    short: bool = False


@dataclass(frozen=True)
class MiningResult:
    positives: tuple[int, ...]  # ranked, best first
    negatives: np.ndarray = field(repr=False)  # sorted slot indices
    stage_trace: tuple[StageTrace, ...] = ()
    positive_ids: tuple[str, ...] = ()
    excluded: frozenset[int] = frozenset()

    @property
    def positive_set(self) -> frozenset[int]:
        return frozenset(self.positives)

    @property
    def negative_set(self) -> frozenset[int]:
        return frozenset(self.negatives.tolist())


def _as_candidates(candidates: Iterable[int], bank: MemoryBank) -> np.ndarray:
    cand = np.array(sorted(set(int(c) for c in candidates)), dtype=np.intp)
    if cand.size and (cand[0] < 0 or cand[-1] >= bank.capacity):
        raise ValidationError("candidate slot out of range")
    return cand


def select(query_feat, bank: MemoryBank, view: str, candidates: Iterable[int], ratio: float) -> tuple[int, ...]:
    """Top ``ceil(ratio * |candidates|)`` candidates by similarity, best first."""
    if not 0.0 < ratio <= 1.0:
        raise ValidationError("ratio must be in (0, 1]")
    cand = _as_candidates(candidates, bank)
    if cand.size == 0:
        raise ValidationError("empty candidates")
    ranked, _ = rank_slots(query_feat, bank, view, cand)
    return tuple(ranked[: ratio_count(cand.size, ratio)].tolist())


def topk(query_feat, bank: MemoryBank, view: str, candidates: Iterable[int], k: int) -> tuple[int, ...]:
    """The ``min(k, |candidates|)`` most similar candidates, best first."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    cand = _as_candidates(candidates, bank)
    ranked, _ = rank_slots(query_feat, bank, view, cand)
    return tuple(ranked[:k].tolist())


def cascade_mine(
    query_variant_feats: Mapping[str, np.ndarray],
    bank: MemoryBank,
    cfg: CascadeConfig,
    exclude: Iterable[int] = (),
) -> MiningResult:
    """Run the full cascade for one query.

    ``query_variant_feats`` maps each view to the query variant's unit
    feature; stage ``s`` scores candidates with the feature of view
    ``cfg.view_schedule[s]``. ``cfg`` must carry a resolved schedule.
    """
    if cfg.view_schedule is None:
        raise ValidationError("view_schedule not resolved; call cfg.resolve(query_view, views)")
    for v in cfg.view_schedule:
        if v not in query_variant_feats:
            raise ValidationError(f"query variant lacks view {v!r}")
        if v not in bank.slots:
            raise ValidationError(f"unknown view {v!r}")
    excluded = frozenset(int(t) for t in exclude)
    valid = bank.valid_slots()
    cand = valid[~np.isin(valid, list(excluded))] if excluded else valid
    if cand.size == 0:
        raise ValidationError("empty candidate set after exclusion")

    trace = []
    n = cfg.num_stages
    for s, view in enumerate(cfg.view_schedule, 1):
        ranked, _ = rank_slots(query_variant_feats[view], bank, view, cand)
        if s < n:
            keep, short = ratio_count(cand.size, cfg.selection_ratio), False
        else:
            keep, short = min(cfg.final_topk, cand.size), cfg.final_topk > cand.size
        chosen = ranked[:keep]
        trace.append(StageTrace(s, view, int(cand.size), tuple(chosen.tolist()), short))
        cand = np.sort(chosen)

    positives = trace[-1].selected
    drop = np.fromiter(excluded.union(positives), dtype=np.intp)
    negatives = valid[~np.isin(valid, drop)]
    return MiningResult(
        positives=positives,
        negatives=negatives,
        stage_trace=tuple(trace),
        positive_ids=tuple(bank.slot_ids[t] for t in positives),
        excluded=excluded,
    )


def format_trace(query_id: str, result: MiningResult) -> list[str]:
    """Tab-separated log lines: query id, stage, view, candidate count, slots."""
    lines = []
    for st in result.stage_trace:
        slots = ",".join(str(t) for t in st.selected)
        flag = "\tshort" if st.short else ""
        lines.append(f"{query_id}\t{st.stage}\t{st.view}\t{st.num_candidates}\t{slots}{flag}")
    return lines


def parse_trace(lines: Iterable[str]) -> list[tuple[str, StageTrace]]:
    out = []
    for line in lines:
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) not in (5, 6):
            raise ValidationError(f"malformed trace line: {line!r}")
        qid, stage, view, count, slots = parts[:5]
        sel = tuple(int(t) for t in slots.split(",")) if slots else ()
        out.append((qid, StageTrace(int(stage), view, int(count), sel, len(parts) == 6)))
    return out
