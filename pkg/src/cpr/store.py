"""Multi-view instance datasets and the index-aligned feature memory bank.

The bank keeps one ring queue per view. Slot ``t`` in every view always
belongs to the same instance ``slot_ids[t]``, so a slot index selected by
similarity in one view can be looked up directly in any other view.

Reads (``similarities`` and the miner built on top of it) may run
concurrently against a bank; ``bank_update`` needs exclusive access.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNIT_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when inputs violate a data contract."""


class DegenerateFeatureError(ValidationError):
    def __init__(self, msg: str = "degenerate feature"):
        super().__init__(msg)


def normalize(v) -> np.ndarray:
    """Scale ``v`` (or every row of a 2-D array) to unit L2 norm."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite feature value")
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateFeatureError()
    return arr / norms


def _check_unit(arr: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(arr, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        raise ValidationError(f"{what} is not unit-norm")


@dataclass
class InstanceRecord:
    id: str
    class_label: int | None
    features: dict[str, np.ndarray] = field(default_factory=dict)


class Dataset:
    """An ordered collection of instances that all carry the same views.

    Feature dims are fixed per view. ``class_label`` is carried along for
    evaluation; the miner and trainer only ever see ``ids`` and ``matrix``.
    """

    def __init__(self, records: Sequence[InstanceRecord], views: Sequence[str] | None = None):
        records = list(records)
        if not records:
            raise ValidationError("empty dataset")
        if views is None:
            views = list(records[0].features)
        views = tuple(views)
        if not views or any(not v for v in views):
            raise ValidationError("view names must be nonempty")
        if len(set(views)) != len(views):
            raise ValidationError("duplicate view name")
        seen: set[str] = set()
        dims: dict[str, int] = {}
        for rec in records:
            if rec.id in seen:
                raise ValidationError(f"duplicate instance id {rec.id!r}")
            seen.add(rec.id)
            for v in views:
                if v not in rec.features:
                    raise ValidationError(f"missing view {v!r} for instance {rec.id!r}")
                vec = np.asarray(rec.features[v], dtype=np.float64)
                if vec.ndim != 1 or vec.size == 0:
                    raise ValidationError(f"bad feature shape for {rec.id!r}/{v}")
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"non-finite feature for {rec.id!r}/{v}")
                d = dims.setdefault(v, vec.size)
                if vec.size != d:
                    raise ValidationError(
                        f"dim mismatch in view {v!r}: {rec.id!r} has {vec.size}, expected {d}"
                    )
                rec.features[v] = vec
            extra = set(rec.features) - set(views)
            if extra:
                raise ValidationError(f"unknown view(s) {sorted(extra)} for instance {rec.id!r}")
        self.records = records
        self.views = views
        self.dims = dims
        self._matrices: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def labels(self) -> list[int | None]:
        return [r.class_label for r in self.records]

    def matrix(self, view: str) -> np.ndarray:
        """Stacked features of one view, one row per instance (read-only)."""
        if view not in self._matrices:
            if view not in self.dims:
                raise ValidationError(f"unknown view {view!r}")
            m = np.stack([r.features[view] for r in self.records])
            m.setflags(write=False)
            self._matrices[view] = m
        return self._matrices[view]

    def normalized(self) -> Dataset:
        recs = [
            InstanceRecord(r.id, r.class_label, {v: normalize(r.features[v]) for v in self.views})
            for r in self.records
        ]
        return Dataset(recs, self.views)

    def without_labels(self) -> Dataset:
        recs = [InstanceRecord(r.id, None, dict(r.features)) for r in self.records]
        return Dataset(recs, self.views)


# -- feature file format ------------------------------------------------------
#
# One line per (instance, view):  id <TAB> label <TAB> view <TAB> f1,f2,...
# label -1 means unknown.


def save_features(dataset: Dataset, path: str | Path) -> None:
    lines = []
    for rec in dataset.records:
        label = -1 if rec.class_label is None else int(rec.class_label)
        for v in dataset.views:
            vals = ",".join(repr(float(x)) for x in rec.features[v])
            lines.append(f"{rec.id}\t{label}\t{v}\t{vals}\n")
    Path(path).write_text("".join(lines))


def load_features(path: str | Path) -> Dataset:
    """Parse a feature file; raises ValidationError on any malformed content."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"feature file not found: {path}")
    records: dict[str, InstanceRecord] = {}
    views: list[str] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 4 tab-separated fields")
        iid, label_s, view, vals = parts
        if not iid or not view:
            raise ValidationError(f"{path}:{lineno}: empty id or view")
        try:
            label = int(label_s)
            vec = np.array([float(x) for x in vals.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        label = None if label == -1 else label
        rec = records.get(iid)
        if rec is None:
            rec = records[iid] = InstanceRecord(iid, label, {})
        elif rec.class_label != label:
            raise ValidationError(f"{path}:{lineno}: conflicting labels for {iid!r}")
        if view in rec.features:
            raise ValidationError(f"{path}:{lineno}: duplicate view {view!r} for {iid!r}")
        rec.features[view] = vec
        if view not in views:
            views.append(view)
    if not records:
        raise ValidationError(f"{path}: no records")
    return Dataset(list(records.values()), views)


# -- memory bank ----------------------------------------------------------------


class MemoryBank:
    """Fixed-capacity FIFO of unit features, index-aligned across views.

    Slots are filled from index 0 upward, so the occupied slots are always
    ``range(size)``. Once full, writes wrap and overwrite the oldest entries.
    Duplicate instance ids are allowed; slot identity is the key.
    """

    def __init__(self, capacity: int, dims: Mapping[str, int]):
        if capacity < 1:
            raise ValidationError("capacity must be positive")
        if not dims:
            raise ValidationError("bank needs at least one view")
        self.capacity = int(capacity)
        self.views = tuple(dims)
        self.dims = dict(dims)
        self.slots = {v: np.zeros((self.capacity, d)) for v, d in self.dims.items()}
        self.slot_ids: list[str | None] = [None] * self.capacity
        self.write_cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def is_full(self) -> bool:
        return self.size == self.capacity

    def valid_slots(self) -> np.ndarray:
        return np.arange(self.size)

    def view(self, view: str) -> np.ndarray:
        try:
            return self.slots[view]
        except KeyError:
            raise ValidationError(f"unknown view {view!r}") from None

    def slots_of(self, instance_id: str) -> set[int]:
        return {t for t in range(self.size) if self.slot_ids[t] == instance_id}

    def copy(self) -> MemoryBank:
        other = MemoryBank(self.capacity, self.dims)
        for v in self.views:
            other.slots[v][:] = self.slots[v]
        other.slot_ids = list(self.slot_ids)
        other.write_cursor = self.write_cursor
        other.size = self.size
        return other

    def enqueue(self, ids: Sequence[str], feats: Mapping[str, np.ndarray]) -> None:
        """Write a batch given as one (batch x dim) matrix per view."""
        n = len(ids)
        if n == 0:
            return
        if n > self.capacity:
            raise ValidationError(f"batch of {n} exceeds bank capacity {self.capacity}")
        for v in self.views:
            if v not in feats:
                raise ValidationError(f"missing view {v!r}")
            m = np.asarray(feats[v], dtype=np.float64)
            if m.shape != (n, self.dims[v]):
                raise ValidationError(
                    f"dim mismatch in view {v!r}: got {m.shape}, expected {(n, self.dims[v])}"
                )
            _check_unit(m, f"feature in view {v!r}")
        extra = set(feats) - set(self.views)
        if extra:
            raise ValidationError(f"unknown view(s) {sorted(extra)}")
        idx = (self.write_cursor + np.arange(n)) % self.capacity
        for v in self.views:
            self.slots[v][idx] = feats[v]
        for t, iid in zip(idx.tolist(), ids):
            self.slot_ids[t] = iid
        self.write_cursor = (self.write_cursor + n) % self.capacity
        self.size = min(self.capacity, self.size + n)


def bank_update(
    bank: MemoryBank, batch: Iterable[tuple[str, Mapping[str, np.ndarray]]]
) -> MemoryBank:
    """Enqueue ``(instance_id, {view: vec})`` pairs in FIFO order; returns ``bank``."""
    batch = list(batch)
    if not batch:
        return bank
    for iid, feats in batch:
        missing = [v for v in bank.views if v not in feats]
        if missing:
            raise ValidationError(f"missing view {missing[0]!r} for instance {iid!r}")
    ids = [iid for iid, _ in batch]
    mats = {}
    for v in bank.views:
        rows = [np.asarray(feats[v], dtype=np.float64) for _, feats in batch]
        if any(r.shape != (bank.dims[v],) for r in rows):
            raise ValidationError(f"dim mismatch in view {v!r}")
        mats[v] = np.stack(rows)
    for _, feats in batch:
        extra = set(feats) - set(bank.views)
        if extra:
            raise ValidationError(f"unknown view(s) {sorted(extra)}")
    bank.enqueue(ids, mats)
    return bank


def dot_rows(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise dot products accumulated left to right over dimensions.

    Unlike BLAS, the summation order is fixed, so scores (and therefore
    rankings and tie-breaks) are bit-reproducible across machines.
    """
    if rows.shape[0] == 0:
        return np.empty(0)
    acc = rows[:, 0] * query[0]
    for j in range(1, query.shape[0]):
        acc += rows[:, j] * query[j]
    return acc


def rank_slots(
    query: np.ndarray, bank: MemoryBank, view: str, candidates: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Candidates sorted by descending dot product, lower slot first on ties."""
    cand = np.asarray(candidates, dtype=np.intp)
    if cand.size == 0:
        return cand, np.empty(0)
    scores = dot_rows(bank.view(view)[cand], np.asarray(query, dtype=np.float64))
    order = np.lexsort((cand, -scores))
    return cand[order], scores[order]


def similarities(
    query, bank: MemoryBank, view: str, candidates: Iterable[int]
) -> list[tuple[int, float]]:
    """Dot-product scores of ``candidates`` in ``view``, best first."""
    q = np.asarray(query, dtype=np.float64)
    bank.view(view)
    if q.shape != (bank.dims[view],):
        raise ValidationError(f"query dim {q.shape} does not match view {view!r}")
    cand = np.array(sorted(set(int(c) for c in candidates)), dtype=np.intp)
    if cand.size and (cand[0] < 0 or cand[-1] >= bank.capacity):
        raise ValidationError("candidate slot out of range")
    slots, scores = rank_slots(q, bank, view, cand)
    return [(int(t), float(s)) for t, s in zip(slots, scores)]
