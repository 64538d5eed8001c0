"""Synthetic multi-view datasets with complementary confusions.

Every class gets a random unit prototype per view. A confusable pair
``(a, b)`` in view ``v`` shares one prototype there, so the two classes
are indistinguishable in ``v`` but keep separate prototypes in every
other view. Instances are ``normalize(prototype + noise)`` with isotropic
Gaussian noise of expected norm ``noise_scale``.

``confused_offset`` > 0 keeps a small class-specific residual for the
second class of each pair (``normalize(p_a + offset * p_b)``), so the
pair is close but not identical in the shared view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cpr.store import Dataset, InstanceRecord, ValidationError, normalize


def ring_pairs(num_classes: int, offset: int) -> tuple[tuple[int, int], ...]:
    """Disjoint neighbor pairs (offset, offset+1), (offset+2, offset+3), ... mod num_classes."""
    pairs = []
    for a in range(offset, offset + num_classes - 1, 2):
        pairs.append((a % num_classes, (a + 1) % num_classes))
    return tuple(pairs)


def default_confusable(num_classes: int, views: tuple[str, ...]) -> dict[str, tuple[tuple[int, int], ...]]:
    # Pairs in the second view are shifted by one class, so partners never repeat across views.
    if len(views) < 2:
        return {}
    first = ring_pairs(num_classes, 0)
    seen = {frozenset(p) for p in first}
    # With two classes the shifted pairing coincides with the first one; drop it.
    second = tuple(p for p in ring_pairs(num_classes, 1) if frozenset(p) not in seen)
    return {views[0]: first, views[1]: second}


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    instances_per_class: int = 18
    views: tuple[str, ...] = ("rgb", "flow")
    dims: tuple[int, ...] = (32, 32)
    noise_scale: float = 1.0
    confused_offset: float = 0.0
    # view -> class pairs sharing a prototype in that view; None uses default_confusable
    confusable: dict[str, tuple[tuple[int, int], ...]] | None = field(default=None)

    def __post_init__(self):
        self.views = tuple(self.views)
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) == 1 and len(self.views) > 1:
            self.dims = self.dims * len(self.views)

    def resolved_confusable(self) -> dict[str, tuple[tuple[int, int], ...]]:
        if self.confusable is None:
            return default_confusable(self.num_classes, self.views)
        return {v: tuple(tuple(p) for p in pairs) for v, pairs in self.confusable.items()}

    def validate(self) -> None:
        if self.num_classes < 1 or self.instances_per_class < 1:
            raise ValidationError("num_classes and instances_per_class must be positive")
        if not self.views or len(set(self.views)) != len(self.views) or not all(self.views):
            raise ValidationError("views must be unique nonempty names")
        if len(self.dims) != len(self.views) or any(d < 1 for d in self.dims):
            raise ValidationError("need one positive dim per view")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if self.confused_offset < 0:
            raise ValidationError("confused_offset must be >= 0")
        conf = self.resolved_confusable()
        pair_views: dict[frozenset, list[str]] = {}
        for view, pairs in conf.items():
            if view not in self.views:
                raise ValidationError(f"confusability map names unknown view {view!r}")
            used: set[int] = set()
            for pair in pairs:
                if len(pair) != 2:
                    raise ValidationError(f"confusable entry {pair!r} in view {view!r} is not a pair")
                for c in pair:
                    if not 0 <= c < self.num_classes:
                        raise ValidationError(f"confusable pair in view {view!r} references unknown class {c}")
                a, b = pair
                if a == b:
                    raise ValidationError(f"class {a} paired with itself in view {view!r}")
                if a in used or b in used:
                    c = a if a in used else b
                    raise ValidationError(f"class {c} appears in more than one pair in view {view!r}")
                used.update(pair)
                pair_views.setdefault(frozenset(pair), []).append(view)
        for pair, vs in pair_views.items():
            if len(set(vs)) == len(self.views):
                a, b = sorted(pair)
                raise ValidationError(f"classes {a} and {b} are confusable in every view")


def _prototypes(spec: SyntheticSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    conf = spec.resolved_confusable()
    protos = {}
    for view, dim in zip(spec.views, spec.dims):
        p = normalize(rng.standard_normal((spec.num_classes, dim)))
        for a, b in conf.get(view, ()):
            p[b] = p[a] if spec.confused_offset == 0 else normalize(p[a] + spec.confused_offset * p[b])
        protos[view] = p
    return protos


def _instances(spec, protos, rng, per_class, id_prefix) -> Dataset:
    records = []
    for c in range(spec.num_classes):
        for k in range(per_class):
            feats = {}
            for view, dim in zip(spec.views, spec.dims):
                noise = rng.standard_normal(dim) * (spec.noise_scale / np.sqrt(dim))
                feats[view] = normalize(protos[view][c] + noise)
            records.append(InstanceRecord(f"{id_prefix}{len(records):05d}", c, feats))
    return Dataset(records, spec.views)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Training set of ``num_classes * instances_per_class`` records; deterministic in ``seed``."""
    spec.validate()
    protos = _prototypes(spec, np.random.default_rng([seed, 0]))
    return _instances(spec, protos, np.random.default_rng([seed, 1]), spec.instances_per_class, "i")


def generate_holdout(spec: SyntheticSpec, seed: int, per_class: int) -> Dataset:
    """Held-out instances drawn around the same prototypes as ``generate_synthetic(spec, seed)``."""
    spec.validate()
    if per_class < 1:
        raise ValidationError("holdout per_class must be positive")
    protos = _prototypes(spec, np.random.default_rng([seed, 0]))
    return _instances(spec, protos, np.random.default_rng([seed, 2]), per_class, "t")
