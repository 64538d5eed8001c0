"""Training loop: cycles of epochs of batches, cascade mining, MIL-NCE, SGD.

Each view has a linear encoder with output normalization. Per batch the
query is encoded by the live encoder of the training view, and its
positive variant by the EMA copy (training view) or by a snapshot frozen
at the start of the cycle (other views). The mined slots plus the variant
form the positive set for MIL-NCE, the rest of the bank the negatives.
Only the live encoder of the training view takes a gradient step; the
bank then receives the variant features in all views.

The trainer never reads class labels.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cpr.losses import DEFAULT_TEMPERATURE, mil_nce_value_and_grad
from cpr.miner import CascadeConfig, MiningResult, cascade_mine
from cpr.store import Dataset, MemoryBank, ValidationError, normalize

CHECKPOINT_VERSION = "cpr-checkpoint 1"


@dataclass
class ToyEncoder:
    weight: np.ndarray  # (in_dim, emb_dim)
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.array(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[1],):
                raise ValidationError("bias shape does not match weight")

    @classmethod
    def identity(cls, dim: int, bias: bool = False) -> ToyEncoder:
        return cls(np.eye(dim), np.zeros(dim) if bias else None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def embed(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64) @ self.weight
        return z if self.bias is None else z + self.bias

    def encode(self, x: np.ndarray) -> np.ndarray:
        return normalize(self.embed(x))

    def copy(self) -> ToyEncoder:
        return ToyEncoder(self.weight.copy(), None if self.bias is None else self.bias.copy())


def ema_update(live: ToyEncoder, ema: ToyEncoder, momentum: float) -> ToyEncoder:
    """Return ``momentum * ema + (1 - momentum) * live`` parameter-wise."""
    if live.shape != ema.shape or (live.bias is None) != (ema.bias is None):
        raise ValidationError("shape mismatch between live and ema encoders")
    if not 0.0 <= momentum <= 1.0:
        raise ValidationError("momentum must be in [0, 1]")
    w = momentum * ema.weight + (1.0 - momentum) * live.weight
    b = None if ema.bias is None else momentum * ema.bias + (1.0 - momentum) * live.bias
    return ToyEncoder(w, b)


@dataclass(frozen=True)
class CycleSpec:
    epochs: int
    final_topk: int
    train_view: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("cycle epochs must be >= 1")
        if self.final_topk < 1:
            raise ValidationError("cycle final_topk must be >= 1")


@dataclass
class TrainSchedule:
    cycles: tuple[CycleSpec, ...] = (CycleSpec(1, 5),)
    batch_size: int = 16
    ema_momentum: float = 0.999
    learning_rate: float = 0.1
    temperature: float = DEFAULT_TEMPERATURE
    bank_capacity: int = 2048
    reset_bank: bool = False
    # std of the Gaussian perturbation that stands in for augmentation
    aug_noise: float = 0.05
    # alternate the training view per cycle; otherwise always train the first view
    co_train: bool = True
    # "identity" stands in for a pretrained start; "random" trains from scratch
    encoder_init: str = "identity"
    # visit instances in a fresh random order each epoch; otherwise dataset order
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        self.cycles = tuple(self.cycles)
        if not self.cycles:
            raise ValidationError("schedule needs at least one cycle")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ValidationError("ema_momentum must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.bank_capacity < 1:
            raise ValidationError("bank_capacity must be positive")
        if self.aug_noise < 0:
            raise ValidationError("aug_noise must be >= 0")
        if self.encoder_init not in ("identity", "random"):
            raise ValidationError(f"unknown encoder_init {self.encoder_init!r}")

    def view_for_cycle(self, c: int, views: Sequence[str]) -> str:
        explicit = self.cycles[c].train_view
        if explicit is not None:
            if explicit not in views:
                raise ValidationError(f"cycle {c} trains unknown view {explicit!r}")
            return explicit
        return views[c % len(views)] if self.co_train else views[0]

    @property
    def total_epochs(self) -> int:
        return sum(c.epochs for c in self.cycles)


@dataclass
class EpochLog:
    cycle: int
    epoch: int  # global epoch index, 0-based
    train_view: str
    loss_mean: float
    traces: list[tuple[str, MiningResult]] = field(repr=False, default_factory=list)


@dataclass
class TrainResult:
    live: dict[str, ToyEncoder]
    ema: dict[str, ToyEncoder]
    bank: MemoryBank
    epoch_losses: list[float]
    position: tuple[int, int]  # (cycles completed, epochs completed)


def init_encoders(dims: Mapping[str, int], kind: str = "identity", seed: int = 0) -> dict[str, ToyEncoder]:
    if kind == "identity":
        return {v: ToyEncoder.identity(d) for v, d in dims.items()}
    if kind == "random":
        rng = np.random.default_rng([seed, 7])
        return {v: ToyEncoder(rng.standard_normal((d, d)) / np.sqrt(d)) for v, d in dims.items()}
    raise ValidationError(f"unknown encoder init {kind!r}")


def fill_bank(
    bank: MemoryBank, ids: Sequence[str], inputs: Mapping[str, np.ndarray],
    encoders: Mapping[str, ToyEncoder], batch_size: int,
) -> MemoryBank:
    """Encode one pass over the data in order and enqueue it."""
    step = min(batch_size, bank.capacity)
    for lo in range(0, len(ids), step):
        hi = lo + step
        bank.enqueue(ids[lo:hi], {v: encoders[v].encode(inputs[v][lo:hi]) for v in bank.views})
    return bank


def train(
    dataset: Dataset,
    cfg: CascadeConfig,
    sched: TrainSchedule,
    *,
    encoders: Mapping[str, ToyEncoder] | None = None,
    ema_encoders: Mapping[str, ToyEncoder] | None = None,
    bank: MemoryBank | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
    miner: Callable[..., MiningResult] | None = None,
) -> TrainResult:
    """Run every cycle of ``sched``.

    ``cfg.final_topk`` is overridden per cycle by the schedule. If
    ``cfg.view_schedule`` is None the default alternation relative to each
    cycle's training view is used. ``on_epoch`` receives the mining traces
    of every epoch. ``miner`` replaces the cascade; it is called as
    ``miner(query_id, variant_feats, bank, cfg, exclude)``.
    """
    views = dataset.views
    if len(views) < 2:
        raise ValidationError("training needs at least two views")
    ids = dataset.ids
    inputs = {v: dataset.matrix(v) for v in views}
    if encoders is None:
        encoders = init_encoders(dataset.dims, sched.encoder_init, sched.seed)
    live = {v: e.copy() for v, e in encoders.items()}
    if set(live) != set(views):
        raise ValidationError("encoders do not match dataset views")
    for v in views:
        if live[v].shape[0] != dataset.dims[v]:
            raise ValidationError(f"encoder input dim mismatch in view {v!r}")
    ema = {v: e.copy() for v, e in (ema_encoders or live).items()}
    emb_dims = {v: live[v].shape[1] for v in views}

    if bank is None:
        bank = fill_bank(MemoryBank(sched.bank_capacity, emb_dims), ids, inputs, ema, sched.batch_size)
    elif bank.size == 0:
        raise ValidationError("bank not initialized")
    elif set(bank.views) != set(views) or bank.dims != emb_dims:
        raise ValidationError("view mismatch between bank and encoders")

    rng = np.random.default_rng(sched.seed)
    n = len(ids)
    losses: list[float] = []
    global_epoch = 0

    def augment(x: np.ndarray) -> np.ndarray:
        if sched.aug_noise == 0:
            return x
        return x + rng.standard_normal(x.shape) * sched.aug_noise

    for c, cycle in enumerate(sched.cycles):
        vq = sched.view_for_cycle(c, views)
        ccfg = replace(cfg, final_topk=cycle.final_topk).resolve(vq, views)
        frozen = {v: live[v].copy() for v in views}
        if sched.reset_bank and c > 0:
            key_enc = {v: (ema[v] if v == vq else frozen[v]) for v in views}
            bank = fill_bank(MemoryBank(bank.capacity, emb_dims), ids, inputs, key_enc, sched.batch_size)
        for _ in range(cycle.epochs):
            traces: list[tuple[str, MiningResult]] = []
            epoch_loss = []
            order = rng.permutation(n) if sched.shuffle else np.arange(n)
            for lo in range(0, n, sched.batch_size):
                idx = order[lo : lo + sched.batch_size]
                batch_ids = [ids[i] for i in idx]
                xq = augment(inputs[vq][idx])
                zq = live[vq].embed(xq)
                variant = {
                    v: (ema[v] if v == vq else frozen[v]).encode(augment(inputs[v][idx]))
                    for v in views
                }
                slot_ids = np.array(bank.slot_ids[: bank.size], dtype=object)
                key_feats = bank.view(vq)
                grad_w = np.zeros_like(live[vq].weight)
                grad_b = None if live[vq].bias is None else np.zeros_like(live[vq].bias)
                for i, qid in enumerate(batch_ids):
                    exclude = np.flatnonzero(slot_ids == qid)
                    feats = {v: variant[v][i] for v in views}
                    if miner is None:
                        res = cascade_mine(feats, bank, ccfg, exclude.tolist())
                    else:
                        res = miner(qid, feats, bank, ccfg, exclude.tolist())
                    positives = np.vstack([variant[vq][i][None, :], key_feats[list(res.positives)]])
                    negatives = key_feats[res.negatives]
                    if negatives.shape[0] == 0:
                        raise ValidationError("no negatives left in the bank; increase bank_capacity")
                    loss, g = mil_nce_value_and_grad(zq[i], positives, negatives, sched.temperature)
                    epoch_loss.append(loss)
                    grad_w += np.outer(xq[i], g)
                    if grad_b is not None:
                        grad_b += g
                    traces.append((qid, res))
                scale = sched.learning_rate / len(batch_ids)
                if scale:
                    live[vq].weight -= scale * grad_w
                    if grad_b is not None:
                        live[vq].bias -= scale * grad_b
                ema[vq] = ema_update(live[vq], ema[vq], sched.ema_momentum)
                bank.enqueue(batch_ids, variant)
            loss_mean = float(np.mean(epoch_loss))
            losses.append(loss_mean)
            if on_epoch is not None:
                on_epoch(EpochLog(c, global_epoch, vq, loss_mean, traces))
            global_epoch += 1
    return TrainResult(live, ema, bank, losses, (len(sched.cycles), global_epoch))


# -- checkpoints ----------------------------------------------------------------
#
# Text file: a version header line, then one JSON document. Floats are
# written with repr so a reload is bit-exact.


def _enc_to_json(e: ToyEncoder) -> dict:
    return {"weight": e.weight.tolist(), "bias": None if e.bias is None else e.bias.tolist()}


def _enc_from_json(d: Mapping) -> ToyEncoder:
    return ToyEncoder(np.array(d["weight"], dtype=np.float64), None if d["bias"] is None else np.array(d["bias"]))


def save_checkpoint(path: str | Path, result: TrainResult, config: Mapping | None = None) -> None:
    bank = result.bank
    doc = {
        "live": {v: _enc_to_json(e) for v, e in result.live.items()},
        "ema": {v: _enc_to_json(e) for v, e in result.ema.items()},
        "bank": {
            "capacity": bank.capacity,
            "dims": bank.dims,
            "write_cursor": bank.write_cursor,
            "size": bank.size,
            "slot_ids": bank.slot_ids[: bank.size],
            "slots": {v: bank.slots[v][: bank.size].tolist() for v in bank.views},
        },
        "epoch_losses": result.epoch_losses,
        "position": list(result.position),
        "config": config,
    }
    Path(path).write_text(CHECKPOINT_VERSION + "\n" + json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[TrainResult, dict | None]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    header, _, body = path.read_text().partition("\n")
    if header != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint header {header!r}")
    doc = json.loads(body)
    b = doc["bank"]
    bank = MemoryBank(b["capacity"], b["dims"])
    for v in bank.views:
        if b["size"]:
            bank.slots[v][: b["size"]] = np.array(b["slots"][v], dtype=np.float64)
    bank.slot_ids[: b["size"]] = b["slot_ids"]
    bank.size = b["size"]
    bank.write_cursor = b["write_cursor"]
    result = TrainResult(
        live={v: _enc_from_json(e) for v, e in doc["live"].items()},
        ema={v: _enc_from_json(e) for v, e in doc["ema"].items()},
        bank=bank,
        epoch_losses=doc["epoch_losses"],
        position=tuple(doc["position"]),
    )
    return result, doc.get("config")
