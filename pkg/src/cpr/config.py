"""Run configuration: plain INI files with strict keys and list-valued sweeps.

Example::

    [run]
    seed = 0
    out = runs/demo

    [synthetic]
    num_classes = 10
    instances_per_class = 18
    confusable.rgb = 0:1, 2:3

    [cascade]
    num_stages = 3
    selection_ratio = 0.5

    [schedule]
    cycle_epochs = 2, 2
    cycle_topk = 5

    [sweep]
    cascade.num_stages = 1; 3; 7

Each ``[sweep]`` key names ``section.key`` and lists alternatives separated
by ``;``. The cartesian product expands into one run per combination.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

from cpr.metrics import DEFAULT_KS
from cpr.miner import CascadeConfig
from cpr.store import ValidationError
from cpr.synthetic import SyntheticSpec
from cpr.trainer import CycleSpec, TrainSchedule

KNOWN_KEYS = {
    "run": {"seed", "out"},
    "data": {"train", "test"},
    "synthetic": {
        "num_classes", "instances_per_class", "holdout_per_class", "views", "dims",
        "noise_scale", "confused_offset",
    },
    "cascade": {"num_stages", "selection_ratio", "final_topk", "view_schedule"},
    "schedule": {
        "cycle_epochs", "cycle_topk", "cycle_views", "batch_size", "ema_momentum",
        "learning_rate", "temperature", "bank_capacity", "reset_bank", "aug_noise",
        "co_train", "encoder_init", "shuffle",
    },
    "eval": {"ks", "view", "query_view"},
}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    train_path: str | None = None
    test_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    holdout_per_class: int = 0
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    ks: tuple[int, ...] = DEFAULT_KS
    eval_view: str | None = None
    query_view: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        syn = d["synthetic"]
        syn["confusable"] = {v: [list(p) for p in ps] for v, ps in self.synthetic.resolved_confusable().items()}
        return d


def _list(value: str, sep: str = ",") -> list[str]:
    return [x.strip() for x in value.split(sep) if x.strip()]


def _int(section: str, key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"[{section}] {key}: expected an integer, got {value!r}") from None


def _float(section: str, key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"[{section}] {key}: expected a number, got {value!r}") from None


def _bool(section: str, key: str, value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"[{section}] {key}: expected a boolean, got {value!r}")


def _pairs(view: str, value: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for item in _list(value):
        parts = item.split(":")
        if len(parts) != 2:
            raise ValidationError(f"[synthetic] confusable.{view}: bad pair {item!r}, expected a:b")
        pairs.append((_int("synthetic", f"confusable.{view}", parts[0]), _int("synthetic", f"confusable.{view}", parts[1])))
    return tuple(pairs)


def read_parser(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return cp


def _check_keys(cp: configparser.ConfigParser) -> None:
    for section in cp.sections():
        if section == "sweep":
            for key in cp[section]:
                sec, _, k = key.partition(".")
                if sec not in KNOWN_KEYS or k not in KNOWN_KEYS[sec]:
                    raise ValidationError(f"[sweep] unknown target {key!r}")
            continue
        if section not in KNOWN_KEYS:
            raise ValidationError(f"unknown section [{section}]")
        for key in cp[section]:
            if section == "synthetic" and key.startswith("confusable."):
                continue
            if key not in KNOWN_KEYS[section]:
                raise ValidationError(f"unknown key {key!r} in section [{section}]")


def build(cp: configparser.ConfigParser) -> RunConfig:
    """Validate a parsed config (without sweep expansion) into a RunConfig."""
    _check_keys(cp)
    get = lambda s, k: cp.get(s, k, fallback=None)  # noqa: E731
    cfg = RunConfig()
    if (v := get("run", "seed")) is not None:
        cfg.seed = _int("run", "seed", v)
    if (v := get("run", "out")) is not None:
        cfg.out = v
    cfg.train_path = get("data", "train")
    cfg.test_path = get("data", "test")

    syn: dict = {}
    if cp.has_section("synthetic"):
        s = cp["synthetic"]
        for k in ("num_classes", "instances_per_class"):
            if k in s:
                syn[k] = _int("synthetic", k, s[k])
        for k in ("noise_scale", "confused_offset"):
            if k in s:
                syn[k] = _float("synthetic", k, s[k])
        if "views" in s:
            syn["views"] = tuple(_list(s["views"]))
        if "dims" in s:
            syn["dims"] = tuple(_int("synthetic", "dims", d) for d in _list(s["dims"]))
        if "holdout_per_class" in s:
            cfg.holdout_per_class = _int("synthetic", "holdout_per_class", s["holdout_per_class"])
        conf = {k.partition(".")[2]: _pairs(k.partition(".")[2], s[k]) for k in s if k.startswith("confusable.")}
        if conf:
            syn["confusable"] = conf
    cfg.synthetic = SyntheticSpec(**syn)
    if cfg.holdout_per_class < 0:
        raise ValidationError("[synthetic] holdout_per_class must be >= 0")

    cas: dict = {}
    if cp.has_section("cascade"):
        s = cp["cascade"]
        if "num_stages" in s:
            cas["num_stages"] = _int("cascade", "num_stages", s["num_stages"])
        if "selection_ratio" in s:
            cas["selection_ratio"] = _float("cascade", "selection_ratio", s["selection_ratio"])
        if "final_topk" in s:
            cas["final_topk"] = _int("cascade", "final_topk", s["final_topk"])
        if "view_schedule" in s:
            cas["view_schedule"] = tuple(_list(s["view_schedule"]))
    cfg.cascade = CascadeConfig(**cas)

    sch: dict = {"seed": cfg.seed}
    epochs, topks, views = [1], [cfg.cascade.final_topk], [None]
    if cp.has_section("schedule"):
        s = cp["schedule"]
        if "cycle_epochs" in s:
            epochs = [_int("schedule", "cycle_epochs", x) for x in _list(s["cycle_epochs"])]
        if "cycle_topk" in s:
            topks = [_int("schedule", "cycle_topk", x) for x in _list(s["cycle_topk"])]
        if "cycle_views" in s:
            views = _list(s["cycle_views"])
        for k in ("batch_size", "bank_capacity"):
            if k in s:
                sch[k] = _int("schedule", k, s[k])
        for k in ("ema_momentum", "learning_rate", "temperature", "aug_noise"):
            if k in s:
                sch[k] = _float("schedule", k, s[k])
        for k in ("reset_bank", "co_train", "shuffle"):
            if k in s:
                sch[k] = _bool("schedule", k, s[k])
        if "encoder_init" in s:
            sch["encoder_init"] = s["encoder_init"].strip()
    n = max(len(epochs), len(topks), len(views))
    for name, lst in (("cycle_epochs", epochs), ("cycle_topk", topks), ("cycle_views", views)):
        if len(lst) not in (1, n):
            raise ValidationError(f"[schedule] {name} has {len(lst)} entries, expected 1 or {n}")
    stretch = lambda lst: lst * n if len(lst) == 1 else lst  # noqa: E731
    sch["cycles"] = tuple(
        CycleSpec(e, k, v) for e, k, v in zip(stretch(epochs), stretch(topks), stretch(views))
    )
    cfg.schedule = TrainSchedule(**sch)

    if cp.has_section("eval"):
        s = cp["eval"]
        if "ks" in s:
            cfg.ks = tuple(_int("eval", "ks", k) for k in _list(s["ks"]))
            if not cfg.ks or any(k < 1 for k in cfg.ks):
                raise ValidationError("[eval] ks must be positive integers")
        cfg.eval_view = s.get("view")
        cfg.query_view = s.get("query_view")
    if cfg.train_path is None:
        cfg.synthetic.validate()
    return cfg


def expand(cp: configparser.ConfigParser) -> list[tuple[str, RunConfig]]:
    """One (run name, RunConfig) per sweep combination; a single run if no sweep."""
    _check_keys(cp)
    sweep = {k: _list(v, ";") for k, v in cp["sweep"].items()} if cp.has_section("sweep") else {}
    base = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    base.optionxform = str
    base.read_dict({s: dict(cp[s]) for s in cp.sections() if s != "sweep"})
    if not sweep:
        return [("run", build(base))]
    keys = sorted(sweep)
    runs = []
    for i, combo in enumerate(itertools.product(*(sweep[k] for k in keys))):
        cp_i = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        cp_i.optionxform = str
        cp_i.read_dict({s: dict(base[s]) for s in base.sections()})
        for key, val in zip(keys, combo):
            sec, _, k = key.partition(".")
            if not cp_i.has_section(sec):
                cp_i.add_section(sec)
            cp_i[sec][k] = val
        label = "_".join(f"{k.partition('.')[2]}={v.replace(',', '-').replace(' ', '')}" for k, v in zip(keys, combo))
        runs.append((f"run{i:03d}_{label}", build(cp_i)))
    return runs


def apply_overrides(cp: configparser.ConfigParser, seed: int | None = None, out: str | None = None) -> None:
    if not cp.has_section("run"):
        cp.add_section("run")
    if seed is not None:
        cp["run"]["seed"] = str(seed)
    if out is not None:
        cp["run"]["out"] = out
