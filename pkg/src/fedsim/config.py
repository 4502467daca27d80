"""JSON run configuration: validation, canonical form, digest, and wiring.

See README.md for the schema. Validation errors carry the dotted field path
(``selector.cr``) so the CLI can report exactly what is wrong.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .core import Federation, StopCriteria
from .data import (
    DataContainer,
    DistributionPlan,
    distribute_dirichlet,
    distribute_label,
    distribute_shard,
    distribute_unique,
    generate_synthetic,
    load_csv,
    load_idx,
    train_test_split,
)
from .errors import ConfigError
from .managers import SimClient, derive_seed, make_manager
from .model import ModelSpec, TrainConfig
from .selectors import ClusterSelector, RandomSelector
from .subscribers import (
    BandwidthAccountant,
    CheckpointSubscriber,
    DivergenceAnalyzer,
    LoggingSubscriber,
    MetricsStore,
)

OUTPUT_DIR_ENV = "FEDSIM_OUTPUT_DIR"

# sections that change the trajectory of a run; a checkpoint is bound to these
DIGEST_SECTIONS = ("dataset", "test_fraction", "distributor", "model", "train", "selector", "seed")

_MISSING = object()


def _take(section: dict, key: str, path: str, kind, default=_MISSING, check=None, why=""):
    field = f"{path}.{key}" if path else key
    if key not in section or section[key] is None:
        if default is _MISSING:
            raise ConfigError(field, "is required")
        return default
    value = section[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, f"expected a number, got {value!r}")
        value = float(value)
    if kind is str and not isinstance(value, str):
        raise ConfigError(field, f"expected a string, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(field, f"expected true/false, got {value!r}")
    if check is not None and not check(value):
        raise ConfigError(field, f"{value!r} {why}")
    return value


def _section(raw: dict, key: str, path: str = "") -> dict:
    field = f"{path}.{key}" if path else key
    value = raw.get(key)
    if not isinstance(value, dict):
        raise ConfigError(field, "must be an object")
    return value


def _kind(section: dict, path: str, choices) -> str:
    kind = _take(section, "kind", path, str)
    if kind not in choices:
        raise ConfigError(f"{path}.kind", f"{kind!r} is not one of {', '.join(choices)}")
    return kind


def _unknown(section: dict, path: str, allowed) -> None:
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown field")


positive = (lambda v: v >= 1, "must be >= 1")


def _path(value: str, field: str, base: Path) -> str:
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(field, f"path {value!r} does not exist")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration. ``data`` holds the canonical JSON-able dict."""

    data: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    def digest(self) -> str:
        core = {k: self.data[k] for k in DIGEST_SECTIONS}
        canon = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @property
    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        return TrainConfig(t["epochs"], t["batch_size"], t["learning_rate"])

    @property
    def stop(self) -> StopCriteria:
        s = self.data["stop"]
        return StopCriteria(s["max_rounds"], s["target_accuracy"], s["target_loss"])

    def output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        out = Path(self.data["output_dir"])
        return out if out.is_absolute() else self.base_dir / out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def output_path(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.output_dir() / p


def validate(raw: dict, base_dir=".", seed_override: Optional[int] = None) -> RunConfig:
    """Check ``raw`` and return a :class:`RunConfig` with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    base = Path(base_dir)
    _unknown(raw, "<root>", ("dataset", "test_fraction", "distributor", "model", "train", "selector",
                             "manager", "stop", "seed", "subscribers", "output_dir"))
    out = {}
    seed = _take(raw, "seed", "", int, 0)
    if seed_override is not None:
        seed = int(seed_override)
    out["seed"] = seed

    ds = _section(raw, "dataset")
    kind = _kind(ds, "dataset", ("synthetic", "idx", "csv"))
    if kind == "synthetic":
        _unknown(ds, "dataset", ("kind", "num_classes", "per_class", "dim", "seed", "separation", "noise"))
        out["dataset"] = {
            "kind": kind,
            "num_classes": _take(ds, "num_classes", "dataset", int, check=lambda v: v >= 2, why="must be >= 2"),
            "per_class": _take(ds, "per_class", "dataset", int, check=positive[0], why=positive[1]),
            "dim": _take(ds, "dim", "dataset", int, check=positive[0], why=positive[1]),
            "seed": _take(ds, "seed", "dataset", int, seed),
            "separation": _take(ds, "separation", "dataset", float, 4.0, lambda v: v > 0, "must be > 0"),
            "noise": _take(ds, "noise", "dataset", float, 1.0, lambda v: v > 0, "must be > 0"),
        }
    elif kind == "idx":
        _unknown(ds, "dataset", ("kind", "images", "labels", "test_images", "test_labels", "num_classes"))
        entry = {"kind": kind}
        for key in ("images", "labels"):
            entry[key] = _path(_take(ds, key, "dataset", str), f"dataset.{key}", base)
        has_test = [k for k in ("test_images", "test_labels") if ds.get(k) is not None]
        if len(has_test) == 1:
            raise ConfigError("dataset.test_images", "test_images and test_labels must be given together")
        for key in ("test_images", "test_labels"):
            entry[key] = _path(ds[key], f"dataset.{key}", base) if has_test else None
        entry["num_classes"] = _take(ds, "num_classes", "dataset", int, 10, lambda v: v >= 2, "must be >= 2")
        out["dataset"] = entry
    else:
        _unknown(ds, "dataset", ("kind", "path", "test_path", "num_classes"))
        out["dataset"] = {
            "kind": kind,
            "path": _path(_take(ds, "path", "dataset", str), "dataset.path", base),
            "test_path": (_path(ds["test_path"], "dataset.test_path", base)
                          if ds.get("test_path") is not None else None),
            "num_classes": _take(ds, "num_classes", "dataset", int, None, lambda v: v >= 2, "must be >= 2"),
        }

    out["test_fraction"] = _take(raw, "test_fraction", "", float, 0.2, lambda v: 0 < v < 1, "must lie in (0, 1)")

    dist = _section(raw, "distributor")
    kind = _kind(dist, "distributor", ("shard", "label", "unique", "dirichlet"))
    p = "distributor"
    if kind == "shard":
        _unknown(dist, p, ("kind", "shard_size", "shards_per_client", "per_label"))
        out[p] = {
            "kind": kind,
            "shard_size": _take(dist, "shard_size", p, int, check=positive[0], why=positive[1]),
            "shards_per_client": _take(dist, "shards_per_client", p, int, check=positive[0], why=positive[1]),
            "per_label": _take(dist, "per_label", p, bool, True),
        }
    elif kind == "label":
        _unknown(dist, p, ("kind", "labels_per_client", "records_per_client", "num_clients"))
        out[p] = {
            "kind": kind,
            "labels_per_client": _take(dist, "labels_per_client", p, int, check=positive[0], why=positive[1]),
            "records_per_client": _take(dist, "records_per_client", p, int, check=positive[0], why=positive[1]),
            "num_clients": _take(dist, "num_clients", p, int, check=positive[0], why=positive[1]),
        }
    elif kind == "unique":
        _unknown(dist, p, ("kind", "records_per_client"))
        out[p] = {
            "kind": kind,
            "records_per_client": _take(dist, "records_per_client", p, int, None, positive[0], positive[1]),
        }
    else:
        _unknown(dist, p, ("kind", "alpha", "num_clients", "records_per_client"))
        out[p] = {
            "kind": kind,
            "alpha": _take(dist, "alpha", p, float, check=lambda v: v > 0, why="must be > 0"),
            "num_clients": _take(dist, "num_clients", p, int, check=positive[0], why=positive[1]),
            "records_per_client": _take(dist, "records_per_client", p, int, check=positive[0], why=positive[1]),
        }

    m = raw.get("model", {"kind": "logistic"})
    if not isinstance(m, dict):
        raise ConfigError("model", "must be an object")
    kind = _kind(m, "model", ("logistic", "mlp"))
    _unknown(m, "model", ("kind", "hidden_dims", "input_dim", "num_classes"))
    hidden = m.get("hidden_dims") or []
    if not isinstance(hidden, list) or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden):
        raise ConfigError("model.hidden_dims", "must be a list of positive integers")
    if kind == "logistic" and hidden:
        raise ConfigError("model.hidden_dims", "logistic regression takes no hidden layers")
    if kind == "mlp" and not hidden:
        raise ConfigError("model.hidden_dims", "an MLP needs at least one hidden layer")
    out["model"] = {
        "kind": kind,
        "hidden_dims": list(hidden),
        "input_dim": _take(m, "input_dim", "model", int, None, positive[0], positive[1]),
        "num_classes": _take(m, "num_classes", "model", int, None, lambda v: v >= 2, "must be >= 2"),
    }

    t = _section(raw, "train")
    _unknown(t, "train", ("epochs", "batch_size", "learning_rate"))
    out["train"] = {
        "epochs": _take(t, "epochs", "train", int, 1, positive[0], positive[1]),
        "batch_size": _take(t, "batch_size", "train", int, None, positive[0], positive[1]),
        "learning_rate": _take(t, "learning_rate", "train", float, check=lambda v: 0 < v <= 1,
                               why="must lie in (0, 1]"),
    }

    s = _section(raw, "selector")
    kind = _kind(s, "selector", ("random", "cluster"))
    if kind == "random":
        _unknown(s, "selector", ("kind", "cr"))
        out["selector"] = {"kind": kind, "cr": _take(s, "cr", "selector", int, check=positive[0], why=positive[1])}
    else:
        _unknown(s, "selector", ("kind", "cr", "k", "pca_dims", "init_epochs", "init_batch_size"))
        out["selector"] = {
            "kind": kind,
            "cr": _take(s, "cr", "selector", int, check=positive[0], why=positive[1]),
            "k": _take(s, "k", "selector", int, check=positive[0], why=positive[1]),
            "pca_dims": _take(s, "pca_dims", "selector", int, None, positive[0], positive[1]),
            "init_epochs": _take(s, "init_epochs", "selector", int, 1, positive[0], positive[1]),
            "init_batch_size": _take(s, "init_batch_size", "selector", int, None, positive[0], positive[1]),
        }

    mg = raw.get("manager", {"kind": "sequential"})
    if not isinstance(mg, dict):
        raise ConfigError("manager", "must be an object")
    kind = _kind(mg, "manager", ("sequential", "parallel"))
    _unknown(mg, "manager", ("kind", "workers"))
    out["manager"] = {"kind": kind,
                      "workers": _take(mg, "workers", "manager", int, 1 if kind == "sequential" else 4,
                                       positive[0], positive[1])}

    st = _section(raw, "stop")
    _unknown(st, "stop", ("max_rounds", "target_accuracy", "target_loss"))
    out["stop"] = {
        "max_rounds": _take(st, "max_rounds", "stop", int, check=positive[0], why=positive[1]),
        "target_accuracy": _take(st, "target_accuracy", "stop", float, None, lambda v: 0 <= v <= 1,
                                 "must lie in [0, 1]"),
        "target_loss": _take(st, "target_loss", "stop", float, None, lambda v: v >= 0, "must be >= 0"),
    }

    subs = raw.get("subscribers", {})
    if not isinstance(subs, dict):
        raise ConfigError("subscribers", "must be an object")
    _unknown(subs, "subscribers", ("logging", "metrics", "checkpoint", "bandwidth", "divergence"))
    norm = {}
    for name, opts in subs.items():
        path = f"subscribers.{name}"
        if opts is False or opts is None:
            continue
        if opts is True:
            opts = {}
        if not isinstance(opts, dict):
            raise ConfigError(path, "must be an object, true or false")
        if name == "logging":
            _unknown(opts, path, ("every",))
            norm[name] = {"every": _take(opts, "every", path, int, 1, positive[0], positive[1])}
        elif name == "metrics":
            _unknown(opts, path, ("path", "wall_time"))
            norm[name] = {"path": _take(opts, "path", path, str, "metrics.jsonl"),
                          "wall_time": _take(opts, "wall_time", path, bool, False)}
        elif name == "checkpoint":
            _unknown(opts, path, ("path", "every"))
            norm[name] = {"path": _take(opts, "path", path, str, "checkpoint.mfck"),
                          "every": _take(opts, "every", path, int, 1, positive[0], positive[1])}
        elif name == "bandwidth":
            _unknown(opts, path, ())
            norm[name] = {}
        else:
            _unknown(opts, path, ("every", "rounds", "d", "out_dir"))
            rounds = opts.get("rounds")
            if rounds is not None and (not isinstance(rounds, list)
                                       or any(isinstance(r, bool) or not isinstance(r, int) or r < 1
                                              for r in rounds)):
                raise ConfigError(f"{path}.rounds", "must be a list of round numbers >= 1")
            norm[name] = {"every": _take(opts, "every", path, int, None, positive[0], positive[1]),
                          "rounds": rounds,
                          "d": _take(opts, "d", path, int, 2, positive[0], positive[1]),
                          "out_dir": _take(opts, "out_dir", path, str, "divergence")}
    out["subscribers"] = norm
    out["output_dir"] = _take(raw, "output_dir", "", str, ".")
    return RunConfig(out, base)


def load_config(path, seed_override: Optional[int] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return validate(raw, path.parent, seed_override)


def load_dataset(cfg: RunConfig):
    """Return ``(train, test)`` containers for the configured dataset."""
    ds = cfg["dataset"]
    explicit_test = None
    if ds["kind"] == "synthetic":
        data = generate_synthetic(ds["num_classes"], ds["per_class"], ds["dim"], ds["seed"],
                                  separation=ds["separation"], noise=ds["noise"])
    elif ds["kind"] == "idx":
        data = load_idx(cfg.resolve(ds["images"]), cfg.resolve(ds["labels"]), ds["num_classes"])
        if ds["test_images"]:
            explicit_test = load_idx(cfg.resolve(ds["test_images"]), cfg.resolve(ds["test_labels"]),
                                     ds["num_classes"])
    else:
        data = load_csv(cfg.resolve(ds["path"]), ds["num_classes"])
        if ds["test_path"]:
            explicit_test = load_csv(cfg.resolve(ds["test_path"]), ds["num_classes"] or data.num_classes)
            if explicit_test.num_classes != data.num_classes or explicit_test.dim != data.dim:
                raise ConfigError("dataset.test_path", "test CSV does not match the training CSV layout")
    if explicit_test is not None:
        return data, explicit_test
    return train_test_split(data, cfg["test_fraction"], derive_seed(cfg.seed, "split"))


def distribute(cfg: RunConfig, data: DataContainer) -> DistributionPlan:
    d = cfg["distributor"]
    seed = derive_seed(cfg.seed, "distribute")
    if d["kind"] == "shard":
        return distribute_shard(data, d["shard_size"], d["shards_per_client"], seed, per_label=d["per_label"])
    if d["kind"] == "label":
        if d["labels_per_client"] > data.num_classes:
            raise ConfigError("distributor.labels_per_client",
                              f"{d['labels_per_client']} exceeds the {data.num_classes} dataset labels")
        return distribute_label(data, d["labels_per_client"], d["records_per_client"], d["num_clients"], seed)
    if d["kind"] == "unique":
        return distribute_unique(data, d["records_per_client"], seed)
    return distribute_dirichlet(data, d["alpha"], d["num_clients"], d["records_per_client"], seed)


@dataclass
class Experiment:
    config: RunConfig
    spec: ModelSpec
    train_data: DataContainer
    test_data: DataContainer
    plan: DistributionPlan
    clients: list

    def federation(self, subscribers=(), manager=None) -> Federation:
        cfg = self.config
        if manager is None:
            manager = make_manager(cfg["manager"]["kind"], self.clients, cfg["manager"]["workers"])
        sel = cfg["selector"]
        if sel["kind"] == "random":
            selector = RandomSelector(sel["cr"])
        else:
            init_cfg = TrainConfig(sel["init_epochs"], sel["init_batch_size"], cfg["train"]["learning_rate"])
            selector = ClusterSelector(sel["cr"], sel["k"], init_cfg, sel["pca_dims"])
        return Federation(self.spec, manager, self.test_data, selector, cfg.stop, subscribers,
                          cfg.seed, config_digest=cfg.digest())

    def subscribers(self) -> list:
        cfg = self.config
        subs = []
        opts = cfg["subscribers"]
        if "logging" in opts:
            subs.append(LoggingSubscriber(cfg.stop.max_rounds, opts["logging"]["every"]))
        if "metrics" in opts:
            subs.append(MetricsStore(cfg.output_path(opts["metrics"]["path"]), opts["metrics"]["wall_time"]))
        if "bandwidth" in opts:
            subs.append(BandwidthAccountant())
        if "divergence" in opts:
            o = opts["divergence"]
            subs.append(DivergenceAnalyzer(o["d"], o["every"], o["rounds"], cfg.output_path(o["out_dir"])))
        if "checkpoint" in opts:
            subs.append(CheckpointSubscriber(cfg.output_path(opts["checkpoint"]["path"]),
                                             opts["checkpoint"]["every"]))
        return subs


def build_experiment(cfg: RunConfig, with_clients: bool = True) -> Experiment:
    """Load data, distribute it and create clients; checks settings that depend on the data."""
    train_data, test_data = load_dataset(cfg)
    plan = distribute(cfg, train_data)
    m = cfg["model"]
    if m["input_dim"] is not None and m["input_dim"] != train_data.dim:
        raise ConfigError("model.input_dim", f"{m['input_dim']} does not match the data dimension {train_data.dim}")
    if m["num_classes"] is not None and m["num_classes"] < train_data.num_classes:
        raise ConfigError("model.num_classes", f"dataset has {train_data.num_classes} labels")
    num_classes = m["num_classes"] or train_data.num_classes
    spec = ModelSpec(m["kind"], train_data.dim, num_classes, tuple(m["hidden_dims"]))
    clients = []
    if with_clients:
        tc = cfg.train_config
        clients = [SimClient(cid, part, tc) for cid, part in plan.containers(train_data).items() if len(part)]
        if not clients:
            raise ConfigError("distributor", "produced no non-empty clients")
        sel = cfg["selector"]
        if sel["cr"] > len(clients):
            raise ConfigError("selector.cr", f"{sel['cr']} exceeds the {len(clients)} available clients")
        if sel["kind"] == "cluster" and sel["k"] > len(clients):
            raise ConfigError("selector.k", f"{sel['k']} exceeds the {len(clients)} available clients")
    return Experiment(cfg, spec, train_data, test_data, plan, clients)
