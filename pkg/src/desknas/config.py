"""Run configuration: a single JSON document per run, strictly validated.

Unknown keys are rejected at every nesting level, and validation happens
before any tensor is allocated.  The schema is versioned; the resolved
(fully defaulted) copy is what gets written into run artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .datasets import GENERATORS
from .errors import ConfigError
from .regularizers import VALID_KINDS, RegularizerSpec
from .search import SearchSettings
from .space import SPACE_IDS, StackSpec

SCHEMA_VERSION = 1

_MISSING = object()


def _take(section: dict, spec: dict, where: str) -> dict:
    unknown = set(section) - set(spec)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, (types, default) in spec.items():
        value = section.get(key, _MISSING)
        if value is _MISSING:
            if default is _MISSING:
                raise ConfigError(f"{where}: missing required key {key!r}")
            value = default
        if value is not None and types is not None and not isinstance(value, types):
            raise ConfigError(
                f"{where}.{key}: expected {types}, got {type(value).__name__}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    space: str
    stack: StackSpec
    dataset: dict
    search: SearchSettings
    regularizer: RegularizerSpec
    recipe: str | None = None
    out: str | None = None
    trials: int = 1
    trace_edge: int = 0
    resolved: dict = field(default_factory=dict, repr=False)

    def run_id(self) -> str:
        doc = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _validate_schedule(sched: dict, where: str) -> dict:
    kind = sched.get("kind", "linear")
    if kind == "linear":
        out = _take(sched, {"kind": (str, "linear"),
                            "divisor": ((int, float), 5),
                            "zero_until": (int, 0)}, where)
        if out["divisor"] <= 0:
            raise ConfigError(f"{where}.divisor must be positive")
    elif kind == "constant":
        out = _take(sched, {"kind": (str, "constant"),
                            "value": ((int, float), _MISSING),
                            "zero_until": (int, 0)}, where)
    else:
        raise ConfigError(f"{where}.kind must be 'linear' or 'constant', got {kind!r}")
    return out


def config_from_dict(doc: dict) -> RunConfig:
    top = _take(doc, {
        "schema_version": (int, _MISSING),
        "space": (str, _MISSING),
        "stack": (dict, {}),
        "dataset": (dict, _MISSING),
        "search": (dict, {}),
        "regularizer": (dict, {}),
        "recipe": (str, None),
        "out": (str, None),
        "trials": (int, 1),
        "trace_edge": (int, 0),
    }, "config")
    if top["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"config.schema_version {top['schema_version']} != {SCHEMA_VERSION}")
    if top["space"] not in SPACE_IDS:
        raise ConfigError(f"config.space must be one of {SPACE_IDS}")
    if top["trials"] < 1:
        raise ConfigError("config.trials must be >= 1")

    stack_d = _take(top["stack"], {
        "cells": (int, 1),
        "channels": (int, 8),
        "reductions": (list, []),
        "in_channels": (int, 1),
        "image_hw": (list, None),
        "classes": (int, None),
    }, "config.stack")

    ds = _take(top["dataset"], {
        "name": (str, _MISSING),
        "n": (int, 256),
        "seed": (int, 0),
        "size": (int, None),
        "noise": ((int, float), None),
    }, "config.dataset")
    if ds["name"] not in GENERATORS:
        raise ConfigError(
            f"config.dataset.name must be one of {sorted(GENERATORS)}")
    defaults = {"blobs": (8, 2), "bars": (16, 4)}
    size_default, classes_default = defaults[ds["name"]]
    if ds["size"] is None:
        ds["size"] = size_default
    dataset_spec = {k: v for k, v in ds.items() if v is not None}

    if stack_d["image_hw"] is None:
        stack_d["image_hw"] = [ds["size"], ds["size"]]
    if stack_d["classes"] is None:
        stack_d["classes"] = classes_default
    try:
        stack = StackSpec(cells=stack_d["cells"], channels=stack_d["channels"],
                          reductions=tuple(stack_d["reductions"]),
                          in_channels=stack_d["in_channels"],
                          image_hw=tuple(stack_d["image_hw"]),
                          classes=stack_d["classes"])
    except Exception as exc:
        raise ConfigError(f"config.stack: {exc}") from exc

    reg_d = _take(top["regularizer"], {
        "kind": (str, "none"),
        "lambda": (dict, {"kind": "linear", "divisor": 5}),
        "nu": ((int, float), 1.0),
        "mu": ((int, float), 0.0),
        "flops_weight": ((int, float), 0.0),
    }, "config.regularizer")
    if reg_d["kind"] not in VALID_KINDS:
        raise ConfigError(f"config.regularizer.kind must be one of {VALID_KINDS}")
    lam = _validate_schedule(reg_d["lambda"], "config.regularizer.lambda")
    try:
        regularizer = RegularizerSpec(kind=reg_d["kind"], lam=lam,
                                      nu=float(reg_d["nu"]), mu=float(reg_d["mu"]),
                                      flops_weight=float(reg_d["flops_weight"]))
    except Exception as exc:
        raise ConfigError(f"config.regularizer: {exc}") from exc

    search_d = _take(top["search"], {
        "epochs": (int, 50),
        "warm_up_epochs": (int, 0),
        "batch_size": (int, 64),
        "alpha_lr": ((int, float), 3e-4),
        "alpha_betas": (list, [0.5, 0.999]),
        "alpha_weight_decay": ((int, float), None),
        "w_lr": ((int, float), 2.5e-2),
        "w_momentum": ((int, float), 0.9),
        "w_weight_decay": ((int, float), 3e-4),
        "grad_clip": ((int, float), 5.0),
        "alpha_init": (dict, {"kind": "small-random"}),
        "partial_k": (int, None),
        "use_edge_weights": (bool, None),
        "split_fraction": ((int, float), 0.5),
        "seed": (int, 0),
    }, "config.search")
    init = search_d["alpha_init"]
    kind = init.get("kind", "small-random")
    if kind == "small-random":
        _take(init, {"kind": (str, "small-random")}, "config.search.alpha_init")
    elif kind == "constant-offset":
        _take(init, {"kind": (str, _MISSING), "op": (str, _MISSING),
                     "delta": ((int, float), _MISSING)}, "config.search.alpha_init")
    elif kind == "constant-negative":
        _take(init, {"kind": (str, _MISSING),
                     "value": ((int, float), _MISSING)}, "config.search.alpha_init")
    else:
        raise ConfigError(f"config.search.alpha_init.kind unknown: {kind!r}")

    # weight decay on the arch weights is off whenever the smooth-activation
    # loss is active, 1e-3 otherwise
    wd = search_d["alpha_weight_decay"]
    if wd is None:
        wd = 0.0 if regularizer.kind == "sa" else 1e-3
    elif regularizer.kind == "sa" and wd > 0:
        raise ConfigError(
            "config.search.alpha_weight_decay must be 0 when the sa "
            "regularizer is active")
    try:
        search = SearchSettings(
            epochs=search_d["epochs"],
            warm_up_epochs=search_d["warm_up_epochs"],
            batch_size=search_d["batch_size"],
            alpha_lr=float(search_d["alpha_lr"]),
            alpha_betas=tuple(float(b) for b in search_d["alpha_betas"]),
            alpha_weight_decay=float(wd),
            w_lr=float(search_d["w_lr"]),
            w_momentum=float(search_d["w_momentum"]),
            w_weight_decay=float(search_d["w_weight_decay"]),
            grad_clip=float(search_d["grad_clip"]),
            alpha_init=dict(init),
            partial_k=search_d["partial_k"],
            use_edge_weights=search_d["use_edge_weights"],
            split_fraction=float(search_d["split_fraction"]),
            seed=search_d["seed"])
    except Exception as exc:
        raise ConfigError(f"config.search: {exc}") from exc

    resolved = {
        "schema_version": SCHEMA_VERSION,
        "space": top["space"],
        "stack": {"cells": stack.cells, "channels": stack.channels,
                  "reductions": list(stack.reductions),
                  "in_channels": stack.in_channels,
                  "image_hw": list(stack.image_hw), "classes": stack.classes},
        "dataset": dataset_spec,
        "search": {
            "epochs": search.epochs, "warm_up_epochs": search.warm_up_epochs,
            "batch_size": search.batch_size, "alpha_lr": search.alpha_lr,
            "alpha_betas": list(search.alpha_betas),
            "alpha_weight_decay": search.alpha_weight_decay,
            "w_lr": search.w_lr, "w_momentum": search.w_momentum,
            "w_weight_decay": search.w_weight_decay,
            "grad_clip": search.grad_clip, "alpha_init": dict(init),
            "partial_k": search.partial_k,
            "use_edge_weights": search.use_edge_weights,
            "split_fraction": search.split_fraction, "seed": search.seed},
        "regularizer": {"kind": regularizer.kind, "lambda": lam,
                        "nu": regularizer.nu, "mu": regularizer.mu,
                        "flops_weight": regularizer.flops_weight},
        "recipe": top["recipe"],
        "trials": top["trials"],
        "trace_edge": top["trace_edge"],
    }
    return RunConfig(space=top["space"], stack=stack, dataset=dataset_spec,
                     search=search, regularizer=regularizer,
                     recipe=top["recipe"], out=top["out"], trials=top["trials"],
                     trace_edge=top["trace_edge"], resolved=resolved)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Copy of a config with a different search seed (trial fan-out)."""
    doc = json.loads(json.dumps(config.resolved))
    doc["search"]["seed"] = seed
    doc["out"] = config.out
    out = config_from_dict(doc)
    return out
