"""Experiment recipes: canned multi-run protocols with aggregated reports.

Each recipe fans out seeded run configs (trial seeds are base_seed + index),
executes them with a bounded process pool, and writes one comparative report
plus tidy CSVs under ``<out_root>/<recipe>/``.  Individual runs keep their
full artifacts and are referenced by run id (lineage).
"""

from __future__ import annotations

import copy
import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .artifacts import execute_run, write_json
from .config import config_from_dict
from .datasets import make_dataset
from .errors import ConfigError, ContractError, SearchDiverged
from .metrics import dispersion_report, landscape_scan
from .oracle import TabularBenchmark, TrainCfg, build_benchmark, rank_of
from .pc_theory import expectation_check
from .search import SearchState, restore_checkpoint
from .space import Genotype

RECIPE_IDS = ("skip-dominance", "unfair-init", "neg-init", "dispersion",
              "landscape", "pc-expectation", "hyperparam-grid", "oracle-score")

# Desk-scale protocol settings.  Step counts here are ~100x smaller than the
# reference GPU setting, so the architecture learning rate is scaled up to
# keep the total architecture-weight movement comparable.
DESK = {
    "reduced": {
        "space": "reduced",
        "dataset": {"name": "blobs", "n": 256, "seed": 11, "noise": 1.0},
        "search": {"epochs": 50, "batch_size": 32, "alpha_lr": 0.05,
                   "w_lr": 0.005},
    },
    "nb201": {
        "space": "nb201",
        "dataset": {"name": "bars", "n": 256, "seed": 13, "noise": 0.5},
        "search": {"epochs": 50, "batch_size": 64, "alpha_lr": 0.05,
                   "w_lr": 0.01},
    },
    "micro": {
        "space": "micro",
        "dataset": {"name": "bars", "n": 256, "seed": 17, "noise": 0.5},
        "search": {"epochs": 50, "batch_size": 64, "alpha_lr": 0.05,
                   "w_lr": 0.025},
    },
}

METHODS = {
    "l2": {"regularizer": {"kind": "l2",
                           "lambda": {"kind": "constant", "value": 1e-3}}},
    "lse": {"regularizer": {"kind": "lse",
                            "lambda": {"kind": "linear", "divisor": 50}}},
    "sa": {"regularizer": {"kind": "sa",
                           "lambda": {"kind": "linear", "divisor": 5},
                           "nu": 1.0, "mu": 0.0}},
}

GROUND_TRUTH_OP = "conv3x3"


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_dotted(doc: dict, overrides: dict) -> dict:
    out = copy.deepcopy(doc)
    for dotted, value in (overrides or {}).items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _base_doc(profile: str, method: str | None = None, **extra) -> dict:
    desk = DESK[profile]
    doc = {"schema_version": 1, "space": desk["space"],
           "dataset": copy.deepcopy(desk["dataset"]),
           "search": copy.deepcopy(desk["search"]),
           "regularizer": {"kind": "none"}}
    if method is not None:
        doc = _deep_merge(doc, copy.deepcopy(METHODS[method]))
    for key, value in extra.items():
        doc = _deep_merge(doc, {key: value})
    return doc


def _worker(task):
    label, doc, run_dir, lineage = task
    cfg = config_from_dict(doc)
    try:
        summary = execute_run(cfg, run_dir, lineage)
    except SearchDiverged as exc:
        return label, {"diverged": str(exc), "run_dir": str(run_dir)}
    return label, summary


def _execute(tasks: list, jobs: int = 1) -> list:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_worker, tasks))
    return [_worker(t) for t in tasks]


def _fan_out(recipe_dir: Path, labelled_docs: list, seed: int, trials: int,
             lineage: str) -> list:
    tasks = []
    for label, doc in labelled_docs:
        for trial in range(trials):
            trial_doc = copy.deepcopy(doc)
            trial_doc["search"]["seed"] = seed + trial
            run_dir = recipe_dir / label / f"trial_{trial:03d}"
            tasks.append(((label, trial), trial_doc, run_dir, lineage))
    return tasks


def _skip_fraction(genotype_dict: dict) -> float:
    edges = genotype_dict["normal"]
    return sum(1 for _, _, op in edges if op == "skip_connect") / len(edges)


def _argmax_series(summary: dict, cell_type: str = "normal") -> list[str]:
    ops = summary["op_order"][cell_type]
    return [ops[int(np.argmax(row))] for row in summary["edge_betas"][cell_type]]


def _write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------

def _recipe_skip_dominance(recipe_dir, seed, trials, jobs, overrides):
    docs = [(m, _apply_dotted(_base_doc("reduced", m), overrides))
            for m in ("l2", "sa")]
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "skip-dominance"),
                       jobs)
    methods: dict = {}
    rows = []
    for (method, trial), summary in results:
        entry = methods.setdefault(method, {"skip_fractions": [],
                                            "final_alpha_mean": [],
                                            "mean_decreasing": [],
                                            "runs": []})
        if "diverged" in summary:
            entry["runs"].append(summary)
            continue
        frac = _skip_fraction(summary["genotype"])
        means = [r["alpha_mean"] for r in summary["trace"]]
        lam_pos = [r["lambda"] > 0 for r in summary["trace"]]
        start = lam_pos.index(True) if any(lam_pos) else len(means)
        decreasing = all(means[i + 1] < means[i]
                         for i in range(start, len(means) - 1))
        entry["skip_fractions"].append(frac)
        entry["final_alpha_mean"].append(means[-1])
        entry["mean_decreasing"].append(bool(decreasing))
        entry["runs"].append({"run_id": summary["run_id"],
                              "run_dir": summary["run_dir"]})
        rows.append([method, trial, frac, means[-1], decreasing])
    _write_csv(recipe_dir / "summary.csv",
               ["method", "trial", "skip_fraction", "final_alpha_mean",
                "alpha_mean_decreasing"], rows)
    return {"methods": methods}


def _recipe_unfair_init(recipe_dir, seed, trials, jobs, overrides):
    base = {"search": {"warm_up_epochs": 15,
                       "alpha_init": {"kind": "constant-offset",
                                      "op": "skip_connect", "delta": 0.1}}}
    docs = [(m, _apply_dotted(_deep_merge(_base_doc("nb201", m), base), overrides))
            for m in ("l2", "lse", "sa")]
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "unfair-init"),
                       jobs)
    methods: dict = {}
    traj_rows = []
    last_k = 10
    for (method, trial), summary in results:
        entry = methods.setdefault(method, {"recovered": [], "runs": []})
        if "diverged" in summary:
            entry["runs"].append(summary)
            continue
        series = _argmax_series(summary)
        tail = series[-last_k:]
        recovered = all(op == GROUND_TRUTH_OP for op in tail)
        entry["recovered"].append(bool(recovered))
        entry["runs"].append({"run_id": summary["run_id"],
                              "run_dir": summary["run_dir"],
                              "final_edge_argmax": series[-1]})
        ops = summary["op_order"]["normal"]
        for epoch, beta_row in enumerate(summary["edge_betas"]["normal"]):
            for name, b in zip(ops, beta_row):
                traj_rows.append([method, trial, epoch, name, b])
    for method, entry in methods.items():
        flags = entry["recovered"]
        entry["recovery_rate"] = (sum(flags) / len(flags)) if flags else None
    _write_csv(recipe_dir / "trajectory.csv",
               ["method", "trial", "epoch", "op", "beta"], traj_rows)
    return {"methods": methods, "ground_truth": GROUND_TRUTH_OP,
            "recovered_window": last_k}


def _recipe_neg_init(recipe_dir, seed, trials, jobs, overrides):
    values = (-0.5, -1.0, -2.0, -5.0)
    docs = []
    for v in values:
        doc = _base_doc("reduced", "l2",
                        search={"alpha_init": {"kind": "constant-negative",
                                               "value": v}})
        docs.append((f"init{v}", _apply_dotted(doc, overrides)))
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "neg-init"), jobs)
    table: dict = {}
    rows = []
    for (label, trial), summary in results:
        entry = table.setdefault(label, {"skip_fractions": [], "runs": []})
        if "diverged" in summary:
            entry["runs"].append(summary)
            continue
        frac = _skip_fraction(summary["genotype"])
        entry["skip_fractions"].append(frac)
        entry["runs"].append({"run_id": summary["run_id"]})
        rows.append([label, trial, frac])
    for label, entry in table.items():
        fr = entry["skip_fractions"]
        entry["mean_skip_fraction"] = float(np.mean(fr)) if fr else None
    _write_csv(recipe_dir / "summary.csv", ["init", "trial", "skip_fraction"],
               rows)
    return {"init_values": list(values), "table": table}


def _recipe_dispersion(recipe_dir, seed, trials, jobs, overrides):
    docs = [(m, _apply_dotted(_base_doc("reduced", m), overrides))
            for m in ("l2", "lse", "sa")]
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "dispersion"),
                       jobs)
    per_method: dict = {}
    for (method, _), summary in results:
        if "diverged" in summary:
            continue
        per_method.setdefault(method, []).append(
            np.array(summary["final_alpha"]["normal"]))
    reports = {m: dispersion_report(tables).to_dict()
               for m, tables in per_method.items()}
    out = {"methods": reports}
    if "sa" in reports and "lse" in reports:
        sa_med = reports["sa"]["aggregate"]["median"]
        lse_med = reports["lse"]["aggregate"]["median"]
        out["sa_to_lse_median_ratio"] = (sa_med / lse_med if lse_med > 0
                                         else float("inf"))
    rows = [[m, t["worst_edge"], t["min_gap"]]
            for m, rep in reports.items() for t in rep["trials"]]
    _write_csv(recipe_dir / "gaps.csv", ["method", "worst_edge", "min_gap"], rows)
    return out


def _recipe_landscape(recipe_dir, seed, trials, jobs, overrides):
    docs = [(m, _apply_dotted(_base_doc("reduced", m), overrides))
            for m in ("l2", "sa")]
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "landscape"),
                       jobs)
    grid = np.linspace(-1.0, 1.0, 7)
    out: dict = {"grid": [float(g) for g in grid], "methods": {}}
    rows = []
    for (method, trial), summary in results:
        if "diverged" in summary:
            continue
        doc = json.loads((Path(summary["run_dir"]) / "config.json").read_text())
        doc["out"] = None
        cfg = config_from_dict(doc)
        dataset = make_dataset(cfg.dataset)
        state = SearchState(cfg.space, cfg.stack, cfg.search, cfg.regularizer,
                            dataset)
        restore_checkpoint(state, Path(summary["run_dir"]) / "checkpoint.npz")
        val_x = dataset.x[state.val_split.indices]
        val_y = dataset.y[state.val_split.indices]
        scan = landscape_scan(state.supernet, val_x, val_y, seed=seed, grid=grid)
        center = next(r for r in scan["rows"]
                      if r["a"] == 0.0 and r["b"] == 0.0)
        deltas = [abs(r["val_loss"] - center["val_loss"]) for r in scan["rows"]
                  if not (r["a"] == 0.0 and r["b"] == 0.0)]
        entry = out["methods"].setdefault(method, {"mean_abs_delta": [],
                                                   "center_loss": []})
        entry["mean_abs_delta"].append(float(np.mean(deltas)))
        entry["center_loss"].append(center["val_loss"])
        for r in scan["rows"]:
            rows.append([method, trial, r["a"], r["b"], r["val_loss"],
                         r["val_acc"]])
        _write_csv(Path(summary["run_dir"]) / "landscape.csv",
                   ["a", "b", "val_loss", "val_acc"],
                   [[r["a"], r["b"], r["val_loss"], r["val_acc"]]
                    for r in scan["rows"]])
    _write_csv(recipe_dir / "landscape.csv",
               ["method", "trial", "a", "b", "val_loss", "val_acc"], rows)
    if {"sa", "l2"} <= set(out["methods"]):
        sa = np.mean(out["methods"]["sa"]["mean_abs_delta"])
        l2 = np.mean(out["methods"]["l2"]["mean_abs_delta"])
        out["sa_flatter_than_l2"] = bool(sa < l2)
    return out


def _recipe_pc_expectation(recipe_dir, seed, trials, jobs, overrides):
    params = {"L": 3, "N": 4, "n_samples": 100_000, "seed": seed}
    for key, value in (overrides or {}).items():
        if key in params:
            params[key] = value
    report = expectation_check(**params)
    rows = [["w", l, n, report["w_analytic"][l][n], report["w_mc"][l][n],
             report["w_se"][l][n], report["w_z"][l][n]]
            for l in range(params["L"]) for n in range(params["N"])]
    rows += [["alpha", l, "", report["alpha_analytic"][l], report["alpha_mc"][l],
              report["alpha_se"][l], report["alpha_z"][l]]
             for l in range(params["L"])]
    _write_csv(recipe_dir / "zscores.csv",
               ["target", "l", "n", "analytic", "mc_mean", "se", "z"], rows)
    return report


def _recipe_hyperparam_grid(recipe_dir, seed, trials, jobs, overrides):
    pairs = [("nu1", 1.0, 0.0), ("nu025_mu1e6", 0.25, 1e6),
             ("nu0_musqrt2", 0.0, 1.0 / np.sqrt(2.0))]
    docs = []
    for label, nu, mu in pairs:
        doc = _base_doc("reduced", "sa",
                        regularizer={"nu": nu, "mu": mu})
        docs.append((label, _apply_dotted(doc, overrides)))
    results = _execute(_fan_out(recipe_dir, docs, seed, trials,
                                "hyperparam-grid"), jobs)
    table: dict = {}
    for (label, trial), summary in results:
        entry = table.setdefault(label, {"skip_fractions": [], "min_gaps": [],
                                         "genotypes": []})
        if "diverged" in summary:
            continue
        entry["skip_fractions"].append(_skip_fraction(summary["genotype"]))
        entry["min_gaps"].append(summary["trace"][-1]["min_top2_gap"])
        entry["genotypes"].append(summary["genotype"])
    return {"pairs": {label: {"nu": nu, "mu": mu}
                      for label, nu, mu in pairs}, "table": table}


def _recipe_oracle_score(recipe_dir, seed, trials, jobs, overrides):
    overrides = dict(overrides or {})
    bench_path = overrides.pop("benchmark", None)
    desk = DESK["micro"]
    if bench_path and Path(bench_path).exists():
        benchmark = TabularBenchmark.load(bench_path)
    else:
        benchmark = build_benchmark(
            "micro",
            stack=_micro_stack(),
            dataset_spec=desk["dataset"],
            cfg=TrainCfg(), seeds=(1, 2, 3), jobs=jobs)
        bench_path = bench_path or (recipe_dir / "benchmark.json")
        Path(bench_path).parent.mkdir(parents=True, exist_ok=True)
        benchmark.save(bench_path)
    regrets_all = sorted(rank_of(benchmark, key)["regret"]
                         for key in benchmark.entries)
    threshold = float(np.percentile(regrets_all, 10.0))

    docs = [(m, _apply_dotted(_base_doc("micro", m), overrides))
            for m in ("l2", "lse", "sa")]
    results = _execute(_fan_out(recipe_dir, docs, seed, trials, "oracle-score"),
                       jobs)
    table: dict = {}
    rows = []
    for (method, trial), summary in results:
        entry = table.setdefault(method, {"regrets": [], "ranks": [],
                                          "top_decile": []})
        if "diverged" in summary:
            continue
        score = rank_of(benchmark, Genotype.from_dict(summary["genotype"]))
        entry["regrets"].append(score["regret"])
        entry["ranks"].append(score["rank"])
        entry["top_decile"].append(bool(score["regret"] <= threshold))
        rows.append([method, trial, score["rank"], score["regret"]])
    for method, entry in table.items():
        if entry["regrets"]:
            entry["median_regret"] = float(np.median(entry["regrets"]))
            entry["top_decile_rate"] = float(np.mean(entry["top_decile"]))
    _write_csv(recipe_dir / "scores.csv", ["method", "trial", "rank", "regret"],
               rows)
    return {"benchmark": str(bench_path), "regret_threshold": threshold,
            "table": table}


def _micro_stack():
    from .space import StackSpec
    desk = DESK["micro"]
    size = desk["dataset"].get("size", 16)
    return StackSpec(cells=1, channels=8, image_hw=(size, size), classes=4)


_RECIPES = {
    "skip-dominance": (_recipe_skip_dominance, 10),
    "unfair-init": (_recipe_unfair_init, 10),
    "neg-init": (_recipe_neg_init, 10),
    "dispersion": (_recipe_dispersion, 10),
    "landscape": (_recipe_landscape, 1),
    "pc-expectation": (_recipe_pc_expectation, 1),
    "hyperparam-grid": (_recipe_hyperparam_grid, 3),
    "oracle-score": (_recipe_oracle_score, 10),
}


def run_recipe(recipe: str, out_root, seed: int = 0, trials: int | None = None,
               jobs: int = 1, overrides: dict | None = None) -> dict:
    if recipe not in _RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; known: {RECIPE_IDS}")
    fn, default_trials = _RECIPES[recipe]
    trials = default_trials if trials is None else trials
    if trials < 1:
        raise ContractError("trials must be >= 1")
    recipe_dir = Path(out_root) / recipe
    recipe_dir.mkdir(parents=True, exist_ok=True)
    body = fn(recipe_dir, seed, trials, jobs, overrides or {})
    report = {"recipe": recipe, "seed": seed, "trials": trials, **body}
    write_json(recipe_dir / "report.json", report)
    return report
