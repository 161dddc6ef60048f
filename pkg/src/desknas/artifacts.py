"""Run artifacts: self-contained directories with content-hashed manifests.

Every file is written deterministically (sorted JSON keys, repr-formatted
floats, fixed zip timestamps in checkpoints) so that re-running an identical
config produces byte-identical artifacts and therefore identical manifests.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, RunConfig
from .datasets import make_dataset
from .errors import IntegrityError, SearchDiverged
from .mixed import beta_of
from .search import (SearchResult, SearchState, resume_search, save_checkpoint)

MANIFEST_NAME = "manifest.json"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_path(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


TRACE_COLUMNS = ["epoch", "lambda", "w_lr", "warm_up", "train_loss", "val_loss",
                 "val_acc", "alpha_mean", "alpha_median", "alpha_std",
                 "min_top2_gap", "genotype"]


def trace_csv_text(trace: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace:
        writer.writerow([row[c] for c in TRACE_COLUMNS])
    return buf.getvalue()


def alphas_csv_text(alpha_history: list[dict], topologies, op_order) -> str:
    """Long-format architecture weights: one row per epoch/edge/op."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "cell_type", "edge", "src", "dst", "op",
                     "alpha", "beta"])
    for epoch, snap in enumerate(alpha_history):
        for cell_type in sorted(snap):
            table = snap[cell_type]
            topo = topologies[cell_type]
            names = op_order[cell_type]
            for k, (i, j) in enumerate(topo.edges):
                betas = beta_of(table[k])
                for o, name in enumerate(names):
                    writer.writerow([epoch, cell_type, k, i, j, name,
                                     float(table[k][o]), float(betas[o])])
    return buf.getvalue()


def write_run_artifact(run_dir, config: RunConfig, result: SearchResult,
                       lineage: str | None = None) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    state = result.state
    write_json(run_dir / "config.json", config.resolved)
    (run_dir / "trace.csv").write_text(trace_csv_text(result.trace))
    (run_dir / "alphas.csv").write_text(alphas_csv_text(
        result.alpha_history, state.supernet.topologies,
        state.supernet.arch.op_order))
    result.genotype.save(run_dir / "genotype.json")
    save_checkpoint(state, run_dir / "checkpoint.npz")
    if state.diverged:
        write_json(run_dir / "divergence.json", state.diverged)
    files = sorted(p.name for p in run_dir.iterdir()
                   if p.is_file() and p.name != MANIFEST_NAME)
    manifest = {
        "engine_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "run_id": config.run_id(),
        "lineage": lineage,
        "files": {name: sha256_path(run_dir / name) for name in files},
    }
    write_json(run_dir / MANIFEST_NAME, manifest)
    return manifest


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise IntegrityError(f"no manifest in {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def verify_artifact(run_dir) -> dict:
    """Check every manifest hash; raise IntegrityError on any mismatch."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    for name, digest in manifest["files"].items():
        path = run_dir / name
        if not path.exists():
            raise IntegrityError(f"{run_dir}: missing file {name}")
        actual = sha256_path(path)
        if actual != digest:
            raise IntegrityError(
                f"{run_dir}/{name}: hash mismatch ({actual} != {digest})")
    return manifest


def execute_run(config: RunConfig, run_dir, lineage: str | None = None) -> dict:
    """Build state from a config, run the search, persist the artifact.

    Returns a summary dict (also usable across process boundaries).  On
    divergence the partial artifact and a diagnostic record are still written
    and the exception re-raised.
    """
    dataset = make_dataset(config.dataset)
    state = SearchState(config.space, config.stack, config.search,
                        config.regularizer, dataset)
    try:
        result = resume_search(state)
    except SearchDiverged:
        result = SearchResult(genotype=state.current_genotype(),
                              trace=state.trace,
                              alpha_history=state.alpha_history, state=state)
        write_run_artifact(run_dir, config, result, lineage)
        raise
    manifest = write_run_artifact(run_dir, config, result, lineage)
    topo = state.supernet.topologies
    edge_betas = {}
    for cell_type in sorted(topo):
        rows = []
        for snap in result.alpha_history:
            table = snap[cell_type]
            k = min(config.trace_edge, table.shape[0] - 1)
            rows.append([float(v) for v in beta_of(table[k])])
        edge_betas[cell_type] = rows
    return {
        "run_dir": str(run_dir),
        "run_id": config.run_id(),
        "manifest": manifest,
        "genotype": result.genotype.to_dict(),
        "trace": result.trace,
        "final_alpha": {t: s.tolist()
                        for t, s in result.alpha_history[-1].items()}
        if result.alpha_history else {},
        "edge_betas": edge_betas,
        "op_order": state.supernet.arch.op_order,
    }


def default_out_root() -> Path:
    return Path(os.environ.get("DESKNAS_OUT_ROOT", "runs"))
