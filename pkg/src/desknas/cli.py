"""Command-line front end.

Subcommands: search, experiment, derive, eval, plotdata, oracle-build,
oracle-score.  The default output root is ``$DESKNAS_OUT_ROOT`` (or ./runs).
Exit codes: 0 success, 2 configuration/usage error, 3 search divergence,
4 artifact integrity failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .artifacts import (default_out_root, execute_run, verify_artifact,
                        write_json)
from .config import config_from_dict, load_config, with_seed
from .datasets import make_dataset
from .errors import (ConfigError, ContractError, DeskNasError, IntegrityError,
                     SearchDiverged)
from .metrics import derive, discrepancy_gap, evaluate_forward
from .oracle import TabularBenchmark, TrainCfg, build_benchmark, rank_of
from .recipes import DESK, RECIPE_IDS, run_recipe, _micro_stack
from .search import SearchState, restore_checkpoint
from .space import Genotype, instantiate_discrete

EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_INTEGRITY = 4


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects dotted.key=json-value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_search(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = with_seed(config, args.seed)
    trials = args.trials if args.trials is not None else config.trials
    out_root = Path(args.out or config.out or default_out_root())
    base_seed = config.search.seed
    if trials == 1:
        summary = execute_run(config, out_root)
        print(json.dumps({"run_dir": summary["run_dir"],
                          "run_id": summary["run_id"],
                          "genotype": summary["genotype"]}, indent=2))
        return 0
    for trial in range(trials):
        cfg = with_seed(config, base_seed + trial)
        run_dir = out_root / f"trial_{trial:03d}"
        summary = execute_run(cfg, run_dir)
        print(f"trial {trial}: {summary['run_dir']} run_id={summary['run_id']}")
    return 0


def cmd_experiment(args) -> int:
    out_root = Path(args.out or default_out_root())
    report = run_recipe(args.recipe, out_root, seed=args.seed or 0,
                        trials=args.trials, jobs=args.jobs,
                        overrides=_parse_set(args.set))
    print(json.dumps(report, indent=2, default=str))
    return 0


def _restore_state(artifact_dir: Path) -> tuple:
    verify_artifact(artifact_dir)
    doc = json.loads((artifact_dir / "config.json").read_text())
    doc["out"] = None
    config = config_from_dict(doc)
    dataset = make_dataset(config.dataset)
    state = SearchState(config.space, config.stack, config.search,
                        config.regularizer, dataset)
    restore_checkpoint(state, artifact_dir / "checkpoint.npz")
    return config, dataset, state


def cmd_derive(args) -> int:
    artifact_dir = Path(args.artifact)
    config, _, state = _restore_state(artifact_dir)
    gamma = (None if state.supernet.arch.gamma is None else
             {t: g.data for t, g in state.supernet.arch.gamma.items()})
    genotype = derive({t: a.data for t, a in state.supernet.arch.alpha.items()},
                      gamma, state.supernet.topologies, space=config.space,
                      use_raw_selection=args.raw)
    stored = Genotype.load(artifact_dir / "genotype.json")
    if not args.raw and genotype != stored:
        raise IntegrityError(
            "re-derived genotype does not match the stored genotype")
    print(genotype.canonical())
    return 0


def cmd_eval(args) -> int:
    artifact_dir = Path(args.artifact)
    config, dataset, state = _restore_state(artifact_dir)
    genotype = Genotype.load(artifact_dir / "genotype.json")
    seed = args.seed if args.seed is not None else config.search.seed
    net = instantiate_discrete(genotype, config.stack, seed=seed)
    from .oracle import train_discrete
    cfg = TrainCfg(batch_size=config.search.batch_size,
                   lr=config.search.w_lr, momentum=config.search.w_momentum,
                   weight_decay=config.search.w_weight_decay,
                   grad_clip=config.search.grad_clip,
                   split_fraction=config.search.split_fraction,
                   split_seed=config.search.seed)
    trained = train_discrete(net, dataset, cfg, seed=seed)
    val_x = dataset.x[state.val_split.indices]
    val_y = dataset.y[state.val_split.indices]
    report = {"genotype": genotype.to_dict(), "scratch": trained}
    if not config.search.partial_k:
        report["discrepancy"] = discrepancy_gap(state.supernet, genotype,
                                                val_x, val_y)
    write_json(artifact_dir / "eval.json", report)
    print(json.dumps(report, indent=2))
    return 0


_FIGURES = ("beta-trace", "alpha-stats", "landscape")


def cmd_plotdata(args) -> int:
    artifact_dir = Path(args.artifact)
    rows = []
    if args.figure == "beta-trace":
        src = artifact_dir / "alphas.csv"
        if not src.exists():
            raise ConfigError(f"{artifact_dir}: missing alphas.csv")
        with open(src) as fh:
            for rec in csv.DictReader(fh):
                if int(rec["edge"]) == args.edge and rec["cell_type"] == "normal":
                    rows.append(["beta-trace", rec["op"], rec["epoch"],
                                 rec["beta"]])
    elif args.figure == "alpha-stats":
        src = artifact_dir / "trace.csv"
        if not src.exists():
            raise ConfigError(f"{artifact_dir}: missing trace.csv")
        with open(src) as fh:
            for rec in csv.DictReader(fh):
                for series in ("alpha_mean", "alpha_median", "alpha_std"):
                    rows.append(["alpha-stats", series, rec["epoch"],
                                 rec[series]])
    elif args.figure == "landscape":
        src = artifact_dir / "landscape.csv"
        if not src.exists():
            raise ConfigError(
                f"{artifact_dir}: missing landscape.csv (columns a, b, "
                "val_loss, val_acc); run the landscape recipe first")
        with open(src) as fh:
            for rec in csv.DictReader(fh):
                key = f"a={rec['a']}"
                rows.append(["landscape", key, rec["b"], rec["val_loss"]])
    else:
        raise ConfigError(f"unknown figure {args.figure!r}; known: {_FIGURES}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["figure", "series", "x", "value"])
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        print(f"wrote {args.out} ({len(rows)} rows)")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_oracle_build(args) -> int:
    desk = DESK["micro"]
    benchmark = build_benchmark("micro", stack=_micro_stack(),
                                dataset_spec=desk["dataset"],
                                cfg=TrainCfg(), seeds=(1, 2, 3),
                                jobs=args.jobs)
    out = Path(args.out or (default_out_root() / "oracle" / "benchmark.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    benchmark.save(out)
    best_key = min(benchmark.entries,
                   key=lambda k: rank_of(benchmark, k)["rank"])
    print(json.dumps({"benchmark": str(out), "entries": len(benchmark.entries),
                      "best": json.loads(best_key),
                      "best_acc": benchmark.entries[best_key]["acc_mean"]},
                     indent=2))
    return 0


def cmd_oracle_score(args) -> int:
    benchmark = TabularBenchmark.load(args.benchmark)
    if args.genotype:
        genotype = Genotype.load(args.genotype)
    elif args.artifact:
        verify_artifact(args.artifact)
        genotype = Genotype.load(Path(args.artifact) / "genotype.json")
    else:
        raise ConfigError("oracle-score needs --genotype or --artifact")
    score = rank_of(benchmark, genotype)
    print(json.dumps(score, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desknas",
        description="Desk-scale differentiable architecture search harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run one search config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("experiment", help="run a named experiment recipe")
    p.add_argument("--recipe", required=True, choices=RECIPE_IDS)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", default=[],
                   help="dotted.config.key=json-value override")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("derive", help="re-derive the genotype of an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--raw", action="store_true",
                   help="rank edges by raw alpha*gamma instead of softmaxes")
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("eval", help="train the derived network from scratch")
    p.add_argument("--artifact", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plotdata", help="emit tidy plot data from an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--figure", required=True, choices=_FIGURES)
    p.add_argument("--edge", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plotdata)

    p = sub.add_parser("oracle-build", help="train every micro-space genotype")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_oracle_build)

    p = sub.add_parser("oracle-score", help="rank a genotype against the table")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--genotype", default=None)
    p.add_argument("--artifact", default=None)
    p.set_defaults(fn=cmd_oracle_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SearchDiverged as exc:
        print(f"diverged: {exc} {json.dumps(exc.diagnostics)}", file=sys.stderr)
        return EXIT_DIVERGED
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except DeskNasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
