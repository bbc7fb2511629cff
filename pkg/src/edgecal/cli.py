"""Command-line entry point: ``edgecal <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training or fit failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .data import generate_sbm, write_edge_list, write_features
from .errors import ContractError, DataError, TrainingError
from .innout import GAMMA_CHOICES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv(kind):
    def parse(text: str):
        try:
            return tuple(kind(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values, got {text!r}") from None

    return parse


def build_parser() -> Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its fields")
    common.add_argument("--seed", type=_csv(int), help="seed or comma-separated seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("--encoder", choices=("gcn", "gin", "sage"))
    common.add_argument("--calibrators", type=_csv(str), help="subset of " + ",".join(ex.CALIBRATORS))
    common.add_argument("--gamma", choices=GAMMA_CHOICES)
    common.add_argument("--lambda-grid", type=_csv(float), dest="lambda_grid")
    common.add_argument("--bins", type=int, help="bins for reported ECE and diagrams")
    common.add_argument("--edges", help="edge-list file (overrides the synthetic dataset)")
    common.add_argument("--features", help="feature CSV to go with --edges")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = Parser(prog="edgecal", description="Calibrated GNN link prediction experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    synth = sub.add_parser("synth", parents=[common], help="write a synthetic SBM dataset to --out")
    synth.add_argument("--blocks", type=int, default=2)
    synth.add_argument("--nodes-per-block", type=int, default=200)
    synth.add_argument("--p-in", type=float, default=0.1)
    synth.add_argument("--p-out", type=float, default=0.01)
    synth.add_argument("--feature-dim", type=int, default=16)
    sub.add_parser("train", parents=[common], help="split and train the link predictor per seed")
    sub.add_parser("calibrate", parents=[common], help="fit calibrators on trained models")
    sub.add_parser("evaluate", parents=[common], help="score test edges before/after calibration")
    sub.add_parser("report", parents=[common], help="markdown summary of results under --out")
    sub.add_parser("run", parents=[common], help="train, calibrate, evaluate and tabulate")
    return parser


def make_config(args) -> ex.ExperimentConfig:
    doc = {}
    if args.config:
        doc = ex.ExperimentConfig.load(args.config).to_dict()
    if args.seed:
        doc["seeds"] = list(args.seed)
    if args.out:
        doc["out"] = args.out
    if args.calibrators:
        doc["calibrators"] = list(args.calibrators)
    if args.bins is not None:
        doc["bins"] = args.bins
    if args.edges:
        doc["dataset"] = {"kind": "files", "edges": args.edges}
        if args.features:
            doc["dataset"]["features"] = args.features
    innout = doc.setdefault("innout", {})
    if args.gamma:
        innout["gamma"] = args.gamma
    if args.lambda_grid:
        innout["lam_grid"] = list(args.lambda_grid)
    if args.encoder:
        doc.setdefault("encoder", {})["variant"] = args.encoder
    return ex.ExperimentConfig.from_dict(doc)


def cmd_synth(args) -> int:
    seed = args.seed[0] if args.seed else 0
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    g, x = generate_sbm(args.blocks, args.nodes_per_block, args.p_in, args.p_out, args.feature_dim, seed=seed)
    write_edge_list(out / "edges.tsv", g)
    write_features(out / "features.csv", x)
    print(f"wrote {g.n} nodes, {g.num_edges} edges to {out}")
    return EXIT_OK


def _stage_config(args) -> ex.ExperimentConfig:
    """Later stages reuse the config saved by ``train`` unless one is given."""
    config = make_config(args)
    saved = Path(config.out) / "config.json"
    if not args.config and saved.exists():
        base = ex.ExperimentConfig.load(saved)
        config = replace(base, seeds=config.seeds if args.seed else base.seeds,
                         calibrators=config.calibrators if args.calibrators else base.calibrators)
    return config


def cmd_train(args) -> int:
    config = make_config(args)
    Path(config.out).mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        ctx, result = ex.train_stage(config, seed)
        print(f"seed {seed}: best validation AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}")
    config.save(Path(config.out) / "config.json")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _stage_config(args)
    for seed in config.seeds:
        fitted = ex.calibrate_stage(ex.load_context(config, seed))
        print(f"seed {seed}: fitted {', '.join(fitted)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _stage_config(args)
    runs = []
    for seed in config.seeds:
        ctx = ex.load_context(config, seed)
        runs.append(ex.evaluate_stage(ctx, ex.load_calibrators(ctx)))
    rows = ex.aggregate(config.dataset_name, config.encoder.variant, runs)
    ex.write_results(Path(config.out) / "results.csv", rows)
    _print_rows(rows)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or "results")
    text = ex.report(out)
    (out / "report.md").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_run(args) -> int:
    config = make_config(args)
    result = ex.run_experiment(config)
    _print_rows(result.rows)
    for seed, err in result.failures.items():
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_FIT if not result.runs else EXIT_OK


def _print_rows(rows) -> None:
    for r in rows:
        print(f"{r['calibrator']:>12}  ECE {r['ece_mean']:6.2f} ± {r['ece_std']:5.2f}  "
              f"acc {r['acc_mean']:6.2f}  AUC {r['auc_mean']:.4f}  Hits@20 {r['hits20_mean']:6.2f}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "calibrate": cmd_calibrate,
            "evaluate": cmd_evaluate, "report": cmd_report, "run": cmd_run}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"edgecal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"edgecal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"edgecal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, ArithmeticError) as exc:
        print(f"edgecal: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
