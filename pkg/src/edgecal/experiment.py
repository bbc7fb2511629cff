"""Experiment orchestration: split, train, calibrate, evaluate and report.

Every stage writes plain files (JSON checkpoints, CSV tables, SVG
diagrams) so runs can be resumed or inspected stage by stage. Outputs of
different seeds live in separate ``seed_<n>`` directories.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines
from .data import generate_sbm, load_dataset
from .encoders import EncoderConfig, LinkPredictor, ScorerConfig, load_model, save_model
from .errors import ContractError, DataError
from .graph import EdgeSplit, Graph, LabeledEdges, split_edges
from .innout import CounterfactualEncoder, InNOutCalibrator, InNOutConfig, build_calibration_set
from .innout import calibrate as innout_calibrate
from .innout import fit as innout_fit
from .metrics import DEFAULT_BINS, ReliabilityDiagram, nll, reliability_diagram
from .training import ScoredEdges, TrainConfig, TrainResult, message_graph, train

log = logging.getLogger(__name__)

CALIBRATORS = ("temp", "iso", "hist", "bbq", "innout", "embmlp")
BASELINE_VARIANT = {"temp": "temp", "iso": "isotonic", "hist": "histogram", "bbq": "bbq", "embmlp": "emb-mlp"}
UNCALIBRATED = "uncalibrated"
RESULTS_HEADER = [
    "dataset", "model", "calibrator", "seed_count", "ece_mean", "ece_std",
    "nll_mean", "acc_mean", "auc_mean", "hits20_mean", "hits20_std",
]
DEFAULT_DATASET = {"kind": "sbm", "blocks": 2, "nodes_per_block": 200, "p_in": 0.1, "p_out": 0.01, "feature_dim": 16}


def subseed(seed: int, tag: int) -> int:
    """Independent, reproducible seed for one stage of one run."""
    return int(np.random.default_rng([seed, tag]).integers(0, 2**63))


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    encoder: EncoderConfig = EncoderConfig()
    scorer: ScorerConfig = ScorerConfig()
    train: TrainConfig = TrainConfig()
    innout: InNOutConfig = InNOutConfig()
    calibrators: tuple[str, ...] = CALIBRATORS
    seeds: tuple[int, ...] = (0,)
    out: str = "results"
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("need at least one seed")
        unknown = [c for c in self.calibrators if c not in CALIBRATORS]
        if unknown:
            raise ContractError(f"unknown calibrators {unknown}; choose from {', '.join(CALIBRATORS)}")
        if self.dataset.get("kind") not in ("sbm", "files"):
            raise ContractError("dataset kind must be 'sbm' or 'files'")
        if self.scorer.in_dim != self.encoder.out:
            raise ContractError(f"scorer input dim {self.scorer.in_dim} != encoder output dim {self.encoder.out}")
        if self.bins < 1:
            raise ContractError(f"bin count must be positive, got {self.bins}")

    @property
    def dataset_name(self) -> str:
        d = self.dataset
        if "name" in d:
            return str(d["name"])
        if d["kind"] == "sbm":
            return f"sbm{d.get('blocks', 2)}x{d.get('nodes_per_block', 200)}"
        return Path(d["edges"]).stem

    def to_dict(self) -> dict:
        return {
            "dataset": dict(self.dataset),
            "encoder": asdict(self.encoder),
            "scorer": asdict(self.scorer),
            "train": asdict(self.train),
            "innout": {**asdict(self.innout), "lam_grid": list(self.innout.lam_grid)},
            "calibrators": list(self.calibrators),
            "seeds": list(self.seeds),
            "out": self.out,
            "bins": self.bins,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        allowed = {f.name for f in fields(cls)}
        unknown = set(doc) - allowed
        if unknown:
            raise ContractError(f"unknown config keys {sorted(unknown)}")
        kw = dict(doc)
        try:
            if "encoder" in kw:
                kw["encoder"] = EncoderConfig(**kw["encoder"])
            if "scorer" in kw:
                kw["scorer"] = ScorerConfig(**kw["scorer"])
            if "train" in kw:
                kw["train"] = TrainConfig(**kw["train"])
            if "innout" in kw:
                inn = dict(kw["innout"])
                if "lam_grid" in inn:
                    inn["lam_grid"] = tuple(float(v) for v in inn["lam_grid"])
                kw["innout"] = InNOutConfig(**inn)
        except TypeError as exc:
            raise ContractError(f"bad config section: {exc}") from None
        if "dataset" in kw:
            kw["dataset"] = {**DEFAULT_DATASET, **kw["dataset"]} if kw["dataset"].get("kind", "sbm") == "sbm" else kw["dataset"]
        for key in ("calibrators", "seeds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def seed_dir(self, seed: int) -> Path:
        return Path(self.out) / f"seed_{seed}"


def load_graph(config: ExperimentConfig, seed: int) -> tuple[Graph, np.ndarray]:
    d = config.dataset
    if d["kind"] == "files":
        if "edges" not in d:
            raise ContractError("file datasets need an 'edges' path")
        g, x = load_dataset(d["edges"], d.get("features"))
    else:
        g, x = generate_sbm(
            d["blocks"], d["nodes_per_block"], d["p_in"], d["p_out"], d["feature_dim"],
            seed=d.get("seed", seed), noise=d.get("noise", 1.0),
        )
    return g, x


def save_split(path, split: EdgeSplit) -> None:
    Path(path).write_text(json.dumps({k: v.tolist() for k, v in asdict(split).items()}))


def load_split(path) -> EdgeSplit:
    doc = json.loads(Path(path).read_text())
    return EdgeSplit(**{k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in doc.items()})


@dataclass
class SeedContext:
    """Everything one seed's later stages need."""

    config: ExperimentConfig
    seed: int
    g: Graph
    x: np.ndarray
    split: EdgeSplit
    model: LinkPredictor

    @property
    def message_graph(self) -> Graph:
        return message_graph(self.g, self.split)

    def counterfactual(self) -> CounterfactualEncoder:
        return CounterfactualEncoder(self.model, self.message_graph, self.x)


def train_stage(config: ExperimentConfig, seed: int) -> tuple[SeedContext, TrainResult]:
    """Load or generate the graph, split it, train, and write model + split + log."""
    g, x = load_graph(config, seed)
    if x.shape[1] != config.encoder.in_dim:
        config.encoder = replace(config.encoder, in_dim=x.shape[1])
    split = split_edges(g, seed=subseed(seed, 1))
    model = LinkPredictor.initialize(config.encoder, config.scorer, seed=subseed(seed, 2))
    result = train(model, g, x, split, replace(config.train, seed=subseed(seed, 3)))
    out = config.seed_dir(seed)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.json", result.model)
    save_split(out / "split.json", split)
    result.write_log(out / "train_log.jsonl")
    return SeedContext(config, seed, g, x, split, result.model), result


def load_context(config: ExperimentConfig, seed: int) -> SeedContext:
    out = config.seed_dir(seed)
    if not (out / "model.json").exists():
        raise DataError(f"{out}: no trained model; run the train stage first")
    g, x = load_graph(config, seed)
    return SeedContext(config, seed, g, x, load_split(out / "split.json"), load_model(out / "model.json"))


def labeled_sets(ctx: SeedContext) -> dict[str, LabeledEdges]:
    s = ctx.split
    return {
        "calibration": build_calibration_set(ctx.g, s, seed=subseed(ctx.seed, 4)),
        "validation": LabeledEdges.from_pos_neg(s.val_pos, s.val_neg),
        "test": LabeledEdges.from_pos_neg(s.test_pos, s.test_neg),
    }


def calibrate_stage(ctx: SeedContext, cf: CounterfactualEncoder | None = None) -> dict:
    """Fit every configured calibrator on the shared calibration set and save them."""
    config = ctx.config
    cf = ctx.counterfactual() if cf is None else cf
    sets = labeled_sets(ctx)
    cal, val = sets["calibration"], sets["validation"]
    h = cf.embeddings
    cal_scored = ScoredEdges(cal.edges, cf.logits(cal.edges), cal.labels)
    inn_config = replace(config.innout, seed=subseed(ctx.seed, 5))
    fitted = {}
    for name in config.calibrators:
        log.info("seed %d: fitting %s", ctx.seed, name)
        if name == "innout":
            fitted[name] = innout_fit(cf, cal, val, inn_config)
        elif name == "embmlp":
            val_scored = ScoredEdges(val.edges, cf.logits(val.edges), val.labels)
            fitted[name] = baselines.fit(
                "emb-mlp", cal_scored, ctx.model.edge_embeddings(h, cal.edges), inn_config,
                validation=(val_scored, ctx.model.edge_embeddings(h, val.edges)),
            )
        else:
            fitted[name] = baselines.fit(BASELINE_VARIANT[name], cal_scored)
    out = config.seed_dir(ctx.seed) / "calibrators"
    out.mkdir(parents=True, exist_ok=True)
    for name, cal_obj in fitted.items():
        cal_obj.save(out / f"{name}.json")
    return fitted


def load_calibrators(ctx: SeedContext) -> dict:
    out = ctx.config.seed_dir(ctx.seed) / "calibrators"
    fitted = {}
    for name in ctx.config.calibrators:
        path = out / f"{name}.json"
        if not path.exists():
            raise DataError(f"{path}: calibrator not fitted; run the calibrate stage first")
        fitted[name] = InNOutCalibrator.load(path) if name == "innout" else baselines.FittedCalibrator.load(path)
    return fitted


def apply_calibrator(name: str, calibrator, cf: CounterfactualEncoder, scored: ScoredEdges) -> ScoredEdges:
    if name == "innout":
        return innout_calibrate(calibrator, cf, scored.edges, scored.labels)
    emb = cf.model.edge_embeddings(cf.embeddings, scored.edges) if name == "embmlp" else None
    return baselines.apply(calibrator, scored, emb)


def summarize(scored: ScoredEdges, n_bins: int) -> tuple[dict, ReliabilityDiagram]:
    """Test metrics of one (possibly calibrated) scored set; ECE and accuracy are x100."""
    conf, y = scored.confidence, scored.labels
    diagram = reliability_diagram(conf, y, n_bins)
    row = {
        "ece": 100.0 * diagram.ece(),
        "ece10": 100.0 * reliability_diagram(conf, y, 10).ece(),
        "nll": nll(conf, y) / len(y),
        "acc": scored.accuracy(),
        "auc": scored.auc(),
        "hits20": scored.hits(20),
        "gap_above": diagram.gap_above(0.5),
    }
    return row, diagram


def evaluate_stage(ctx: SeedContext, fitted: dict, cf: CounterfactualEncoder | None = None) -> list[dict]:
    """Score the test set before and after each calibrator; writes run.json and diagrams."""
    config = ctx.config
    cf = ctx.counterfactual() if cf is None else cf
    test = labeled_sets(ctx)["test"]
    raw = ScoredEdges(test.edges, cf.logits(test.edges), test.labels)
    out = config.seed_dir(ctx.seed)
    rel = out / "reliability"
    rel.mkdir(parents=True, exist_ok=True)
    base, pre = summarize(raw, config.bins)
    records = [{"calibrator": UNCALIBRATED, **base}]
    for name, cal_obj in fitted.items():
        post_scored = apply_calibrator(name, cal_obj, cf, raw)
        row, post = summarize(post_scored, config.bins)
        if name == "temp":
            row["T"] = cal_obj.params["T"]
        if name in ("innout", "embmlp"):
            row["lambda"] = cal_obj.lam if name == "innout" else cal_obj.params["lambda"]
        records.append({"calibrator": name, **row})
        for tag, diagram in (("pre", pre), ("post", post)):
            diagram.to_csv(rel / f"{name}_{tag}.csv")
            diagram.to_svg(rel / f"{name}_{tag}.svg", title=f"{name} ({tag}-calibration), seed {ctx.seed}")
    run = {
        "dataset": config.dataset_name,
        "model": config.encoder.variant,
        "seed": ctx.seed,
        "records": records,
    }
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")
    return records


def run_seed(config: ExperimentConfig, seed: int) -> list[dict]:
    ctx, _ = train_stage(config, seed)
    cf = ctx.counterfactual()
    fitted = calibrate_stage(ctx, cf)
    return evaluate_stage(ctx, fitted, cf)


def aggregate(dataset: str, model: str, runs: list[list[dict]]) -> list[dict]:
    """One ResultsTable row per calibrator, aggregated across completed seeds."""
    names = [r["calibrator"] for r in runs[0]]
    rows = []
    for name in names:
        per = [next(r for r in run if r["calibrator"] == name) for run in runs]
        col = {k: np.array([p[k] for p in per], dtype=np.float64) for k in ("ece", "nll", "acc", "auc", "hits20")}
        rows.append({
            "dataset": dataset,
            "model": model,
            "calibrator": name,
            "seed_count": len(per),
            "ece_mean": float(col["ece"].mean()),
            "ece_std": float(col["ece"].std()),
            "nll_mean": float(col["nll"].mean()),
            "acc_mean": float(col["acc"].mean()),
            "auc_mean": float(col["auc"].mean()),
            "hits20_mean": float(col["hits20"].mean()),
            "hits20_std": float(col["hits20"].std()),
        })
    return rows


def write_results(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in RESULTS_HEADER])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise DataError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            row = {k: float(v) for k, v in r.items() if k not in ("dataset", "model", "calibrator")}
            row.update(dataset=r["dataset"], model=r["model"], calibrator=r["calibrator"])
            row["seed_count"] = int(row["seed_count"])
            rows.append(row)
    return rows


@dataclass
class ExperimentResult:
    rows: list[dict]
    runs: dict[int, list[dict]]
    failures: dict[int, str]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every seed end to end and write ``results.csv`` under ``config.out``.

    A seed that raises is logged and skipped; the table aggregates the rest.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    runs, failures = {}, {}
    with open(out / "run_log.jsonl", "w") as fh:
        for seed in config.seeds:
            try:
                runs[seed] = run_seed(config, seed)
                fh.write(json.dumps({"seed": seed, "status": "ok"}) + "\n")
            except (ContractError, DataError, ArithmeticError, RuntimeError) as exc:
                log.error("seed %d failed: %s", seed, exc)
                failures[seed] = f"{type(exc).__name__}: {exc}"
                fh.write(json.dumps({"seed": seed, "status": "failed", "error": failures[seed]}) + "\n")
    rows = aggregate(config.dataset_name, config.encoder.variant, list(runs.values())) if runs else []
    write_results(out / "results.csv", rows)
    return ExperimentResult(rows, runs, failures)


def find_results(results_dir) -> list[Path]:
    root = Path(results_dir)
    if not root.is_dir():
        raise ContractError(f"{root}: not a directory")
    return sorted(p for p in root.rglob("results.csv"))


def report(results_dir) -> str:
    """Markdown table of ECE (mean ± std) per dataset/model; the lowest ECE per row is bold.

    Ties on the mean (exact float equality) are all highlighted.
    """
    rows = [r for path in find_results(results_dir) for r in read_results(path)]
    if not rows:
        raise ContractError(f"{results_dir}: no results found")
    calibrators = list(dict.fromkeys(r["calibrator"] for r in rows))
    groups: dict[tuple[str, str], dict[str, dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["model"]), {})[r["calibrator"]] = r
    lines = [
        "| dataset | model | " + " | ".join(calibrators) + " |",
        "|---|---|" + "---|" * len(calibrators),
    ]
    for (dataset, model), cells in groups.items():
        best = min(c["ece_mean"] for c in cells.values())
        out = []
        for name in calibrators:
            c = cells.get(name)
            if c is None:
                out.append("-")
                continue
            text = f"{c['ece_mean']:.2f} ± {c['ece_std']:.2f}"
            out.append(f"**{text}**" if c["ece_mean"] == best else text)
        lines.append(f"| {dataset} | {model} | " + " | ".join(out) + " |")
    lines.append("")
    lines.append("ECE x100 over test positives and negatives; bold marks the lowest mean ECE in each row (ties all bold).")
    return "\n".join(lines) + "\n"


def highlighted(markdown: str) -> list[list[str]]:
    """Calibrator names highlighted in each data row of a rendered report."""
    lines = [l for l in markdown.splitlines() if l.startswith("|")]
    header = [c.strip() for c in lines[0].strip("|").split("|")][2:]
    out = []
    for line in lines[2:]:
        cells = [c.strip() for c in line.strip("|").split("|")][2:]
        out.append([name for name, cell in zip(header, cells) if cell.startswith("**")])
    return out
