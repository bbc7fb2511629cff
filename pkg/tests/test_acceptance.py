"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale reproduction (criteria 7-9) trains GCN and GIN on five seeds
each. Results are cached under ``acceptance_runs/`` (or
``$EDGECAL_ACCEPTANCE_DIR``) and reused only when the cached config matches
the one below exactly; set ``EDGECAL_ACCEPTANCE_FRESH=1`` to force a rerun.
"""
import json
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from edgecal import baselines as B
from edgecal import experiment as ex
from edgecal import tensor as T
from edgecal.data import generate_sbm
from edgecal.encoders import EncoderConfig, LinkPredictor, ScorerConfig, encode
from edgecal.graph import toggle_edge
from edgecal.innout import CounterfactualEncoder, InNOutConfig
from edgecal.metrics import bin_index, calibration_loss, ece
from edgecal.tensor import Tape, Tensor, backward
from edgecal.training import ScoredEdges, TrainConfig, auc, hits_at_k

from oracles import auc_pairwise, central_difference, ece_bruteforce, hits_bruteforce, isotonic_pooling, rel_error

ACCEPT_DIR = Path(os.environ.get("EDGECAL_ACCEPTANCE_DIR", Path(__file__).resolve().parent.parent / "acceptance_runs"))
SEEDS = (0, 1, 2, 3, 4)
# tuned per-encoder hyperparameters for the desk runs
DESK = {
    "gcn": {"encoder": {"variant": "gcn", "hidden": 32, "out": 16}, "train": {"epochs": 400, "lr": 0.001}},
    "gin": {"encoder": {"variant": "gin", "hidden": 64, "out": 16}, "train": {"epochs": 1000, "lr": 0.01}},
}


# ---------------------------------------------------------------- criterion 1


def test_c01_ece_matches_bruteforce(verdict):
    rng = np.random.default_rng(101)
    sets = []
    for _ in range(100):
        c = rng.random(1000)
        c[rng.random(1000) < 0.02] = rng.integers(0, 16, size=1) / 15  # exact bin boundaries
        sets.append((c, (rng.random(1000) < c).astype(float)))
    start = time.perf_counter()
    worst = max(abs(ece(c, y) - ece_bruteforce(c, y)) for c, y in sets)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5.0
    verdict(1, ok, f"max |diff| {worst:.2e} over 100 sets of 1000, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- criterion 2


def fd_check(loss_fn, arrays):
    tape = Tape()
    leaves = [tape.watch(a, f"x{i}") for i, a in enumerate(arrays)]
    grads = backward(loss_fn(*leaves), tape)
    worst = 0.0
    for i, a in enumerate(arrays):

        def f(x, i=i):
            args = [Tensor(b) for b in arrays]
            args[i] = Tensor(x)
            return loss_fn(*args).item()

        worst = max(worst, rel_error(grads[f"x{i}"], central_difference(f, a.copy())))
    return worst


def smooth(rng, shape, positive=False):
    x = rng.uniform(0.2, 2.0, size=shape)
    return x if positive else x * rng.choice([-1, 1], size=shape)


def gradient_cases(rng):
    """(name, loss_fn, arrays) for one random instance of every primitive."""
    w = rng.normal(size=(3, 4))
    m = sp.random(5, 3, density=0.6, random_state=int(rng.integers(1 << 30)), format="csr")
    idx, seg = rng.integers(0, 3, size=6), rng.integers(0, 2, size=3)
    a, b, pos = smooth(rng, (3, 4)), smooth(rng, (3, 4)), smooth(rng, (3, 4), True)
    gap = a + rng.choice([-0.5, 0.5], size=a.shape)
    row = smooth(rng, (1, 4))
    cases = [(name, (lambda x, fn=fn: T.sum(fn(x) * w)), [pos if name in ("log", "sqrt") else a])
             for name, fn in [("sigmoid", T.sigmoid), ("softplus", T.softplus), ("relu", T.relu), ("log", T.log),
                              ("exp", T.exp), ("sqrt", T.sqrt), ("abs", T.abs), ("neg", T.neg)]]
    cases += [
        ("add", lambda x, y: T.sum(T.add(x, y) * w), [a, row]),
        ("sub", lambda x, y: T.sum(T.sub(x, y) * w), [a, row]),
        ("mul", lambda x, y: T.sum(T.mul(x, y) * w), [a, row]),
        ("div", lambda x, y: T.sum(T.div(x, y) * w), [a, pos]),
        ("minimum", lambda x, y: T.sum(T.minimum(x, y) * w), [a, gap]),
        ("maximum", lambda x, y: T.sum(T.maximum(x, y) * w), [a, gap]),
        ("matmul", lambda x, y: T.sum(T.matmul(x, y) * rng_fixed(3, 2)), [a, smooth(rng, (4, 2))]),
        ("spmm", lambda x: T.sum(T.spmm(m, x) * 1.3), [smooth(rng, (3, 2))]),
        ("sum", lambda x: T.sum(T.sum(x, axis=0) * np.arange(4.0)), [a]),
        ("mean", lambda x: T.mean(x * x), [a]),
        ("concat", lambda x, y: T.sum(T.concat([x, y], axis=1) * np.arange(8.0)), [a, b]),
        ("take_rows", lambda x: T.sum(T.take_rows(x, idx) * rng_fixed(6, 4)), [a]),
        ("segment_sum", lambda x: T.sum(T.abs(T.segment_sum(x, seg, 2) + 9.0)), [a]),
    ]
    return cases


def rng_fixed(r, c):
    return np.arange(r * c, dtype=np.float64).reshape(r, c) / (r * c)


def loss_cases(rng):
    n = 30
    s, y = rng.normal(size=n) * 2, rng.integers(0, 2, n).astype(float)
    t0 = rng.uniform(0.5, 2.0, size=(n, 1))
    sc, yc = s.reshape(-1, 1), y.reshape(-1, 1)

    def nll(t):
        z = T.div(sc, t)
        return T.sum(T.softplus(z) - yc * z)

    def lcal(t):
        return T.mean(-(2.0 * yc - 1.0) * T.sigmoid(T.div(sc, t)))

    def full(t):
        return calibration_loss(s, t, y, 1.5)[0]

    bins = bin_index(1 / (1 + np.exp(-s / t0[:, 0])))
    return [("loss.nll", nll, t0), ("loss.cal", lcal, t0), ("loss.total", full, t0)], s, bins


def test_c02_gradients_match_finite_differences(verdict):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst, counts = {}, {}
    while min(counts.values(), default=0) < 20:
        for name, fn, arrays in gradient_cases(rng):
            worst[name] = max(worst.get(name, 0.0), fd_check(fn, arrays))
            counts[name] = counts.get(name, 0) + 1
        cases, s, bins = loss_cases(rng)
        for name, fn, t0 in cases:
            # probes must not move any probability across a bin edge (binning is held fixed)
            def frozen(t, fn=fn):
                if not np.array_equal(bin_index(1 / (1 + np.exp(-s / t[:, 0]))), bins):
                    return np.nan
                return fn(Tensor(t)).item()

            numeric = central_difference(frozen, t0.copy(), eps=1e-7)
            if not np.all(np.isfinite(numeric)):
                continue
            tape = Tape()
            g = backward(fn(tape.watch(t0, "t")), tape)["t"]
            worst[name] = max(worst.get(name, 0.0), rel_error(g, numeric))
            counts[name] = counts.get(name, 0) + 1
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-4 and elapsed < 30.0
    verdict(2, ok, f"{len(worst)} primitives/losses x >=20 instances, worst rel {worst[top]:.1e} ({top}), {elapsed:.1f}s")
    assert ok, worst


# ---------------------------------------------------------------- criterion 3


def small_config(out, variant, seeds=(0,), calibrators=("temp", "innout", "embmlp")):
    return ex.ExperimentConfig(
        dataset={"kind": "sbm", "blocks": 2, "nodes_per_block": 80, "p_in": 0.15, "p_out": 0.015, "feature_dim": 8},
        encoder=EncoderConfig(variant, in_dim=8, layers=2, hidden=16, out=8),
        scorer=ScorerConfig("hadamard", 8, 8),
        train=TrainConfig(epochs=60, lr=0.01),
        innout=InNOutConfig(epochs=150, lam_grid=(0.5, 2.0)),
        calibrators=calibrators,
        seeds=seeds,
        out=str(out),
    )


def test_c03_sign_preservation(tmp_path, verdict):
    checked, failures = 0, []
    for variant in ("gcn", "gin", "sage"):
        for seed in (0, 1):
            config = small_config(tmp_path / variant, variant)
            ctx, _ = ex.train_stage(config, seed)
            cf = ctx.counterfactual()
            fitted = ex.calibrate_stage(ctx, cf)
            test = ex.labeled_sets(ctx)["test"]
            raw = ScoredEdges(test.edges, cf.logits(test.edges), test.labels)
            for name, cal in fitted.items():
                post = ex.apply_calibrator(name, cal, cf, raw)
                same = np.array_equal(post.predicted, raw.predicted) and post.accuracy() == raw.accuracy()
                if name == "temp":
                    same = same and post.auc() == raw.auc() and post.hits(20) == raw.hits(20)
                if not same:
                    failures.append(f"{variant}/{seed}/{name}")
                checked += 1
    ok = not failures
    verdict(3, ok, f"{checked} calibrated test sets (gcn, gin, sage x 2 seeds x temp, emb-mlp, innout)"
            + (f"; broken: {failures}" if failures else ""))
    assert ok


# ---------------------------------------------------------------- criterion 4


def test_c04_localized_counterfactual_equivalence(verdict):
    start = time.perf_counter()
    worst, count = 0.0, 0
    for graph_seed in range(5):
        g, x = generate_sbm(2, 50, 0.12, 0.02, 6, seed=100 + graph_seed)
        rng = np.random.default_rng(graph_seed)
        existing = g.edges()
        for variant in ("gcn", "gin", "sage"):
            for layers in (1, 2):
                model = LinkPredictor.initialize(EncoderConfig(variant, 6, layers, 8, 5), ScorerConfig("hadamard", 5, 6),
                                                 seed=graph_seed)
                if variant == "gin":
                    model.params = {k: v + 0.25 if ".eps" in k else v for k, v in model.params.items()}
                cf = CounterfactualEncoder(model, g, x)
                enc, _ = model.split_params()
                for i in range(100):
                    if i % 2:
                        u, v = (int(t) for t in existing[rng.integers(len(existing))])
                    else:
                        u, v = (int(t) for t in rng.choice(g.n, 2, replace=False))
                    full = encode(model.encoder, enc, toggle_edge(g, u, v), x).data
                    worst = max(worst, float(np.max(np.abs(cf.toggled_embeddings(u, v) - full))))
                    count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and count == 3000 and elapsed < 60.0
    verdict(4, ok, f"{count} toggled edges, max |diff| {worst:.1e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- criterion 5


def test_c05_pava_matches_pooling_oracle(verdict):
    rng = np.random.default_rng(105)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 13))  # the fit needs two samples
        c = rng.integers(0, 6, size=n) / 5.0 if rng.random() < 0.5 else rng.random(n)
        y = rng.integers(0, 2, size=n)
        fit = B.fit_isotonic(c, y)
        xs, vals = isotonic_pooling(c, y)
        same = np.array_equal(fit.params["x"], xs) and np.array_equal(fit.params["values"], vals)
        same = same and np.array_equal(fit.predict(xs), vals)
        mismatches += not same
    ok = mismatches == 0
    verdict(5, ok, f"200 draws of size 2-12, {mismatches} mismatches")
    assert ok


# ---------------------------------------------------------------- criterion 6


def test_c06_rank_metrics_match_definitions(verdict):
    rng = np.random.default_rng(106)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(25, 201))
        n_pos = int(rng.integers(1, n - 20))
        s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))  # rounding forces ties
        y = rng.permutation(np.r_[np.ones(n_pos), np.zeros(n - n_pos)])
        t = s**3 + s
        bad += auc(s, y) != auc_pairwise(s, y)
        bad += hits_at_k(s, y, 20) != hits_bruteforce(s, y, 20)
        bad += auc(t, y) != auc(s, y)
        bad += hits_at_k(t, y, 20) != hits_at_k(s, y, 20)
    ok = bad == 0
    verdict(6, ok, f"100 scored sets of <= 200 edges, {bad} inexact results")
    assert ok


# ---------------------------------------------------------------- criteria 7-9


def desk_config(variant, out):
    doc = {**DESK[variant], "calibrators": ["temp", "innout"], "seeds": list(SEEDS), "out": str(out)}
    return ex.ExperimentConfig.from_dict(doc)


def cached(config):
    out = Path(config.out)
    try:
        saved = json.loads((out / "config.json").read_text())
        log = [json.loads(l) for l in (out / "run_log.jsonl").read_text().splitlines()]
    except (OSError, ValueError):
        return False
    want = {**config.to_dict(), "out": None}
    return ({**saved, "out": None} == want and len(log) == len(SEEDS)
            and all((out / f"seed_{s}" / "run.json").exists() for s in SEEDS))


@pytest.fixture(scope="module")
def desk_runs():
    runs = {}
    for variant in DESK:
        config = desk_config(variant, ACCEPT_DIR / variant)
        if os.environ.get("EDGECAL_ACCEPTANCE_FRESH") or not cached(config):
            ex.run_experiment(config)
        per_seed = {}
        for s in SEEDS:
            path = ACCEPT_DIR / variant / f"seed_{s}" / "run.json"
            if path.exists():
                per_seed[s] = {r["calibrator"]: r for r in json.loads(path.read_text())["records"]}
        runs[variant] = per_seed
    return runs


def column(per_seed, calibrator, key):
    return np.array([per_seed[s][calibrator][key] for s in sorted(per_seed)])


@pytest.mark.slow
def test_c07_innout_lowers_ece(desk_runs, verdict):
    parts, ok = [], True
    for variant, per_seed in desk_runs.items():
        if len(per_seed) != len(SEEDS):
            ok = False
            parts.append(f"{variant}: only {len(per_seed)}/5 seeds completed")
            continue
        inn, raw, temp = (column(per_seed, c, "ece") for c in ("innout", "uncalibrated", "temp"))
        a = inn.mean() < raw.mean()
        wins = int(np.sum(inn <= temp))
        ok &= a and (variant != "gcn" or wins >= 3)
        parts.append(f"{variant}: ECE innout {inn.mean():.2f} vs uncal {raw.mean():.2f} vs temp {temp.mean():.2f}, "
                     f"innout<=temp in {wins}/5")
    verdict(7, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c08_hits_not_destroyed(desk_runs, verdict):
    parts, ok = [], True
    for variant, per_seed in desk_runs.items():
        inn, raw = column(per_seed, "innout", "hits20"), column(per_seed, "uncalibrated", "hits20")
        ok &= bool(len(inn)) and inn.mean() >= raw.mean() - 2.0
        parts.append(f"{variant}: Hits@20 innout {inn.mean():.2f} vs uncal {raw.mean():.2f}")
    verdict(8, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c09_overconfident_positive_side(desk_runs, verdict):
    gaps = column(desk_runs["gcn"], "uncalibrated", "gap_above")
    negative = int(np.sum(gaps < 0))
    detail = f"GCN uncalibrated gap above 0.5 negative in {negative}/5 seeds ({', '.join(f'{g:+.3f}' for g in gaps)})"
    if negative >= 3:
        verdict(9, True, detail)
        return
    diagrams = sorted(str(p) for p in (ACCEPT_DIR / "gcn").glob("seed_*/reliability/temp_pre.svg"))
    verdict(9, "WARN (soft)", detail + f"; diagrams: {ACCEPT_DIR / 'gcn'}/seed_*/reliability/")
    warnings.warn(f"miscalibration pattern not reproduced: {detail}; see {diagrams}", stacklevel=1)


# ---------------------------------------------------------------- criterion 10


def test_c10_run_is_deterministic(tmp_path, verdict):
    tables = []
    for attempt in ("a", "b"):
        config = small_config(tmp_path / attempt, "gcn", seeds=(0, 1), calibrators=ex.CALIBRATORS)
        ex.run_experiment(config)
        tables.append((tmp_path / attempt / "results.csv").read_bytes())
    rows = len(tables[0].splitlines()) - 1
    ok = tables[0] == tables[1] and rows == len(ex.CALIBRATORS) + 1
    verdict(10, ok, f"two runs, 2 seeds x {rows} rows: {'bit-identical' if tables[0] == tables[1] else 'DIFFERENT'}")
    assert ok
