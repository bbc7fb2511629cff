import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgecal.data import generate_sbm
from edgecal.encoders import EncoderConfig, LinkPredictor, ScorerConfig
from edgecal.errors import ContractError, TrainingError
from edgecal.graph import split_edges
from edgecal.training import ScoredEdges, TrainConfig, accuracy, auc, hits_at_k, message_graph, train

from oracles import auc_pairwise, hits_bruteforce


def random_scored(rng, n):
    n_pos = int(rng.integers(1, n - 20))
    s = np.round(rng.normal(size=n), 1)  # coarse rounding forces ties
    y = np.r_[np.ones(n_pos), np.zeros(n - n_pos)]
    return s, y


def test_auc_and_hits_match_definitions():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s, y = random_scored(rng, int(rng.integers(25, 200)))
        assert auc(s, y) == pytest.approx(auc_pairwise(s, y), abs=1e-15)
        assert hits_at_k(s, y, 20) == hits_bruteforce(s, y, 20)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=30, max_size=80), st.integers(1, 9))
def test_rank_metrics_invariant_under_monotone_map(scores, n_pos):
    s = np.array(scores)
    y = np.r_[np.ones(n_pos), np.zeros(len(s) - n_pos)]
    t = s**3 + s
    assert auc(t, y) == auc(s, y)
    assert hits_at_k(t, y, 20) == hits_at_k(s, y, 20)


def test_metric_edge_cases():
    assert auc([3.0, 2.0, 1.0], [1, 0, 0]) == 1.0
    assert auc([1.0, 1.0], [1, 0]) == 0.5
    with pytest.raises(ContractError):
        auc([1.0, 2.0], [1, 1])
    with pytest.raises(ContractError):
        hits_at_k(np.arange(10.0), np.r_[np.ones(5), np.zeros(5)], 20)
    assert accuracy([1.0, -1.0, 0.0], [1, 0, 1]) == pytest.approx(200 / 3)


def test_scored_edges_invariants():
    s = np.array([-2.0, 0.0, 3.0])
    se = ScoredEdges(np.zeros((3, 2), dtype=np.int64), s, np.array([0, 1, 1]))
    np.testing.assert_allclose(se.prob, 1 / (1 + np.exp(-s)))
    np.testing.assert_array_equal(se.predicted, [0, 0, 1])
    hot = se.with_temperature(2.0)
    np.testing.assert_allclose(hot.calibrated, 1 / (1 + np.exp(-s / 2)))
    np.testing.assert_array_equal(hot.predicted, se.predicted)
    with pytest.raises(ContractError):
        se.with_temperature([1.0, 0.0, 1.0])
    iso = se.with_calibrated([0.1, 0.5, 0.9])
    assert iso.temperature is None and iso.confidence[2] == 0.9


@pytest.fixture(scope="module")
def small_problem():
    g, x = generate_sbm(2, 50, 0.2, 0.02, 8, seed=0)
    return g, x, split_edges(g, seed=0)


def test_message_graph_holds_only_training_edges(small_problem):
    g, _, split = small_problem
    mg = message_graph(g, split)
    assert mg.num_edges == len(split.train_pos)
    assert not any(mg.has_edge(u, v) for u, v in split.test_pos)


def test_training_improves_loss_and_is_deterministic(small_problem):
    g, x, split = small_problem
    model = LinkPredictor.initialize(EncoderConfig("gcn", 8, 2, 16, 8), ScorerConfig("hadamard", 8, 8), seed=0)
    cfg = TrainConfig(epochs=40, lr=0.01, seed=1)
    a = train(model, g, x, split, cfg)
    b = train(model, g, x, split, cfg)
    losses = [r["loss"] for r in a.history]
    assert losses[a.best_epoch - 1] < losses[0]
    assert a.best_val_auc == max(r["val_auc"] for r in a.history)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])


def test_last_checkpoint_rule(small_problem, tmp_path):
    g, x, split = small_problem
    model = LinkPredictor.initialize(EncoderConfig("sage", 8, 1, 8, 8), ScorerConfig("dot", 8), seed=0)
    res = train(model, g, x, split, TrainConfig(epochs=5, lr=0.01, checkpoint="last"))
    assert res.best_epoch == 5
    res.write_log(tmp_path / "log.jsonl")
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 5


def test_train_config_contracts():
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(neg_ratio=0)
    with pytest.raises(ContractError):
        TrainConfig(checkpoint="best_loss")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_error(small_problem):
    g, x, split = small_problem
    model = LinkPredictor.initialize(EncoderConfig("gcn", 8, 1, 8, 8), ScorerConfig("hadamard", 8, 8), seed=0)
    with pytest.raises(TrainingError, match="epoch 1"):
        train(model, g, x * np.inf, split, TrainConfig(epochs=3))
