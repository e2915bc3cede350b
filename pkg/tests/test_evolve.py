import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import make_request
from emer import ranknet
from emer.evolve import (
    W_MAX,
    W_MIN,
    ObjectiveWeights,
    SnapshotPolicy,
    advantage_evaluator,
    compute_weights,
    parse_metric_kind,
    rank_metric,
    weights_from_scores,
)

ORACLE = {"hitrate": oracles.hitrate, "mean": oracles.mean_at_k, "dcg": oracles.dcg}


def test_rank_metric_examples():
    v = np.array([0.3, 0.9, 0.1, 0.5])
    for k in range(1, 5):
        assert rank_metric("hitrate", v, v, k) == 1.0
    s = np.array([0.0, 5.0, 1.0, 2.0])
    assert rank_metric("dcg", s, v, 1) == 0.9
    dcg = rank_metric("DCG@K", np.array([3.0, 2.0, 1.0]), np.array([1.0, 0.5, 0.25]), 3)
    assert dcg == pytest.approx(1.0 + 0.5 / np.log2(3) + 0.25 / 2, abs=1e-15)
    assert round(dcg, 6) == 1.440465
    assert rank_metric("MEAN@K", s, v, 2) == pytest.approx(0.7)
    with pytest.raises(ValueError, match="K=5"):
        rank_metric("dcg", s, v, 5)
    with pytest.raises(ValueError, match="unknown rank metric"):
        parse_metric_kind("ndcg")


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["hitrate", "mean", "dcg"]), st.integers(1, 12), st.integers(0, 2**31))
def test_rank_metrics_match_brute_force(kind, n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    s = rng.integers(0, 4, size=n).astype(float)  # ties exercise the index tie rule
    v = rng.integers(0, 5, size=n) / 4.0
    assert abs(rank_metric(kind, s, v, k) - ORACLE[kind](s.tolist(), v.tolist(), k)) <= 1e-12


def test_advantage_evaluator_examples():
    assert advantage_evaluator(0.7, 0.7) == 1.0
    assert advantage_evaluator(0.0, 0.0) == 1.0
    assert advantage_evaluator(0.5, 0.25) == 2.0
    assert advantage_evaluator(0.5, 0.0) == W_MAX == 10.0
    assert advantage_evaluator(0.0, 0.5) == W_MIN == 0.1
    with pytest.raises(ValueError):
        advantage_evaluator(-0.1, 0.5)


def test_advantage_evaluator_is_bounded_and_inverse_in_current_metric():
    grid = np.concatenate([[0.0], np.geomspace(1e-9, 1e3, 60)])
    for prev in grid:
        ws = [advantage_evaluator(prev, curr) for curr in grid]
        assert all(W_MIN <= w <= W_MAX for w in ws)
        assert all(a >= b for a, b in zip(ws, ws[1:]))


def test_objective_weights_contract():
    w = ObjectiveWeights.ones()
    assert w["pcmtr"] == 1.0 and set(w.as_dict()) >= {"pvtr", "pftr"}
    with pytest.raises(ValueError):
        ObjectiveWeights(np.r_[np.ones(7), 0.0])
    with pytest.raises(ValueError):
        w.w[0] = 3.0


def test_identical_snapshots_give_unit_weights():
    params = ranknet.init(3)
    req = make_request(n=40, seed=2)
    w = compute_weights(req, params, params.copy())
    assert np.all(w.as_array() == 1.0)


def test_single_candidate_gives_unit_weights():
    req = make_request(n=1, seed=2)
    w = compute_weights(req, ranknet.init(1), ranknet.init(2))
    assert np.all(w.as_array() == 1.0)


def test_perfect_current_ranking_downweights_its_objective():
    req = make_request(n=200, seed=4)
    rng = np.random.default_rng(0)
    for j in range(8):
        values = req.pxtrs[:, j]
        w = weights_from_scores(req, values, rng.normal(size=req.n), "dcg", 6, use_iput=False)
        assert w.as_array()[j] <= 1.0


def test_weights_ignore_objective_scale():
    req = make_request(n=60, seed=5)
    rng = np.random.default_rng(1)
    curr, prev = rng.normal(size=60), rng.normal(size=60)
    refs = req.pxtrs[:, 1]
    base = advantage_evaluator(rank_metric("dcg", prev, refs, 6), rank_metric("dcg", curr, refs, 6))
    scaled = advantage_evaluator(rank_metric("dcg", prev, 7.5 * refs, 6), rank_metric("dcg", curr, 7.5 * refs, 6))
    assert scaled == pytest.approx(base, rel=1e-12)


def test_weights_use_iput_references_for_interactions():
    # raw pltr prefers item 0, IPUT prefers item 2; the current model ranks item 2 first
    px = np.full((3, 8), 0.5)
    px[:, 0] = [20.0, 10.0, 5.0]
    px[:, 4] = [0.8, 0.7, 0.4]
    req = make_request(px)
    curr, prev = np.array([0.0, 1.0, 2.0]), np.array([2.0, 1.0, 0.0])
    w_iput = weights_from_scores(req, curr, prev, "dcg", 1, use_iput=True)
    w_raw = weights_from_scores(req, curr, prev, "dcg", 1, use_iput=False)
    assert w_iput["pltr"] < 1.0 < w_raw["pltr"]


def test_snapshot_policy_lag_bound():
    params = ranknet.init(0, d_model=4, n_layers=1, n_heads=1)
    snap = SnapshotPolicy(params, interval_steps=3)
    taken = []
    for step in range(1, 11):
        params.tensors["out.b"] += 1.0
        if snap.after_update(step, params):
            taken.append(step)
        snap.check(step)
        assert 0 <= snap.lag(step) < 3
    assert taken == [3, 6, 9]
    assert snap.previous_params.tensors["out.b"][0] == 9.0
    with pytest.raises(AssertionError):
        snap.check(100)
    with pytest.raises(ValueError):
        SnapshotPolicy(params, 0)
