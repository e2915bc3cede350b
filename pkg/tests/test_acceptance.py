"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints at the end
of the run. The directional checks (7 to 9) train real models and take minutes.
"""

import csv
import itertools
import time

import numpy as np
import pytest

import oracles
from conftest import make_request, record_acceptance
from gradcheck import FD_STEP, REL_TOL, fd_direction, fd_entry, flat_grad, relative_error, sampled_entries
from emer import ranknet
from emer.cli import run
from emer.domain import INTERACTION_OBJECTIVES, OBJECTIVES, FeedbackRecord
from emer.evalsuite import gauc, order_by, pairwise_auc, read_report_csv, session_replay
from emer.evolve import W_MAX, W_MIN, advantage_evaluator, compute_weights, rank_metric
from emer.losses import LossConfig, PairBatch, build_request_pairs, loss_from_scores, pairwise_logistic_loss, request_features, total_loss

WORKED = [(20.0, 0.8), (10.0, 0.7), (5.0, 0.4)]
DEFAULT_LOG = ["--users", "100", "--requests", "20", "--candidates", "500"]
ABLATION_LOG = ["--users", "100", "--requests", "20", "--candidates", "100"]
ABLATION_SEEDS = (1, 2, 3)
ABLATED = ("nocomp", "nopost", "noprior", "noevolve", "noiput")


def _ok(code, what):
    assert code == 0, f"{what} exited with {code}"


def test_criterion_01_worked_session_example():
    t = time.perf_counter()
    by_pxtr = session_replay(WORKED, order_by([p for _, p in WORKED]), 20.0)
    by_iput = session_replay(WORKED, order_by([p / s for s, p in WORKED]), 20.0)
    ms = (time.perf_counter() - t) * 1e3
    ok = by_pxtr == 0.8 and by_iput == 0.4 + 0.7 and round(by_iput, 12) == 1.1 and ms < 1.0
    record_acceptance(1, ok, f"pxtr order {by_pxtr}, IPUT order {by_iput}, {ms:.3f} ms")
    assert ok


def test_criterion_02_iput_order_is_replay_optimal():
    t = time.perf_counter()
    values = {p: session_replay(WORKED, list(p), 20.0) for p in itertools.permutations(range(3))}
    iput = session_replay(WORKED, order_by([p / s for s, p in WORKED]), 20.0)
    ms = (time.perf_counter() - t) * 1e3
    ok = iput == max(values.values()) and ms < 1.0
    record_acceptance(2, ok, f"IPUT {iput} vs best of 6 orderings {max(values.values())}, {ms:.3f} ms")
    assert ok


def _random_draw(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    exposed = np.zeros(n, dtype=bool)
    exposed[rng.choice(n, size=min(n, 6), replace=False)] = True
    names = ["like", "follow", "comment", "forward", "long_view"]
    fb = {}
    for i in np.flatnonzero(exposed):
        if rng.uniform() < 0.15:
            fb[int(i)] = FeedbackRecord(dislike=True, watch_time_s=1.0)
        else:
            fb[int(i)] = FeedbackRecord(**{m: bool(rng.uniform() < 0.4) for m in names}, watch_time_s=5.0)
    req = make_request(n=n, exposed=exposed, feedback=fb, seed=seed)
    params = ranknet.init(seed)
    for t in params.tensors.values():
        t += 0.05 * rng.normal(size=t.shape)
    weights = rng.uniform(W_MIN, W_MAX, size=8)
    return rng, req, params, weights


def test_criterion_03_gradients_match_finite_differences():
    # every tensor is probed each draw, plus one random direction through all 26081 parameters
    draws, worst, per_tensor = 100, 0.0, 4
    cfg = LossConfig()
    t = time.perf_counter()
    for seed in range(draws):
        rng, req, params, w = _random_draw(seed)
        assert params.n_params == 26081
        br, grads = total_loss(params, req, w, cfg, rng=seed)
        pairs = build_request_pairs(req, cfg, seed)
        x = request_features(req, cfg)

        def loss(p):
            return loss_from_scores(ranknet.forward(p, x), pairs, w, cfg)[0].total

        assert loss(params) == br.total
        for name, idx in sampled_entries(params, rng, per_tensor):
            worst = max(worst, float(relative_error(grads[name][idx], fd_entry(loss, params, name, idx))))
        d = rng.normal(size=params.n_params)
        d /= np.linalg.norm(d)
        worst = max(worst, float(relative_error(flat_grad(params, grads) @ d, fd_direction(loss, params, d))))
    secs = time.perf_counter() - t
    ok = worst < REL_TOL and secs < 60
    record_acceptance(3, ok, f"{draws} draws, max rel err {worst:.2e} (step {FD_STEP}), {secs:.1f} s")
    assert ok


def test_criterion_04_metric_oracles():
    rng = np.random.default_rng(4)
    worst = {"auc": 0.0, "hitrate": 0.0, "mean": 0.0, "dcg": 0.0}
    brute = {"hitrate": oracles.hitrate, "mean": oracles.mean_at_k, "dcg": oracles.dcg}
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        s = rng.integers(0, 5, size=n).astype(float)
        r = rng.integers(0, 5, size=n).astype(float)
        k = int(rng.integers(1, n + 1))
        worst["auc"] = max(worst["auc"], abs(pairwise_auc(s, r) - oracles.concordance(s.tolist(), r.tolist())))
        for kind, fn in brute.items():
            err = abs(rank_metric(kind, s, r, k) - fn(s.tolist(), r.tolist(), k))
            worst[kind] = max(worst[kind], err)
    g = gauc([(10, 0.8), (30, 0.6)])
    ok = max(worst.values()) <= 1e-12 and abs(g - 0.65) <= 1e-12
    record_acceptance(4, ok, f"1000 instances, max abs err {max(worst.values()):.1e}, gauc example {g:.12f}")
    assert ok


def test_criterion_05_loss_fixed_points():
    rng = np.random.default_rng(5)
    ln2_err, shift_err = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(2, 30))
        w = rng.integers(0, n, size=20)
        l = (w + rng.integers(1, n, size=20)) % n
        batch = PairBatch(w, l)
        ln2_err = max(ln2_err, abs(pairwise_logistic_loss(np.full(n, rng.normal()), batch)[0] - np.log(2)))
        s = rng.normal(size=n)
        base = pairwise_logistic_loss(s, batch)[0]
        shift_err = max(shift_err, abs(pairwise_logistic_loss(s + rng.uniform(-10, 10), batch)[0] - base))
    br, _ = total_loss(ranknet.init(0), make_request(n=20, seed=5), np.ones(8))
    ok = ln2_err <= 1e-12 and shift_err <= 1e-12 and br.posterior_loss == 0.0
    record_acceptance(5, ok, f"ln2 err {ln2_err:.1e}, translation err {shift_err:.1e}, posterior {br.posterior_loss}")
    assert ok


def test_criterion_06_advantage_evaluator_contract():
    req = make_request(n=100, seed=6)
    params = ranknet.init(1)
    same = compute_weights(req, params, params.copy()).as_array()
    other = compute_weights(req, params, ranknet.init(2)).as_array()
    grid = np.concatenate([[0.0], np.geomspace(1e-9, 1e3, 80)])
    table = np.array([[advantage_evaluator(p, c) for c in grid] for p in grid])
    monotone = bool(np.all(np.diff(table, axis=1) <= 0))
    bounded = bool(np.all((table >= W_MIN) & (table <= W_MAX)) and np.all((other >= W_MIN) & (other <= W_MAX)))
    ok = bool(np.all(same == 1.0)) and bounded and monotone
    record_acceptance(6, ok, f"identical snapshots -> 1.0: {np.all(same == 1.0)}, bounded {bounded}, monotone {monotone}")
    assert ok


# --- directional checks on trained models ------------------------------------------


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """gen -> tune -> train -> eval on the seeded default log, timed end to end."""
    d = tmp_path_factory.mktemp("default")
    t = time.perf_counter()
    _ok(run(["gen", *DEFAULT_LOG, "--seed", "0", "--out", str(d / "train.jsonl")]), "gen")
    _ok(run(["gen", "--users", "20", "--requests", "5", "--seed", "1000", "--out", str(d / "val.jsonl")]), "gen val")
    _ok(run(["tune", "--data", str(d / "val.jsonl"), "--out", str(d / "fusion.params")]), "tune")
    _ok(run(["train", "--data", str(d / "train.jsonl"), "--out", str(d / "full.ckpt"), "--seed", "0"]), "train")
    for model in ("fusion.params", "full.ckpt"):
        _ok(run(["eval", "--model", str(d / model), "--data", str(d / "train.jsonl"), "--out", str(d / f"{model}.csv")]), "eval")
    elapsed = time.perf_counter() - t
    return d, elapsed


def _gauc_rows(path, metric):
    rows = read_report_csv(path)
    return {o: float(rows[(o, metric)]) for o in OBJECTIVES if (o, metric) in rows}


def test_criterion_07_full_beats_tuned_fusion(default_run):
    d, elapsed = default_run
    ff = _gauc_rows(d / "fusion.params.csv", "gauc")
    full = _gauc_rows(d / "full.ckpt.csv", "gauc")
    wins = [o for o in OBJECTIVES if full[o] > ff[o]]
    ok = len(wins) >= 6 and elapsed < 15 * 60
    record_acceptance(7, ok, f"full wins {len(wins)}/8 ({', '.join(wins)}), end to end {elapsed / 60:.1f} min")
    assert ok


def _ablation_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return {r[0]: {n: float(v) if v else None for n, v in zip(names, r[1:])} for r in rows[1:]}


@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory):
    tables = {}
    for seed in ABLATION_SEEDS:
        d = tmp_path_factory.mktemp(f"ablate{seed}")
        _ok(run(["gen", *ABLATION_LOG, "--seed", str(seed), "--out", str(d / "log.jsonl")]), "gen")
        _ok(run(["ablate", "--data", str(d / "log.jsonl"), "--out-dir", str(d), "--seed", str(seed)]), "ablate")
        tables[seed] = _ablation_table(d / "ablation.csv")
    return tables


def test_criterion_08_ablations(ablation_runs):
    beat_all, lower_var = [], []
    for seed, t in ablation_runs.items():
        mean = t["mean_gauc"]
        if all(mean["full"] >= mean[v] for v in ABLATED):
            beat_all.append(seed)
        if t["loss_var_last500"]["full"] < t["loss_var_last500"]["noevolve"]:
            lower_var.append(seed)
    lines = []
    for seed, t in ablation_runs.items():
        mean = t["mean_gauc"]
        losers = [v for v in ABLATED if mean[v] > mean["full"]]
        lines.append(f"seed {seed}: full {mean['full']:.4f}, above full {losers or 'none'}")
    ok = len(beat_all) >= 2 and len(lower_var) >= 2
    detail = f"full >= all ablations on seeds {beat_all}; lower loss variance than noevolve on seeds {lower_var}"
    record_acceptance(8, ok, "; ".join([detail] + lines))
    assert ok


def test_criterion_09_iput_consistency(default_run):
    d, _ = default_run
    _ok(run(["train", "--data", str(d / "train.jsonl"), "--out", str(d / "noiput.ckpt"), "--seed", "0", "--variant", "noiput"]), "train")
    _ok(run(["eval", "--model", str(d / "noiput.ckpt"), "--data", str(d / "train.jsonl"), "--out", str(d / "noiput.csv")]), "eval")
    full = _gauc_rows(d / "full.ckpt.csv", "gauc_iput")
    noiput = _gauc_rows(d / "noiput.csv", "gauc_iput")
    lower = [o for o in INTERACTION_OBJECTIVES if noiput[o] < full[o]]
    ok = len(lower) == 4
    gaps = ", ".join(f"{o} {full[o] - noiput[o]:+.4f}" for o in INTERACTION_OBJECTIVES)
    record_acceptance(9, ok, f"noiput below full on {len(lower)}/4 IPUT objectives ({gaps})")
    assert ok


def test_criterion_10_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("EMER_SEED", raising=False)
    outputs = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        _ok(run(["gen", "--users", "10", "--requests", "5", "--candidates", "60", "--seed", "9", "--out", str(d / "log.jsonl")]), "gen")
        _ok(run(["train", "--data", str(d / "log.jsonl"), "--out", str(d / "m.ckpt"), "--trace", str(d / "t.csv"), "--seed", "9", "--steps", "60"]), "train")
        _ok(run(["eval", "--model", str(d / "m.ckpt"), "--data", str(d / "log.jsonl"), "--out", str(d / "r.csv")]), "eval")
        outputs.append([(d / f).read_bytes() for f in ("log.jsonl", "m.ckpt", "t.csv")])
        # the report names its input paths, which differ between the two workdirs
        outputs[-1].append(b"\n".join(l for l in (d / "r.csv").read_bytes().splitlines() if b",data," not in l and b",model," not in l))
    same = [x == y for x, y in zip(*outputs)]
    ok = all(same)
    record_acceptance(10, ok, f"log/checkpoint/trace/report identical: {same}")
    assert ok
