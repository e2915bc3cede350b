from pathlib import Path

import numpy as np
import pytest

from conftest import make_request, pxtr_matrix
from emer import baseline
from emer.baseline import FusionParams, GridSpec, fusion_score, fusion_scores, load_params, save_params, tune
from emer.domain import OBJECTIVES
from emer.evalsuite import evaluate, order_by
from emer.synthlog import GeneratorConfig, generate_requests

DATA = Path(__file__).parent / "data"
GOLDEN_PXTRS = np.array(
    [
        [12.5, 0.3, 0.6, 0.05, 0.08, 0.02, 0.01, 0.005],
        [3.0, 0.1, 0.2, 0.01, 0.02, 0.001, 0.0, 0.0],
    ]
)
GOLDEN_SCORES = [4.1261055620399954e-08, 2.495631599999999e-13]


def _validation_log():
    return generate_requests(GeneratorConfig(n_users=8, requests_per_user=3, candidates_per_request=60, seed=2024))


def _exponents(**nonzero):
    return tuple(float(nonzero.get(o, 0.0)) for o in OBJECTIVES)


def test_zero_exponents_score_one():
    p = FusionParams((0.01,) * 8, _exponents())
    req = make_request(n=20, seed=1)
    assert np.all(fusion_scores(p, req.pxtrs) == 1.0)
    assert fusion_score(p, req.candidates[3]) == 1.0


def test_single_exponent_reproduces_that_ranking():
    p = FusionParams((0.01,) * 8, _exponents(pctr=1.0))
    req = make_request(n=50, seed=2)
    assert order_by(fusion_scores(p, req.pxtrs)) == order_by(req.column("pctr"))


def test_score_is_product_of_shifted_powers():
    p = FusionParams(tuple(np.linspace(0.001, 0.1, 8)), (1.0, 0.5, 2.0, 0.0, 1.0, 1.0, 0.5, 2.0))
    row = GOLDEN_PXTRS[0]
    expected = np.prod((row + np.array(p.bias)) ** np.array(p.exponent))
    assert fusion_scores(p, row[None, :])[0] == pytest.approx(expected, rel=1e-12)


def test_score_is_monotone_in_each_pxtr():
    p = FusionParams.neutral()
    base = fusion_scores(p, GOLDEN_PXTRS)
    for k in range(8):
        bumped = GOLDEN_PXTRS.copy()
        bumped[:, k] *= 1.5
        bumped[:, k] += 1e-3
        assert np.all(fusion_scores(p, bumped) > base)


def test_rescaling_one_pxtr_keeps_the_ranking_when_bias_scales_too():
    req = make_request(n=40, seed=3)
    p = FusionParams.neutral(0.01)
    px = req.pxtrs.copy()
    px[:, 0] *= 4.0
    scaled = FusionParams((0.04,) + p.bias[1:], p.exponent)
    assert order_by(fusion_scores(scaled, px)) == order_by(fusion_scores(p, req.pxtrs))


def test_params_validation():
    with pytest.raises(ValueError):
        FusionParams((0.0,) * 8, (1.0,) * 8)
    with pytest.raises(ValueError):
        FusionParams((0.01,) * 8, (-1.0,) + (1.0,) * 7)
    with pytest.raises(ValueError):
        FusionParams((0.01,) * 7, (1.0,) * 7)


def test_params_file_round_trip_and_errors(tmp_path):
    p = FusionParams(tuple(np.linspace(0.001, 0.1, 8)), (0.0, 0.5, 1.0, 2.0) * 2)
    save_params(p, tmp_path / "f.params")
    assert load_params(tmp_path / "f.params") == p
    with pytest.raises(FileNotFoundError, match="nope.params"):
        load_params(tmp_path / "nope.params")
    lines = (tmp_path / "f.params").read_text().splitlines()
    (tmp_path / "short.params").write_text("\n".join(lines[:-1]))
    with pytest.raises(ValueError, match="missing"):
        load_params(tmp_path / "short.params")
    (tmp_path / "bad.params").write_text("\n".join(lines[:-1] + ["pftr.exponent = lots"]))
    with pytest.raises(ValueError, match="16"):
        load_params(tmp_path / "bad.params")


def test_tuning_is_deterministic_and_reproduces_golden_params():
    val = _validation_log()
    first, history = tune(val)
    second, _ = tune(val)
    assert first == second == load_params(DATA / "fusion_tuned.params")
    gains = [h["mean_gauc"] for h in history]
    assert all(b > a for a, b in zip(gains, gains[1:]))


def test_golden_fusion_scores():
    p = load_params(DATA / "fusion_tuned.params")
    np.testing.assert_allclose(fusion_scores(p, GOLDEN_PXTRS), GOLDEN_SCORES, rtol=1e-12)


def test_tuning_terminates_with_a_constant_objective():
    reqs = generate_requests(GeneratorConfig(n_users=3, requests_per_user=2, candidates_per_request=20, seed=4))
    flat = []
    for r in reqs:
        px = r.pxtrs.copy()
        px[:, OBJECTIVES.index("pcpr")] = 0.3
        flat.append(make_request(px, request_id=r.request_id, user_id=r.user_id))
    p, history = tune(flat, GridSpec(sweeps=3))
    assert len(history) >= 1
    assert isinstance(p, FusionParams)


def test_noise_free_log_gives_informative_baseline():
    reqs = generate_requests(
        GeneratorConfig(n_users=10, requests_per_user=2, candidates_per_request=60, noise_sigma=0.0, seed=6)
    )
    p, _ = tune(reqs, GridSpec(sweeps=1))
    rep = evaluate(baseline.scorer(p), reqs)
    assert all(v > 0.5 for v in rep.per_objective_gauc.values())


def test_tune_rejects_empty_log():
    with pytest.raises(ValueError):
        tune([])


def test_pxtr_matrix_fallback_is_bias_safe():
    # zero-valued interaction pxtrs stay finite thanks to the positive bias
    px = pxtr_matrix({"pftr": [0.0, 0.0]}, 2)
    assert np.all(np.isfinite(baseline.log_fusion_scores(FusionParams.neutral(), px)))
