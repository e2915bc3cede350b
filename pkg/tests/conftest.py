import numpy as np
import pytest

from emer.domain import N_OBJECTIVES, OBJECTIVES, FeedbackRecord, Request
from emer.synthlog import GeneratorConfig, generate_requests


def make_request(
    pxtrs=None,
    n=None,
    exposed=None,
    feedback=None,
    item_ids=None,
    request_id="r0",
    user_id="u0",
    seed=0,
):
    """Build a valid Request; missing pieces are filled with seeded random values."""
    rng = np.random.default_rng(seed)
    if pxtrs is None:
        n = n or 8
        pxtrs = rng.uniform(0.01, 0.99, size=(n, N_OBJECTIVES))
        pxtrs[:, 0] = rng.uniform(1.0, 60.0, size=n)
    pxtrs = np.asarray(pxtrs, dtype=np.float64)
    n = pxtrs.shape[0]
    if exposed is None:
        exposed = np.zeros(n, dtype=bool)
    exposed = np.asarray(exposed, dtype=bool)
    if feedback is None:
        feedback = {int(i): FeedbackRecord(watch_time_s=1.0) for i in np.flatnonzero(exposed)}
    if item_ids is None:
        item_ids = tuple(f"i{k:03d}" for k in range(n))
    return Request(request_id, user_id, 1_700_000_000, item_ids, pxtrs, exposed, feedback)


def pxtr_matrix(columns, n):
    """(n, 8) matrix with neutral defaults and the named columns overridden."""
    out = np.full((n, N_OBJECTIVES), 0.5)
    out[:, 0] = 10.0
    for name, values in columns.items():
        out[:, OBJECTIVES.index(name)] = values
    return out


@pytest.fixture
def request_factory():
    return make_request


@pytest.fixture(scope="session")
def small_log():
    return generate_requests(GeneratorConfig(n_users=4, requests_per_user=3, candidates_per_request=20, seed=3))


# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
