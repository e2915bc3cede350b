"""Reproducible synthetic request logs with a hidden ground truth.

World model, per request of a user:

* every user has a 16-d taste vector and one behaviour propensity in [0, 1]
  per objective; items come from a fixed pool with a 16-d embedding, a
  duration, a base quality and one idiosyncratic factor per objective;
* engagement ``z = taste . item / 4 + quality`` drives all eight latent true
  values; watch-type objectives mix in the item duration (long videos are
  watched longer and completed less often), interaction objectives are
  per-second rates accumulated over the true watch time, so raw interaction
  probabilities are confounded by watch time;
* each pxtr is the true value pushed through a per-user calibration and noise,
  ``sigmoid(a * logit(p) + c + sigma * N(0,1))`` with user/objective slope ``a``
  and offset ``c`` (pvtr: ``t * exp(sigma * N(0,1))``), rounded to 9
  significant digits (truth and watch times to 6);
* exposure is the top ``exposure_k`` by pctr alone, a deliberately
  suboptimal policy; exposed candidates receive Bernoulli feedback at the
  true probabilities and a Gamma watch time whose mean is the true watch time.

The truth never enters the training log; :func:`write_truth` emits it as a
separate sidecar keyed by request_id and item_id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, NamedTuple, Sequence

import numpy as np

from emer.domain import (
    INTERACTION_OBJECTIVES,
    N_OBJECTIVES,
    OBJECTIVE_INDEX,
    OBJECTIVES,
    PVTR_INDEX,
    FeedbackRecord,
    Request,
)

TASTE_DIM = 16
PVTR_MIN_S = 1.0
PVTR_MAX_S = 120.0
BASE_TIMESTAMP = 1_700_000_000
SIG_DIGITS = 6
# finer than the truth so a compressive calibration cannot merge distinct true values
PXTR_SIG_DIGITS = 9

# per-second interaction intensity at full propensity, keyed by objective
_INTERACTION_RATE = {"pltr": 0.012, "pwtr": 0.0025, "pcmtr": 0.002, "pftr": 0.0018}
_INTERACTION_LOADING = {"pltr": 1.3, "pwtr": 1.1, "pcmtr": 1.2, "pftr": 1.0}
_DISLIKE_RATE = 0.08
CALIBRATION_LOG_SLOPE_SD = 0.35
CALIBRATION_OFFSET_SD = 0.5

LOG_FIELDS = ("request_id", "user_id", "ts", "candidates")
CANDIDATE_FIELDS = ("item_id", "exposed", "pxtrs", "feedback")
FEEDBACK_FIELDS = ("like", "follow", "comment", "forward", "long_view", "dislike", "watch_time_s")


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int
    requests_per_user: int
    candidates_per_request: int = 500
    exposure_k: int = 6
    seed: int = 0
    noise_sigma: float = 0.15
    item_pool: int = 0  # 0 -> max(5000, 4 * candidates_per_request)

    def __post_init__(self):
        for name in ("n_users", "requests_per_user", "candidates_per_request", "exposure_k"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.exposure_k > self.candidates_per_request:
            raise ValueError(
                f"exposure_k={self.exposure_k} exceeds candidates_per_request={self.candidates_per_request}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ValueError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if self.item_pool < 0:
            raise ValueError("item_pool must be >= 0")

    @property
    def pool_size(self) -> int:
        return max(self.item_pool or max(5000, 4 * self.candidates_per_request), self.candidates_per_request)


@dataclass(frozen=True)
class LatentProfile:
    """Hidden per-user state.

    ``calibration_slope``/``calibration_offset`` distort the upstream
    predictions for this user in logit space (a monotone map per objective,
    identity for pvtr), so pxtr scales are not comparable across users.
    """

    user_taste: np.ndarray
    behavior_propensity: dict
    calibration_slope: np.ndarray
    calibration_offset: np.ndarray


class Sample(NamedTuple):
    request: Request
    truth: np.ndarray  # (n, 8) latent true values, pxtr column order


def round_sig(x, digits: int = SIG_DIGITS) -> np.ndarray:
    """Round to ``digits`` significant digits (zeros stay zero)."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        mag = np.floor(np.log10(np.abs(np.where(x == 0, 1.0, x))))
    factor = 10.0 ** (digits - 1 - mag)
    return np.round(x * factor) / factor


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


def _profile(rng: np.random.Generator) -> LatentProfile:
    taste = rng.normal(size=TASTE_DIM)
    prop = rng.beta(2.0, 2.0, size=N_OBJECTIVES)
    slope = np.exp(rng.normal(0.0, CALIBRATION_LOG_SLOPE_SD, size=N_OBJECTIVES))
    offset = rng.normal(0.0, CALIBRATION_OFFSET_SD, size=N_OBJECTIVES)
    slope[PVTR_INDEX], offset[PVTR_INDEX] = 1.0, 0.0
    return LatentProfile(taste, {o: float(prop[k]) for k, o in enumerate(OBJECTIVES)}, slope, offset)


def latent_truth(profile: LatentProfile, emb, duration, quality, factors) -> np.ndarray:
    """True objective values for items seen by one user, ``(n, 8)``."""
    prop = profile.behavior_propensity
    z = emb @ profile.user_taste / 4.0 + quality
    log_len = np.log(duration / 20.0)
    col = {o: factors[:, OBJECTIVE_INDEX[o]] for o in OBJECTIVES}
    out = np.empty((len(z), N_OBJECTIVES))

    completion = _sigmoid(0.9 * z + 0.4 * col["pvtr"] - 0.6 * log_len + (prop["pvtr"] - 0.5))
    watch = np.clip(duration * completion, PVTR_MIN_S, PVTR_MAX_S)
    out[:, OBJECTIVE_INDEX["pvtr"]] = watch
    out[:, OBJECTIVE_INDEX["pctr"]] = _sigmoid(z + 0.6 * col["pctr"] - 0.3 + (prop["pctr"] - 0.5))
    out[:, OBJECTIVE_INDEX["plvtr"]] = _sigmoid(
        0.8 * z + 0.9 * log_len + 0.6 * col["plvtr"] - 1.0 + (prop["plvtr"] - 0.5)
    )
    out[:, OBJECTIVE_INDEX["pcpr"]] = _sigmoid(
        0.8 * z - 1.2 * log_len + 0.6 * col["pcpr"] + (prop["pcpr"] - 0.5)
    )
    for o in INTERACTION_OBJECTIVES:
        rate = _INTERACTION_RATE[o] * (0.2 + 1.6 * prop[o])
        rate = rate * 2.0 * _sigmoid(_INTERACTION_LOADING[o] * z + 0.8 * col[o] - 1.5)
        out[:, OBJECTIVE_INDEX[o]] = -np.expm1(-rate * watch)
    return out


def _observe(truth: np.ndarray, profile: LatentProfile, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Upstream prediction: user-calibrated, noisy monotone transform of the truth."""
    xi = rng.normal(size=truth.shape)
    out = _sigmoid(profile.calibration_slope * _logit(truth) + profile.calibration_offset + sigma * xi)
    out[:, PVTR_INDEX] = np.clip(truth[:, PVTR_INDEX] * np.exp(sigma * xi[:, PVTR_INDEX]), PVTR_MIN_S, PVTR_MAX_S)
    return out


def _feedback(truth_row: np.ndarray, rng: np.random.Generator) -> FeedbackRecord:
    u = rng.random(6)
    t = truth_row[PVTR_INDEX]
    like, follow, comment, forward = (
        bool(u[i] < truth_row[OBJECTIVE_INDEX[o]]) for i, o in enumerate(INTERACTION_OBJECTIVES)
    )
    long_view = bool(u[4] < truth_row[OBJECTIVE_INDEX["plvtr"]])
    any_positive = like or follow or comment or forward or long_view
    dislike = (not any_positive) and bool(u[5] < _DISLIKE_RATE * (1.0 - truth_row[OBJECTIVE_INDEX["pctr"]]))
    watch = float(round_sig(rng.gamma(2.0, t / 2.0)))
    return FeedbackRecord(like, follow, comment, forward, long_view, dislike, watch)


def generate(cfg: GeneratorConfig) -> Iterator[Sample]:
    """Yield ``cfg.n_users * cfg.requests_per_user`` samples, users in order."""
    rng = np.random.default_rng(int(cfg.seed))
    pool = cfg.pool_size
    emb = rng.normal(size=(pool, TASTE_DIM))
    duration = np.clip(np.exp(rng.normal(np.log(20.0), 0.5, size=pool)), 3.0, 150.0)
    quality = rng.normal(0.0, 0.7, size=pool)
    factors = rng.normal(size=(pool, N_OBJECTIVES))
    n, k = cfg.candidates_per_request, cfg.exposure_k

    for u in range(cfg.n_users):
        profile = _profile(rng)
        for r in range(cfg.requests_per_user):
            items = rng.choice(pool, size=n, replace=False)
            truth = round_sig(latent_truth(profile, emb[items], duration[items], quality[items], factors[items]))
            pxtrs = round_sig(_observe(truth, profile, cfg.noise_sigma, rng), PXTR_SIG_DIGITS)
            exposed_idx = np.argsort(-pxtrs[:, OBJECTIVE_INDEX["pctr"]], kind="stable")[:k]
            exposed = np.zeros(n, dtype=bool)
            exposed[exposed_idx] = True
            feedback = {int(i): _feedback(truth[i], rng) for i in sorted(exposed_idx)}
            seq = u * cfg.requests_per_user + r
            request = Request(
                request_id=f"r{seq:07d}",
                user_id=f"u{u:05d}",
                timestamp=BASE_TIMESTAMP + 60 * seq,
                item_ids=tuple(f"v{int(i):06d}" for i in items),
                pxtrs=pxtrs,
                exposed=exposed,
                feedback=feedback,
            )
            yield Sample(request, truth)


def generate_requests(cfg: GeneratorConfig) -> List[Request]:
    return [s.request for s in generate(cfg)]


# --- log file ---------------------------------------------------------------


class LogFormatError(ValueError):
    """A log line could not be parsed; names the 1-based line and the field."""

    def __init__(self, line_no: int, field: str, message: str):
        super().__init__(f"line {line_no}: field {field!r}: {message}")
        self.line_no = line_no
        self.field = field


def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2**53 else x


def request_to_record(req: Request) -> dict:
    cands = []
    for i in range(req.n):
        fb = req.feedback.get(i)
        cands.append(
            {
                "item_id": req.item_ids[i],
                "exposed": bool(req.exposed[i]),
                "pxtrs": {o: _num(req.pxtrs[i, k]) for k, o in enumerate(OBJECTIVES)},
                "feedback": None
                if fb is None
                else {
                    **{f: bool(getattr(fb, f)) for f in FEEDBACK_FIELDS[:-1]},
                    "watch_time_s": _num(fb.watch_time_s),
                },
            }
        )
    return {"request_id": req.request_id, "user_id": req.user_id, "ts": int(req.timestamp), "candidates": cands}


def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_log(path, requests: Iterable[Request]) -> int:
    """Write one request per line; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for req in requests:
            fh.write(_dumps(request_to_record(req)))
            fh.write("\n")
            count += 1
    return count


def _expect(cond: bool, line_no: int, field: str, message: str) -> None:
    if not cond:
        raise LogFormatError(line_no, field, message)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def record_to_request(rec, line_no: int = 0) -> Request:
    _expect(isinstance(rec, dict), line_no, "<line>", "expected a JSON object")
    missing = [f for f in LOG_FIELDS if f not in rec]
    _expect(not missing, line_no, missing[0] if missing else "", "missing field")
    extra = sorted(set(rec) - set(LOG_FIELDS))
    _expect(not extra, line_no, extra[0] if extra else "", "unknown field")
    _expect(isinstance(rec["request_id"], str), line_no, "request_id", "must be a string")
    _expect(isinstance(rec["user_id"], str), line_no, "user_id", "must be a string")
    _expect(isinstance(rec["ts"], int) and not isinstance(rec["ts"], bool), line_no, "ts", "must be an integer")
    cands = rec["candidates"]
    _expect(isinstance(cands, list) and cands, line_no, "candidates", "must be a non-empty list")

    n = len(cands)
    item_ids, pxtrs = [], np.empty((n, N_OBJECTIVES))
    exposed = np.zeros(n, dtype=bool)
    feedback = {}
    for i, c in enumerate(cands):
        where = f"candidates[{i}]"
        _expect(isinstance(c, dict), line_no, where, "expected an object")
        bad = sorted(set(c) ^ set(CANDIDATE_FIELDS))
        _expect(not bad, line_no, f"{where}.{bad[0] if bad else ''}", "unknown or missing field")
        _expect(isinstance(c["item_id"], str), line_no, f"{where}.item_id", "must be a string")
        _expect(isinstance(c["exposed"], bool), line_no, f"{where}.exposed", "must be a boolean")
        px = c["pxtrs"]
        _expect(isinstance(px, dict), line_no, f"{where}.pxtrs", "must be an object")
        for key in px:
            _expect(key in OBJECTIVE_INDEX, line_no, f"{where}.pxtrs.{key}", "unknown ObjectiveId")
        for k, o in enumerate(OBJECTIVES):
            _expect(o in px, line_no, f"{where}.pxtrs.{o}", "missing objective")
            v = px[o]
            _expect(_is_number(v), line_no, f"{where}.pxtrs.{o}", "must be a finite number")
            if k == PVTR_INDEX:
                _expect(v >= 0, line_no, f"{where}.pxtrs.{o}", "watch time must be >= 0")
            else:
                _expect(0 <= v <= 1, line_no, f"{where}.pxtrs.{o}", f"probability out of range: {v}")
            pxtrs[i, k] = v
        fb = c["feedback"]
        _expect((fb is not None) == c["exposed"], line_no, f"{where}.feedback", "present iff exposed")
        if fb is not None:
            _expect(isinstance(fb, dict), line_no, f"{where}.feedback", "must be an object or null")
            bad = sorted(set(fb) ^ set(FEEDBACK_FIELDS))
            _expect(not bad, line_no, f"{where}.feedback.{bad[0] if bad else ''}", "unknown or missing field")
            for f in FEEDBACK_FIELDS[:-1]:
                _expect(isinstance(fb[f], bool), line_no, f"{where}.feedback.{f}", "must be a boolean")
            wt = fb["watch_time_s"]
            _expect(_is_number(wt) and wt >= 0, line_no, f"{where}.feedback.watch_time_s", "must be >= 0")
            feedback[i] = FeedbackRecord(**{f: fb[f] for f in FEEDBACK_FIELDS[:-1]}, watch_time_s=float(wt))
        item_ids.append(c["item_id"])
        exposed[i] = c["exposed"]
    _expect(len(set(item_ids)) == n, line_no, "candidates", "duplicate item_id")
    return Request(rec["request_id"], rec["user_id"], rec["ts"], tuple(item_ids), pxtrs, exposed, feedback)


def iter_log(path) -> Iterator[Request]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"log file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(line_no, "<line>", f"invalid JSON: {exc.msg}") from None
            yield record_to_request(rec, line_no)


def read_log(path) -> List[Request]:
    return list(iter_log(path))


def _truth_record(s: Sample) -> dict:
    items = [
        {"item_id": s.request.item_ids[i], **{o: _num(s.truth[i, k]) for k, o in enumerate(OBJECTIVES)}}
        for i in range(s.request.n)
    ]
    return {"request_id": s.request.request_id, "items": items}


def write_truth(path, samples: Iterable[Sample]) -> None:
    """Ground-truth sidecar: one line per request with per-item latent true values."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(_dumps(_truth_record(s)) + "\n")


def read_truth(path) -> dict:
    """``request_id -> {item_id -> (8,) truth vector}``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["request_id"]] = {
                    it["item_id"]: np.array([it[o] for o in OBJECTIVES], dtype=np.float64) for it in rec["items"]
                }
    return out


def write_generated(cfg: GeneratorConfig, log_path, truth_path=None) -> int:
    """Generate and write the log (and optionally the truth sidecar) in one streaming pass."""
    count = 0
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n")
    truth_fh = open(truth_path, "w", encoding="utf-8", newline="\n") if truth_path else None
    try:
        for s in generate(cfg):
            log_fh.write(_dumps(request_to_record(s.request)) + "\n")
            if truth_fh is not None:
                truth_fh.write(_dumps(_truth_record(s)) + "\n")
            count += 1
    finally:
        log_fh.close()
        if truth_fh is not None:
            truth_fh.close()
    return count


def pvtr_of(requests: Sequence[Request]) -> np.ndarray:
    return np.concatenate([r.pxtrs[:, PVTR_INDEX] for r in requests])
