"""Per-round (score, correctness) streams.

Pools are arrays of ``(score, correctness)`` pairs standing in for a scored QA
dataset. A :class:`Schedule` says how rounds are drawn from one or two pools:
stationary, a single switch, alternating chunks, a linear mixture, or a
history-driven adversary.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import betaln

from .core import MAX_SCORE, RoundOutcome

log = logging.getLogger(__name__)

KINDS = ("stochastic", "shift-single", "shift-alternating", "shift-gradual", "adversary")
CALIBRATIONS = ("well", "over", "under")

# accuracy-vs-score exponent for the miscalibrated generators
_DISTORTION = {"well": 1.0, "over": 2.0, "under": 0.5}


class PoolFormatError(ValueError):
    pass


@dataclass
class ExamplePool:
    scores: np.ndarray
    correct: np.ndarray
    name: str = "pool"

    def __post_init__(self):
        self.scores = np.minimum(np.clip(np.asarray(self.scores, dtype=float), 0.0, None), MAX_SCORE)
        self.correct = np.asarray(self.correct, dtype=float)
        if self.scores.ndim != 1 or self.scores.shape != self.correct.shape:
            raise ValueError("scores and correctness must be 1-D arrays of equal length")
        if len(self.scores) == 0:
            raise ValueError("pool is empty")
        if np.any((self.correct < 0) | (self.correct > 1)):
            raise ValueError("correctness must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)

    def entry(self, i: int) -> RoundOutcome:
        return RoundOutcome(float(self.scores[i]), float(self.correct[i]))

    @property
    def error_rate(self) -> float:
        return float(np.mean(1.0 - self.correct))


def _beta_shape(incorrect_rate: float, power: float, concentration: float) -> tuple[float, float]:
    """Beta(a, b) with a + b fixed such that E[s**power] = 1 - incorrect_rate."""
    target = 1.0 - incorrect_rate

    def gap(a):
        b = concentration - a
        return math.exp(betaln(a + power, b) - betaln(a, b)) - target

    a = brentq(gap, 1e-9, concentration - 1e-9, xtol=1e-14)
    return a, concentration - a


def gen_pool(
    n: int,
    seed: int,
    calibration: str = "well",
    incorrect_rate: float = 0.3,
    concentration: float = 2.0,
    name: str | None = None,
) -> ExamplePool:
    """Synthetic pool with Beta scores and Bernoulli(g(score)) correctness.

    ``g(s) = s`` for ``well``, ``s**2`` for ``over`` (scores overstate accuracy,
    most visibly at the top) and ``sqrt(s)`` for ``under``. The Beta shape is
    solved so the expected error rate equals ``incorrect_rate``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if calibration not in CALIBRATIONS:
        raise ValueError(f"calibration must be one of {CALIBRATIONS}, got {calibration!r}")
    if not 0.0 < incorrect_rate < 1.0:
        raise ValueError("incorrect_rate must lie in (0, 1)")
    power = _DISTORTION[calibration]
    a, b = _beta_shape(incorrect_rate, power, concentration)
    rng = np.random.default_rng(seed)
    scores = np.minimum(rng.beta(a, b, size=n), MAX_SCORE)
    correct = (rng.random(n) < scores**power).astype(float)
    return ExamplePool(scores, correct, name or f"{calibration}-{incorrect_rate:g}")


def save_pool(pool: ExamplePool, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score", "correct"])
        for s, c in zip(pool.scores, pool.correct):
            w.writerow([f"{s:.17g}", f"{c:.17g}"])


def load_pool(path) -> ExamplePool:
    """Read a ``score,correct`` CSV. Scores are clamped into [0, 1)."""
    path = Path(path)
    scores, correct = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        for lineno, row in enumerate(rows, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "score":
                continue
            if len(row) != 2:
                raise PoolFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                s, c = float(row[0]), float(row[1])
            except ValueError:
                raise PoolFormatError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if math.isnan(s) or math.isnan(c) or not 0.0 <= c <= 1.0:
                raise PoolFormatError(f"{path}:{lineno}: value out of range in {row!r}")
            scores.append(s)
            correct.append(c)
    if not scores:
        raise PoolFormatError(f"{path}: no entries")
    return ExamplePool(np.array(scores), np.array(correct), path.stem)


@dataclass
class Schedule:
    """How rounds are drawn from one or two pools.

    ``switch_point`` defaults to T/2 and ``phase_switch`` to T/5 once the
    horizon is known.
    """

    kind: str
    pools: tuple
    chunk: int = 3000
    switch_point: int | None = None
    phase_switch: int | None = None
    window: int = 500
    mix_ratio: float = 0.5
    mix_step: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"environment must be one of {KINDS}, got {self.kind!r}")
        if isinstance(self.pools, ExamplePool):
            self.pools = (self.pools,)
        self.pools = tuple(self.pools)
        if not self.pools:
            raise ValueError("at least one pool is required")
        if self.kind != "stochastic" and len(self.pools) < 2:
            raise ValueError(f"{self.kind} needs a second pool")
        if self.chunk < 1:
            raise ValueError("chunk must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def switch_at(self, horizon: int) -> int:
        return horizon // 2 if self.switch_point is None else self.switch_point

    def phase_switch_at(self, horizon: int) -> int:
        return horizon // 5 if self.phase_switch is None else self.phase_switch


def pool_index(schedule: Schedule, t: int, horizon: int, rng: np.random.Generator) -> int:
    """Which pool (0 or 1) serves round ``t``; draws from ``rng`` only for the gradual mix."""
    kind = schedule.kind
    if kind == "stochastic":
        return 0
    if kind == "shift-single":
        return 0 if t <= schedule.switch_at(horizon) else 1
    if kind == "shift-alternating":
        return ((t - 1) // schedule.chunk) % 2
    if kind == "shift-gradual":
        return 1 if rng.random() < t / horizon else 0
    raise ValueError(f"{kind} rounds come from adversary_next")


def uniform_index(rng: np.random.Generator, n: int) -> int:
    """Index drawn uniformly from ``range(n)`` via one ``rng.random()`` call."""
    return min(int(rng.random() * n), n - 1)


def schedule_next(schedule: Schedule, t: int, horizon: int, rng: np.random.Generator) -> RoundOutcome:
    if not 1 <= t <= horizon:
        raise ValueError(f"round {t} outside [1, {horizon}]")
    pool = schedule.pools[pool_index(schedule, t, horizon, rng)]
    return pool.entry(uniform_index(rng, len(pool)))


@dataclass
class AdversaryState:
    """Two-phase adversary that only sees served entries and the learner's decisions.

    Phase 1 serves high-score incorrect entries. Afterwards it mixes those with
    low-score correct entries and every ``window`` rounds nudges ``mix_ratio``
    by ``mix_step`` toward the quadrant whose rounds failed the learner more
    often in the last window (accepted-and-wrong or abstained-and-right).
    """

    phase_switch: int
    window: int = 500
    mix_ratio: float = 0.5
    mix_step: float = 0.05
    quadrants: dict = field(default_factory=dict, repr=False)
    recent: deque = field(default=None, repr=False)
    fallbacks: int = 0
    last_served: int | None = None

    def __post_init__(self):
        if self.recent is None:
            self.recent = deque(maxlen=self.window)

    @classmethod
    def from_schedule(cls, schedule: Schedule, horizon: int) -> "AdversaryState":
        state = cls(
            phase_switch=schedule.phase_switch_at(horizon),
            window=schedule.window,
            mix_ratio=schedule.mix_ratio,
            mix_step=schedule.mix_step,
        )
        state.partition(schedule.pools)
        return state

    def partition(self, pools) -> None:
        scores = np.concatenate([p.scores for p in pools])
        correct = np.concatenate([p.correct for p in pools])
        self.quadrants = {
            "hard": _quadrant(scores, correct, high=True, want_correct=False, state=self),
            "easy": _quadrant(scores, correct, high=False, want_correct=True, state=self),
        }

    def observe(self, accepted: bool, correctness: float) -> None:
        """Record the learner's decision on the last served entry."""
        failure = correctness if not accepted else 1.0 - correctness
        self.recent.append((self.last_served, failure))

    def adapt(self) -> None:
        rates = {}
        for q in ("hard", "easy"):
            f = [fail for served, fail in self.recent if served == q]
            if f:
                rates[q] = sum(f) / len(f)
        if len(rates) < 2 or rates["hard"] == rates["easy"]:
            return
        step = self.mix_step if rates["hard"] > rates["easy"] else -self.mix_step
        self.mix_ratio = min(max(self.mix_ratio + step, 0.1), 0.9)


def _quadrant(scores, correct, high, want_correct, state):
    side = scores >= 0.5 if high else scores < 0.5
    label = correct >= 0.5 if want_correct else correct < 0.5
    idx = np.flatnonzero(side & label)
    if len(idx):
        return (scores[idx], correct[idx])
    # nearest-score entry with the required correctness
    pool = np.flatnonzero(label)
    if not len(pool):
        pool = np.arange(len(scores))
    pick = pool[np.argmax(scores[pool])] if high else pool[np.argmin(scores[pool])]
    state.fallbacks += 1
    log.warning(
        "adversary: empty %s quadrant, falling back to entry with score %.4f",
        "hard" if high else "easy",
        scores[pick],
    )
    return (scores[[pick]], correct[[pick]])


def adversary_next(state: AdversaryState, t: int, rng: np.random.Generator) -> RoundOutcome:
    """Serve round ``t``. The learner's policy is never an input."""
    since = t - state.phase_switch - 1
    if since > 0 and since % state.window == 0 and state.mix_step:
        state.adapt()
    u = rng.random()
    served = "hard" if t <= state.phase_switch or u < state.mix_ratio else "easy"
    scores, correct = state.quadrants[served]
    i = uniform_index(rng, len(scores))
    state.last_served = served
    return RoundOutcome(float(scores[i]), float(correct[i]))


class Environment:
    """Round source for one trial: wraps a schedule and, if needed, adversary state."""

    def __init__(self, schedule: Schedule, horizon: int):
        self.schedule = schedule
        self.horizon = horizon
        self.adversary = (
            AdversaryState.from_schedule(schedule, horizon) if schedule.kind == "adversary" else None
        )

    def next(self, t: int, rng: np.random.Generator) -> RoundOutcome:
        if self.adversary is not None:
            return adversary_next(self.adversary, t, rng)
        return schedule_next(self.schedule, t, self.horizon, rng)

    def observe(self, accepted: bool, correctness: float) -> None:
        if self.adversary is not None:
            self.adversary.observe(accepted, correctness)
