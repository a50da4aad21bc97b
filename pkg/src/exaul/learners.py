"""Exponential-weights learners over the threshold grid.

Weights are kept in the log domain as cumulative estimated losses; the policy
is the softmax of ``-eta * L`` after subtracting ``min(L)``.

Four update rules are supported:

* ``ew-ca``      full feedback, every arm's true loss is added each round.
* ``exp3ix-ca``  bandit feedback, implicit-exploration estimate on the chosen arm.
* ``exaul``      bandit feedback with unlocking: the chosen arm's loss is shared
                 by every arm on the same side of the score.
* ``fixed-arm``  a point mass that never learns (``no-ca`` is arm 0).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .core import HypothesisGrid, LossParams, RoundOutcome, compute_loss, unlock_set

ALGOS = ("ew-ca", "exp3ix-ca", "exaul", "fixed-arm")
ALIASES = {"no-ca": "fixed-arm"}


@dataclass(frozen=True)
class RateSchedule:
    eta: float
    gamma: float


def default_rates(algo: str, horizon: int, grid: HypothesisGrid | int) -> RateSchedule:
    """Known-horizon learning rates (loss range normalised to [0, 1]).

    exaul:      eta = 2 gamma = sqrt(ln|H| / T)
    exp3ix-ca:  eta = 2 gamma = sqrt(2 ln|H| / (T |H|))
    ew-ca:      eta = sqrt(8 ln|H| / T), gamma = 0
    """
    algo = ALIASES.get(algo, algo)
    n = grid.size if isinstance(grid, HypothesisGrid) else int(grid)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n < 2:
        raise ValueError("grid needs at least two arms")
    log_n = math.log(n)
    if algo == "exaul":
        eta = math.sqrt(log_n / horizon)
        return RateSchedule(eta, eta / 2)
    if algo == "exp3ix-ca":
        eta = math.sqrt(2 * log_n / (horizon * n))
        return RateSchedule(eta, eta / 2)
    if algo == "ew-ca":
        return RateSchedule(math.sqrt(8 * log_n / horizon), 0.0)
    if algo == "fixed-arm":
        return RateSchedule(1.0, 0.0)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")


def sample_index(policy: np.ndarray, u: float) -> int:
    """Inverse-CDF draw in ascending arm order; the last arm takes any rounding residue."""
    k = int(policy.cumsum().searchsorted(u, side="right"))
    return min(k, len(policy) - 1)


@dataclass
class Learner:
    algo: str
    grid: HypothesisGrid
    horizon: int
    eta: float
    gamma: float
    fixed_index: int = 0
    anytime: bool = False
    # test hook: truncate unlock sets to the chosen arm
    singleton_unlock: bool = False
    step: int = 1
    cumulative: np.ndarray = field(default=None, repr=False)
    _policy: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.algo = ALIASES.get(self.algo, self.algo)
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; expected one of {ALGOS}")
        if self.cumulative is None:
            self.cumulative = np.zeros(self.grid.size)
        if not 0 <= self.fixed_index < self.grid.size:
            raise IndexError(f"fixed arm {self.fixed_index} outside the grid")

    @property
    def feedback_mode(self) -> str:
        return "full" if self.algo == "ew-ca" else "bandit"

    def rates(self) -> tuple[float, float]:
        """(eta_t, gamma_t) for the current step."""
        if not self.anytime:
            return self.eta, self.gamma
        scale = math.sqrt(self.horizon / self.step)
        return self.eta * scale, self.gamma * scale

    def policy(self) -> np.ndarray:
        if self._policy is None:
            if self.algo == "fixed-arm":
                p = np.zeros(self.grid.size)
                p[self.fixed_index] = 1.0
            else:
                eta, _ = self.rates()
                L = self.cumulative
                p = np.subtract(L, L.min())
                p *= -eta
                np.exp(p, out=p)
                p /= p.sum()
            self._policy = p
        return self._policy

    def sample(self, rng: np.random.Generator) -> int:
        return sample_index(self.policy(), rng.random())

    def clone(self) -> "Learner":
        return copy.deepcopy(self)

    def _advance(self):
        self.step += 1
        self._policy = None

    def update(self, chosen: int, outcome: RoundOutcome, params: LossParams) -> None:
        """Dispatch to the update rule matching this learner's feedback mode."""
        if self.algo == "ew-ca":
            self.update_full(outcome, params)
        elif self.algo == "exp3ix-ca":
            self.update_bandit(chosen, outcome, params)
        elif self.algo == "exaul":
            self.update_unlocked(chosen, outcome, params)
        else:
            self._advance()

    def update_full(self, outcome: RoundOutcome, params: LossParams) -> None:
        if self.algo != "ew-ca":
            raise RuntimeError(f"full-feedback update called on a {self.algo} learner")
        cut = self.grid.cut_index(outcome.score)
        accept = compute_loss(True, 1.0 - outcome.correctness, params).combined
        abstain = compute_loss(False, 1.0, params).combined
        self.cumulative[: cut + 1] += accept
        self.cumulative[cut + 1 :] += abstain
        self._advance()

    def update_bandit(self, chosen: int, outcome: RoundOutcome, params: LossParams) -> None:
        if self.algo != "exp3ix-ca":
            raise RuntimeError(f"bandit update called on a {self.algo} learner")
        self._add_estimate(chosen, chosen + 1, chosen, outcome, params)

    def update_unlocked(self, chosen: int, outcome: RoundOutcome, params: LossParams) -> None:
        if self.algo != "exaul":
            raise RuntimeError(f"unlocking update called on a {self.algo} learner")
        if self.singleton_unlock:
            self._add_estimate(chosen, chosen + 1, chosen, outcome, params)
            return
        unlocked = unlock_set(self.grid, chosen, outcome.score)
        self._add_estimate(unlocked.lo, unlocked.hi, chosen, outcome, params)

    def _add_estimate(self, lo, hi, chosen, outcome, params):
        # Same arithmetic as estimate_loss_exaul / estimate_loss_ix, restricted to [lo, hi).
        answered = self.grid.cut_index(outcome.score) >= chosen
        loss = compute_loss(answered, outcome.feedback, params).combined
        p = self.policy()
        _, gamma = self.rates()
        denom = gamma + p[lo:hi].sum()
        if denom <= 0.0:
            raise ZeroDivisionError("unlock set carries no policy mass and gamma = 0")
        if loss != 0.0:
            self.cumulative[lo:hi] += loss / denom
        self._advance()


def init_learner(
    algo: str,
    grid: HypothesisGrid | int,
    horizon: int,
    rates: RateSchedule | None = None,
    fixed_index: int = 0,
    anytime: bool = False,
) -> Learner:
    """Fresh learner with a uniform policy (or a point mass for fixed-arm)."""
    if not isinstance(grid, HypothesisGrid):
        grid = HypothesisGrid(int(grid))
    algo = ALIASES.get(algo, algo)
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if rates is None:
        rates = default_rates(algo, horizon, grid)
    gamma = 0.0 if algo == "ew-ca" else rates.gamma
    if algo != "fixed-arm" and rates.eta <= 0:
        raise ValueError("eta must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return Learner(algo, grid, horizon, rates.eta, gamma, fixed_index=fixed_index, anytime=anytime)
