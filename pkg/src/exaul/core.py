"""Threshold grid, abstention rule, the combined abstention loss, unlock sets,
and the importance-weighted loss estimators built on them.

A conformal abstainer answers when the confidence score ``f`` clears a
threshold ``tau`` and says IDK otherwise. Thresholds live on a uniform grid
``tau_k = k / (n - 1)``; each grid point is one bandit arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Largest double strictly below 1; keeps tau = 1 an always-abstain arm.
MAX_SCORE = 1.0 - 2.0**-52


def clamp_score(score: float) -> float:
    """Clamp a raw score into ``[0, 1 - 2**-52]``."""
    if math.isnan(score):
        raise ValueError("score is NaN")
    return min(max(float(score), 0.0), MAX_SCORE)


@dataclass(frozen=True)
class HypothesisGrid:
    """Uniform threshold grid ``{k / (size - 1) : k = 0..size-1}``."""

    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ValueError(f"grid size must be an integer >= 2, got {self.size!r}")

    def __len__(self) -> int:
        return self.size

    def value(self, k: int) -> float:
        return grid_value(self, k)

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.size) / (self.size - 1)

    def cut_index(self, score: float) -> int:
        """Largest ``k`` with ``tau_k <= score``."""
        n1 = self.size - 1
        k = min(int(math.floor(score * n1)), n1)
        # one-step correction against rounding at grid points
        if k / n1 > score:
            k -= 1
        elif k < n1 and (k + 1) / n1 <= score:
            k += 1
        return k


@dataclass(frozen=True)
class LossParams:
    alpha: float
    lam: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class RoundOutcome:
    """One environment step.

    ``correctness`` is the simulator's latent ground truth; learners with
    bandit feedback only ever read ``score`` and ``feedback``.
    """

    score: float
    correctness: float
    feedback: float = 1.0


@dataclass(frozen=True)
class LossTerms:
    inefficiency: float
    fdr_margin: float
    combined: float


@dataclass(frozen=True)
class UnlockSet:
    """Contiguous arm range ``[lo, hi)`` whose loss the chosen arm reveals."""

    answered: bool
    cut_index: int
    size: int

    @property
    def lo(self) -> int:
        return 0 if self.answered else self.cut_index + 1

    @property
    def hi(self) -> int:
        return self.cut_index + 1 if self.answered else self.size

    @property
    def members(self) -> range:
        return range(self.lo, self.hi)

    def __contains__(self, k: int) -> bool:
        return self.lo <= k < self.hi

    def complement(self) -> range:
        if self.answered:
            return range(self.cut_index + 1, self.size)
        return range(0, self.cut_index + 1)


def grid_value(grid: HypothesisGrid, k: int) -> float:
    if not 0 <= k < grid.size:
        raise IndexError(f"arm index {k} outside [0, {grid.size})")
    return k / (grid.size - 1)


def accepts(tau: float, score: float) -> bool:
    """Non-strict acceptance: answer iff ``score >= tau``."""
    return score >= tau


def compute_loss(answered: bool, feedback: float, params: LossParams) -> LossTerms:
    """Combined inefficiency / FDR-margin loss for one decision.

    ``a = 1(IDK)``, ``d = 1(answered) * e - alpha * 1(answered) + alpha`` and
    ``loss = (a + lambda * d) / (1 + lambda)``, evaluated literally.
    """
    if not 0.0 <= feedback <= 1.0:
        raise ValueError(f"feedback must lie in [0, 1], got {feedback}")
    ans = 1.0 if answered else 0.0
    a = 1.0 - ans
    d = ans * feedback - params.alpha * ans + params.alpha
    return LossTerms(a, d, (a + params.lam * d) / (1.0 + params.lam))


def unlock_set(grid: HypothesisGrid, chosen_index: int, score: float) -> UnlockSet:
    cut = grid.cut_index(score)
    return UnlockSet(answered=chosen_index <= cut, cut_index=cut, size=grid.size)


def estimate_loss_exaul(
    unlock: UnlockSet, loss: LossTerms | float, policy: np.ndarray, gamma: float
) -> np.ndarray:
    """Feedback-unlocking estimator.

    Every unlocked arm shares the chosen arm's loss, importance-weighted by the
    policy mass of the unlock set: ``loss / (gamma + M)`` on the set, zero
    elsewhere. Unlock sets partition the grid, so the per-arm denominator in
    the double-indicator form collapses to ``M`` for every member.
    """
    value = loss.combined if isinstance(loss, LossTerms) else float(loss)
    est = np.zeros(len(policy))
    lo, hi = unlock.lo, unlock.hi
    denom = gamma + policy[lo:hi].sum()
    if denom <= 0.0:
        raise ZeroDivisionError("unlock set carries no policy mass and gamma = 0")
    est[lo:hi] = value / denom
    return est


def estimate_loss_exaul_reference(
    grid: HypothesisGrid,
    chosen_index: int,
    score: float,
    loss: LossTerms | float,
    policy: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Double-indicator form of the unlocking estimator, evaluated arm by arm.

    For each arm ``k`` in the chosen unlock set the denominator is
    ``gamma + sum_{j in H(chosen)} 1(k in H(j)) * p(j)``. Quadratic in the grid
    size; kept as a test oracle.
    """
    value = loss.combined if isinstance(loss, LossTerms) else float(loss)
    chosen = unlock_set(grid, chosen_index, score)
    sets = [unlock_set(grid, j, score) for j in range(grid.size)]
    lo = np.array([s.lo for s in sets])
    hi = np.array([s.hi for s in sets])
    members = np.arange(chosen.lo, chosen.hi)
    est = np.zeros(grid.size)
    for k in range(grid.size):
        if k not in chosen:
            continue
        indicator = (lo[members] <= k) & (k < hi[members])
        est[k] = value / (gamma + np.sum(indicator * policy[members]))
    return est


def estimate_loss_ix(
    chosen_index: int, loss: LossTerms | float, policy: np.ndarray, gamma: float
) -> np.ndarray:
    """Implicit-exploration estimator: ``loss / (gamma + p(chosen))`` on the chosen arm."""
    value = loss.combined if isinstance(loss, LossTerms) else float(loss)
    est = np.zeros(len(policy))
    denom = gamma + policy[chosen_index : chosen_index + 1].sum()
    if denom <= 0.0:
        raise ZeroDivisionError("chosen arm has zero probability and gamma = 0")
    est[chosen_index] = value / denom
    return est
