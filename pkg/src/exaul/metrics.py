"""Running FDR / inefficiency / regret ledger and the bound audit.

Hindsight losses use the two-valued structure of the loss: in a round with
score ``f`` every arm ``k <= cut(f)`` answers and pays the same accept-side
loss, every other arm abstains and pays ``(1 + lambda * alpha) / (1 + lambda)``.
Two difference accumulators therefore reconstruct all per-arm cumulative
losses in O(|H|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import HypothesisGrid, LossParams, LossTerms, RoundOutcome, compute_loss

# rounding allowance for the pathwise checks, relative to T
PATHWISE_RTOL = 1e-9


@dataclass
class MetricsLedger:
    grid: HypothesisGrid
    params: LossParams
    t: int = 0
    answered_count: int = 0
    abstain_count: int = 0
    error_mass: float = 0.0
    fdr_risk: float = 0.0
    realized_loss: float = 0.0
    accept_loss_diff: np.ndarray = field(default=None, repr=False)
    abstain_loss_diff: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.accept_loss_diff is None:
            self.accept_loss_diff = np.zeros(self.grid.size)
        if self.abstain_loss_diff is None:
            self.abstain_loss_diff = np.zeros(self.grid.size)
        # abstain-side loss is the same every round
        self._abstain_value = compute_loss(False, 1.0, self.params).combined

    def record(self, chosen_index: int, outcome: RoundOutcome, loss: LossTerms) -> None:
        """Fold one round in. ``outcome.correctness`` drives the hindsight losses."""
        cut = self.grid.cut_index(outcome.score)
        self.t += 1
        if chosen_index <= cut:
            self.answered_count += 1
            self.error_mass += outcome.feedback
            self.fdr_risk += outcome.feedback - self.params.alpha
        else:
            self.abstain_count += 1
        self.realized_loss += loss.combined
        accept_value = compute_loss(True, 1.0 - outcome.correctness, self.params).combined
        self.accept_loss_diff[cut] += accept_value
        if cut + 1 < self.grid.size:
            self.abstain_loss_diff[cut + 1] += self._abstain_value

    def fdr(self) -> float:
        return fdr(self)

    def ineff(self) -> float:
        return self.abstain_count / self.t if self.t else 0.0

    def hindsight_losses(self) -> np.ndarray:
        """Cumulative true loss of every fixed arm."""
        accept = np.cumsum(self.accept_loss_diff[::-1])[::-1]
        abstain = np.cumsum(self.abstain_loss_diff)
        return accept + abstain

    def regret(self) -> float:
        return hindsight_regret(self)


def fdr(ledger: MetricsLedger, alpha: float | None = None) -> float:
    """Empirical FDR; ``alpha`` when nothing was answered."""
    if ledger.answered_count == 0:
        return ledger.params.alpha if alpha is None else alpha
    return ledger.error_mass / ledger.answered_count


def hindsight_regret(ledger: MetricsLedger) -> float:
    """Realized loss minus the best fixed arm's loss. Can be negative."""
    return ledger.realized_loss - float(np.min(ledger.hindsight_losses()))


def brute_force_losses(grid: HypothesisGrid, params: LossParams, outcomes) -> np.ndarray:
    """T x |H| true-loss matrix, one compute_loss call per cell."""
    taus = grid.values
    out = np.empty((len(outcomes), grid.size))
    for i, o in enumerate(outcomes):
        for k, tau in enumerate(taus):
            answered = o.score >= tau
            e = 1.0 - o.correctness if answered else 1.0
            out[i, k] = compute_loss(answered, e, params).combined
    return out


@dataclass(frozen=True)
class AuditConfig:
    delta: float = 0.01
    check_lemma1: bool = True
    check_fdr_bound: bool = True

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


def lemma1_rhs(T: int, ineff: float, regret: float, lam: float) -> float:
    """Pathwise FDR-risk ceiling ``(T (1 - Ineff) + (1 + lambda) Reg) / lambda``."""
    if lam == 0:
        return math.inf
    return (T * (1.0 - ineff) + (1.0 + lam) * regret) / lam


def fdr_gap_bound(T: int, ineff: float, regret: float, lam: float) -> float | None:
    """Ceiling on ``FDR_T - alpha``: the risk ceiling divided by the answered count.

    With ``lambda = sqrt(T)`` this is ``1/sqrt(T) + (1 + sqrt(T)) Reg / (T sqrt(T) (1 - Ineff))``.
    ``None`` when every round abstained.
    """
    if ineff >= 1.0 or lam == 0:
        return None
    return 1.0 / lam + (1.0 + lam) * regret / (lam * T * (1.0 - ineff))


def fdr_risk_bound(T: int, ineff: float, n_arms: int, delta: float) -> float:
    """High-probability ceiling on ``R_T / T`` for exaul at ``eta = 2 gamma = sqrt(ln|H| / T)``."""
    ln_h = math.log(n_arms)
    rt = math.sqrt(T)
    return (1.0 - ineff) / rt + (1.0 + 1.0 / rt) * (
        4.0 * math.sqrt(ln_h / T) + (1.0 / T + math.sqrt(1.0 / (T * ln_h))) * math.log(2.0 / delta)
    )


def regret_bound(T: int, n_arms: int, delta: float) -> float:
    """High-probability exaul regret ceiling ``4 sqrt(T ln|H|) + (1 + sqrt(T / ln|H|)) ln(2/delta)``."""
    ln_h = math.log(n_arms)
    return 4.0 * math.sqrt(T * ln_h) + (1.0 + math.sqrt(T / ln_h)) * math.log(2.0 / delta)


@dataclass
class AuditReport:
    T: int
    alpha: float
    lam: float
    fdr: float
    ineff: float
    regret: float
    fdr_risk: float
    lemma1_rhs: float
    lemma1_ok: bool
    fdr_gap: float
    fdr_gap_bound: float | None
    fdr_gap_ok: bool | None
    fdr_risk_bound: float
    fdrbound_ok: bool
    regret_bound: float
    regret_ok: bool

    @property
    def ok(self) -> bool:
        """Only the pathwise checks can fail a run; the others hold with probability 1 - delta."""
        return self.lemma1_ok and self.fdr_gap_ok is not False

    def violations(self) -> list[str]:
        out = []
        if not self.lemma1_ok:
            out.append(f"lemma1_ok: fdr_risk={self.fdr_risk:.17g} > lemma1_rhs={self.lemma1_rhs:.17g}")
        if self.fdr_gap_ok is False:
            out.append(f"fdr_gap_ok: fdr-alpha={self.fdr_gap:.17g} > bound={self.fdr_gap_bound:.17g}")
        return out

    def to_text(self) -> str:
        def fmt(v):
            if v is None:
                return "degenerate"
            if isinstance(v, bool):
                return "pass" if v else "fail"
            if isinstance(v, float):
                return f"{v:.17g}"
            return str(v)

        return "\n".join(f"{k}={fmt(v)}" for k, v in self.__dict__.items())


def audit_values(
    T: int,
    alpha: float,
    lam: float,
    fdr_value: float,
    ineff: float,
    regret: float,
    fdr_risk: float,
    n_arms: int,
    config: AuditConfig = AuditConfig(),
) -> AuditReport:
    """Evaluate every bound from final run statistics alone."""
    slack = PATHWISE_RTOL * (1.0 + T)
    rhs = lemma1_rhs(T, ineff, regret, lam)
    lemma_ok = fdr_risk <= rhs + slack if config.check_lemma1 else True
    gap_bound = fdr_gap_bound(T, ineff, regret, lam)
    gap = fdr_value - alpha
    if gap_bound is None or not config.check_lemma1:
        gap_ok = None
    else:
        gap_ok = gap <= gap_bound + slack / (T * (1.0 - ineff))
    risk_bound = fdr_risk_bound(T, ineff, n_arms, config.delta)
    fdr_ok = fdr_risk / T <= risk_bound if config.check_fdr_bound else True
    reg_bound = regret_bound(T, n_arms, config.delta)
    return AuditReport(
        T=T,
        alpha=alpha,
        lam=lam,
        fdr=fdr_value,
        ineff=ineff,
        regret=regret,
        fdr_risk=fdr_risk,
        lemma1_rhs=rhs,
        lemma1_ok=bool(lemma_ok),
        fdr_gap=gap,
        fdr_gap_bound=gap_bound,
        fdr_gap_ok=gap_ok,
        fdr_risk_bound=risk_bound,
        fdrbound_ok=bool(fdr_ok),
        regret_bound=reg_bound,
        regret_ok=bool(regret <= reg_bound),
    )


def audit_bounds(ledger: MetricsLedger, config: AuditConfig = AuditConfig()) -> AuditReport:
    return audit_values(
        ledger.t,
        ledger.params.alpha,
        ledger.params.lam,
        ledger.fdr(),
        ledger.ineff(),
        ledger.regret(),
        ledger.fdr_risk,
        ledger.grid.size,
        config,
    )
