"""Online conformal abstention under adversarial bandit feedback."""

from .core import (
    HypothesisGrid,
    LossParams,
    LossTerms,
    RoundOutcome,
    UnlockSet,
    accepts,
    clamp_score,
    compute_loss,
    estimate_loss_exaul,
    estimate_loss_ix,
    grid_value,
    unlock_set,
)
from .environments import ExamplePool, Schedule, gen_pool, load_pool
from .harness import ExperimentConfig, run_experiment, run_trial
from .learners import Learner, RateSchedule, default_rates, init_learner
from .metrics import AuditConfig, MetricsLedger, audit_bounds, fdr, hindsight_regret

__version__ = "0.1.0"
