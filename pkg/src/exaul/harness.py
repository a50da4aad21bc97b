"""Seeded multi-trial experiments: environment -> learner -> ledger -> audit."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import HypothesisGrid, LossParams, RoundOutcome, compute_loss
from .environments import Environment, Schedule
from .learners import RateSchedule, init_learner
from .metrics import AuditConfig, AuditReport, MetricsLedger, audit_bounds, audit_values

STEP_COLUMNS = ["trial", "t", "arm", "tau", "score", "accepted", "e", "loss", "cum_fdr", "cum_ineff"]
SUMMARY_COLUMNS = [
    "trial", "T", "alpha", "lambda", "fdr", "ineff", "regret",
    "fdr_risk", "lemma1_rhs", "lemma1_ok", "fdrbound_ok",
]
PERCENTILES = (5, 25, 50, 75, 95)

_MASK64 = (1 << 64) - 1


def fmt(x) -> str:
    """17 significant digits: round-trips every double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, trial_index: int) -> int:
    """``splitmix64(base_seed XOR splitmix64(trial_index))``, all mod 2**64."""
    return splitmix64((base_seed & _MASK64) ^ splitmix64(trial_index))


def trial_rngs(base_seed: int, trial_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (environment, learner) generators for one trial."""
    env_ss, learner_ss = np.random.SeedSequence(trial_seed(base_seed, trial_index)).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(learner_ss)


def resolve_lambda(value, horizon: int) -> float:
    if isinstance(value, str):
        if value.strip().lower() == "sqrtt":
            return math.sqrt(horizon)
        value = float(value)
    lam = float(value)
    if not lam >= 0 or math.isinf(lam):
        raise ValueError(f"lambda must be a finite non-negative number or 'sqrtT', got {value!r}")
    return lam


@dataclass
class ExperimentConfig:
    algo: str
    schedule: Schedule
    alpha: float = 0.05
    lam: float | str = "sqrtT"
    grid_size: int = 1000
    horizon: int = 30000
    trials: int = 1
    base_seed: int = 0
    log_every: int = 10
    output_dir: str | None = None
    delta: float = 0.01
    rates: RateSchedule | None = None
    anytime: bool = False
    singleton_unlock: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        self.lam = resolve_lambda(self.lam, self.horizon)
        self.params = LossParams(self.alpha, self.lam)
        self.grid = HypothesisGrid(self.grid_size)
        AuditConfig(self.delta)

    def describe(self) -> dict:
        s = self.schedule
        return {
            "algo": self.algo,
            "env": s.kind,
            "pools": [p.name for p in s.pools],
            "alpha": self.alpha,
            "lambda": self.lam,
            "grid_size": self.grid_size,
            "T": self.horizon,
            "trials": self.trials,
            "seed": self.base_seed,
            "log_every": self.log_every,
            "delta": self.delta,
            "chunk": s.chunk,
            "switch": s.switch_at(self.horizon),
            "phase_switch": s.phase_switch_at(self.horizon),
            "window": s.window,
            "anytime": self.anytime,
        }


@dataclass
class TrialResult:
    trial: int
    fdr: float
    ineff: float
    regret: float
    fdr_risk: float
    audit: AuditReport
    series_t: np.ndarray = field(repr=False)
    series_fdr: np.ndarray = field(repr=False)
    series_ineff: np.ndarray = field(repr=False)
    arms: np.ndarray | None = field(default=None, repr=False)
    steps: list | None = field(default=None, repr=False)

    def summary_row(self) -> list[str]:
        a = self.audit
        return [fmt(v) for v in (
            self.trial, a.T, a.alpha, a.lam, self.fdr, self.ineff, self.regret,
            self.fdr_risk, a.lemma1_rhs, a.lemma1_ok, a.fdrbound_ok,
        )]


def run_trial(config: ExperimentConfig, trial_index: int, keep_steps: bool = False) -> TrialResult:
    """One full simulation of ``config.horizon`` rounds."""
    T = config.horizon
    grid = config.grid
    params = config.params
    n1 = grid.size - 1
    env_rng, learner_rng = trial_rngs(config.base_seed, trial_index)
    env = Environment(config.schedule, T)
    learner = init_learner(config.algo, grid, T, config.rates, anytime=config.anytime)
    learner.singleton_unlock = config.singleton_unlock
    ledger = MetricsLedger(grid, params)
    bandit = learner.feedback_mode == "bandit"

    stride = config.log_every
    series = []
    steps = [] if keep_steps else None
    arms = np.empty(T, dtype=np.int64)

    for t in range(1, T + 1):
        round_ = env.next(t, env_rng)
        arm = learner.sample(learner_rng)
        tau = arm / n1
        accepted = round_.score >= tau
        # bandit learners never see correctness behind an abstention
        e = 1.0 - round_.correctness if accepted else 1.0
        observed = RoundOutcome(round_.score, round_.correctness if not bandit else math.nan, e)
        loss = compute_loss(accepted, e, params)
        learner.update(arm, observed, params)
        ledger.record(arm, RoundOutcome(round_.score, round_.correctness, e), loss)
        env.observe(accepted, round_.correctness)
        arms[t - 1] = arm
        if t % stride == 0 or t == T:
            cum_fdr, cum_ineff = ledger.fdr(), ledger.ineff()
            series.append((t, cum_fdr, cum_ineff))
            if keep_steps:
                steps.append((trial_index, t, arm, tau, round_.score, accepted, e, loss.combined, cum_fdr, cum_ineff))

    report = audit_bounds(ledger, AuditConfig(config.delta))
    s = np.array(series)
    return TrialResult(
        trial=trial_index,
        fdr=report.fdr,
        ineff=report.ineff,
        regret=report.regret,
        fdr_risk=report.fdr_risk,
        audit=report,
        series_t=s[:, 0].astype(np.int64),
        series_fdr=s[:, 1],
        series_ineff=s[:, 2],
        arms=arms,
        steps=steps,
    )


def _run_logged(args):
    config, trial_index = args
    result = run_trial(config, trial_index, keep_steps=config.output_dir is not None)
    if config.output_dir is not None:
        write_steps(Path(config.output_dir) / "logs" / f"trial_{trial_index:04d}.csv", result.steps)
        result.steps = None
    result.arms = None
    return result


def write_steps(path: Path, steps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for row in steps:
            w.writerow([fmt(v) for v in row])


def summary_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        w.writerow(r.summary_row())
    return buf.getvalue()


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate(values_by_metric: dict) -> dict:
    """mean, std (ddof=1, 0 for a single trial) and percentiles per metric."""
    out = {}
    for name, values in values_by_metric.items():
        v = np.asarray(values, dtype=float)
        stats = {
            "n": len(v),
            "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
        }
        for q, p in zip(PERCENTILES, np.percentile(v, PERCENTILES)):
            stats[f"p{q}"] = float(p)
        out[name] = stats
    return out


def aggregate_from_summary(rows) -> dict:
    return aggregate({m: [float(r[m]) for r in rows] for m in ("fdr", "ineff", "regret")})


def aggregate_csv(stats: dict) -> str:
    cols = ["metric", "n", "mean", "std"] + [f"p{q}" for q in PERCENTILES]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for metric, s in stats.items():
        w.writerow([metric] + [fmt(s[c]) for c in cols[1:]])
    return buf.getvalue()


@dataclass
class ExperimentSummary:
    results: list
    stats: dict
    pass_rates: dict

    @property
    def ok(self) -> bool:
        return all(r.audit.ok for r in self.results)


def pass_rates(results) -> dict:
    n = len(results)
    return {
        "lemma1": sum(r.audit.lemma1_ok for r in results) / n,
        "fdr_gap": sum(r.audit.fdr_gap_ok is not False for r in results) / n,
        "fdr_risk_bound": sum(r.audit.fdrbound_ok for r in results) / n,
        "regret_bound": sum(r.audit.regret_ok for r in results) / n,
    }


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentSummary:
    """Run every trial, optionally in worker processes, then reduce.

    With ``output_dir`` set this writes ``config.json``, ``summary.csv``,
    ``aggregate.csv``, ``report.txt`` and one step log per trial under ``logs/``.
    """
    out = None
    if config.output_dir is not None:
        out = Path(config.output_dir)
        try:
            (out / "logs").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"output directory {out} is not writable: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise OSError(f"output directory {out} is not writable")

    jobs = [(config, i) for i in range(config.trials)]
    if workers and workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_logged, jobs))
    else:
        results = [_run_logged(j) for j in jobs]

    summary_text = summary_csv(results)
    # reduce from the serialized values so the CSVs reproduce the statistics exactly
    rows = list(csv.DictReader(io.StringIO(summary_text)))
    stats = aggregate_from_summary(rows)
    rates = pass_rates(results)
    if out is not None:
        (out / "config.json").write_text(json.dumps(config.describe(), indent=2, sort_keys=True) + "\n")
        (out / "summary.csv").write_text(summary_text)
        (out / "aggregate.csv").write_text(aggregate_csv(stats))
        (out / "report.txt").write_text(experiment_report(results, rates))
    return ExperimentSummary(results, stats, rates)


def experiment_report(results, rates) -> str:
    lines = [f"trials={len(results)}"]
    lines += [f"pass_rate.{k}={fmt(v)}" for k, v in rates.items()]
    for r in results:
        lines.append(f"[trial {r.trial}]")
        lines.append(r.audit.to_text())
    return "\n".join(lines) + "\n"


def replay_steps(rows, alpha: float) -> dict:
    """Recompute running metrics from a complete (stride-1) step log.

    Uses the same accumulation order as :class:`MetricsLedger`, so the results
    match it bit for bit.
    """
    answered = abstained = 0
    error_mass = fdr_risk = realized = 0.0
    last_t = 0
    for row in rows:
        t = int(row["t"])
        if t != last_t + 1:
            raise ValueError(f"step log is not contiguous at t={t}")
        last_t = t
        e = float(row["e"])
        if row["accepted"] == "1":
            answered += 1
            error_mass += e
            fdr_risk += e - alpha
        else:
            abstained += 1
        realized += float(row["loss"])
    fdr_value = error_mass / answered if answered else alpha
    return {
        "T": last_t,
        "fdr": fdr_value,
        "ineff": abstained / last_t if last_t else 0.0,
        "fdr_risk": fdr_risk,
        "realized_loss": realized,
        "answered": answered,
        "error_mass": error_mass,
    }


def audit_run(run_dir) -> tuple[bool, list[str], str]:
    """Re-check a run directory written by :func:`run_experiment`.

    Every summary row's bounds are recomputed from its own values; step logs
    are replayed when complete, otherwise their final rows are compared with
    the summary. Returns ``(ok, violations, report_text)``.
    """
    run_dir = Path(run_dir)
    cfg = json.loads((run_dir / "config.json").read_text())
    rows = read_summary(run_dir / "summary.csv")
    audit_cfg = AuditConfig(cfg["delta"])
    violations = []
    lines = [f"run={run_dir}", f"trials={len(rows)}"]
    n_ok = {"lemma1": 0, "fdrbound": 0, "regret": 0}
    for row in rows:
        trial = int(row["trial"])
        T = int(row["T"])
        rep = audit_values(
            T, float(row["alpha"]), float(row["lambda"]), float(row["fdr"]), float(row["ineff"]),
            float(row["regret"]), float(row["fdr_risk"]), cfg["grid_size"], audit_cfg,
        )
        stored_rhs = float(row["lemma1_rhs"])
        tag = f"trial {trial}"
        if not rep.lemma1_ok:
            violations.append(f"{tag}: lemma1_ok: fdr_risk={rep.fdr_risk:.17g} > lemma1_rhs={rep.lemma1_rhs:.17g}")
        elif row["lemma1_ok"] != "1":
            violations.append(f"{tag}: lemma1_ok recorded as {row['lemma1_ok']!r} but recomputed as pass "
                              f"(fdr_risk={rep.fdr_risk:.17g}, lemma1_rhs={rep.lemma1_rhs:.17g})")
        if not math.isclose(stored_rhs, rep.lemma1_rhs, rel_tol=1e-12, abs_tol=1e-9):
            violations.append(f"{tag}: lemma1_rhs stored={stored_rhs:.17g} recomputed={rep.lemma1_rhs:.17g}")
        if row["fdrbound_ok"] != fmt(rep.fdrbound_ok):
            violations.append(f"{tag}: fdrbound_ok recorded as {row['fdrbound_ok']!r} "
                              f"but R/T={rep.fdr_risk / T:.17g} vs bound={rep.fdr_risk_bound:.17g}")
        if rep.fdr_gap_ok is False:
            violations.append(f"{tag}: fdr_gap_ok: fdr-alpha={rep.fdr_gap:.17g} > bound={rep.fdr_gap_bound:.17g}")
        violations += _check_step_log(run_dir, trial, row, cfg)
        n_ok["lemma1"] += rep.lemma1_ok
        n_ok["fdrbound"] += rep.fdrbound_ok
        n_ok["regret"] += rep.regret_ok
        lines.append(f"[{tag}]")
        lines.append(rep.to_text())
    n = max(len(rows), 1)
    lines[2:2] = [f"pass_rate.{k}={fmt(v / n)}" for k, v in n_ok.items()]
    lines.append(f"violations={len(violations)}")
    return not violations, violations, "\n".join(lines) + "\n"


def _check_step_log(run_dir: Path, trial: int, row: dict, cfg: dict) -> list[str]:
    path = run_dir / "logs" / f"trial_{trial:04d}.csv"
    tag = f"trial {trial}"
    if not path.exists():
        return [f"{tag}: missing step log {path.name}"]
    with open(path, newline="") as fh:
        steps = list(csv.DictReader(fh))
    if not steps:
        return [f"{tag}: empty step log"]
    out = []
    alpha = float(row["alpha"])
    if cfg["log_every"] == 1:
        try:
            rep = replay_steps(steps, alpha)
        except ValueError as exc:
            return [f"{tag}: {exc}"]
        checks = [("T", rep["T"], int(row["T"])), ("fdr", rep["fdr"], float(row["fdr"])),
                  ("ineff", rep["ineff"], float(row["ineff"])), ("fdr_risk", rep["fdr_risk"], float(row["fdr_risk"]))]
    else:
        last = steps[-1]
        checks = [("T", int(last["t"]), int(row["T"])), ("fdr", float(last["cum_fdr"]), float(row["fdr"])),
                  ("ineff", float(last["cum_ineff"]), float(row["ineff"]))]
    for name, from_log, from_summary in checks:
        if from_log != from_summary:
            out.append(f"{tag}: {name} step log={fmt(from_log)} summary={fmt(from_summary)}")
    return out
