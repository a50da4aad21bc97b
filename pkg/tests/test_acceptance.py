"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see conftest) and then asserts. The
large stochastic runs are shared between the FDR and regret criteria.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from exaul.core import (
    HypothesisGrid,
    LossParams,
    RoundOutcome,
    compute_loss,
    estimate_loss_exaul,
    estimate_loss_exaul_reference,
    unlock_set,
)
from exaul.environments import Schedule, gen_pool
from exaul.harness import ExperimentConfig, read_summary, replay_steps, run_experiment, run_trial
from exaul.learners import default_rates
from exaul.metrics import brute_force_losses, regret_bound

pytestmark = pytest.mark.slow

T = 30000
GRID = 1000


@pytest.fixture(scope="session")
def main_pools():
    return gen_pool(10000, 101, "well", 0.3), gen_pool(10000, 102, "over", 0.4)


def run_trials(algo, schedule, trials, **kw):
    cfg = ExperimentConfig(algo, schedule, horizon=kw.pop("horizon", T), grid_size=kw.pop("grid_size", GRID),
                           trials=trials, **kw)
    return [run_trial(cfg, i) for i in range(trials)]


@pytest.fixture(scope="session")
def stochastic_runs(main_pools):
    sched = Schedule("stochastic", main_pools[:1])
    out = {}
    for algo in ("exaul", "exp3ix-ca"):
        start = time.perf_counter()
        out[algo] = (run_trials(algo, sched, 100, alpha=0.05), time.perf_counter() - start)
    return out


def random_instance(rng):
    n = int(rng.integers(2, 65))
    policy = rng.dirichlet(np.ones(n))
    score = float(rng.random()) if rng.random() < 0.8 else float(rng.integers(n) / (n - 1)) * (1 - 2**-52)
    params = LossParams(float(rng.uniform(0.01, 0.5)), float(rng.uniform(0.0, 20.0)))
    return HypothesisGrid(n), policy, score, params, float(rng.random())


def test_criterion_01_unbiased_estimator(record_criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        grid, p, score, params, e_true = random_instance(rng)
        n = grid.size
        cut = grid.cut_index(score)
        acc = compute_loss(True, e_true, params).combined
        abst = compute_loss(False, 1.0, params).combined
        # true per-arm loss, arm by arm from the threshold rule
        target = np.array([acc if score >= k / (n - 1) else abst for k in range(n)])
        mean = np.zeros(n)
        for j in range(n):
            mean += p[j] * estimate_loss_exaul(unlock_set(grid, j, score), target[j], p, 0.0)
        worst = max(worst, float(np.max(np.abs(mean - target))))
        assert cut == max(k for k in range(n) if k / (n - 1) <= score)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 1.0
    record_criterion(1, ok, f"max |E[est] - loss| = {worst:.3g} (tol 1e-10), {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_02_literal_estimator(record_criterion):
    rng = np.random.default_rng(2)
    mismatches = 0
    start = time.perf_counter()
    for _ in range(1000):
        grid, p, score, params, e_true = random_instance(rng)
        chosen = int(rng.integers(grid.size))
        gamma = float(rng.uniform(0, 0.1))
        loss = float(rng.random())
        fast = estimate_loss_exaul(unlock_set(grid, chosen, score), loss, p, gamma)
        literal = estimate_loss_exaul_reference(grid, chosen, score, loss, p, gamma)
        mismatches += not np.array_equal(fast, literal)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 1.0
    record_criterion(2, ok, f"{mismatches} of 1000 instances differ (exact), {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_03_reduces_to_ix(main_pools, record_criterion):
    horizon, n = 10_000, 100
    rates = default_rates("exp3ix-ca", horizon, n)
    sched = Schedule("stochastic", main_pools[:1])
    same = 0
    start = time.perf_counter()
    for seed in range(5):
        kw = dict(horizon=horizon, grid_size=n, base_seed=seed, rates=rates)
        ex = run_trial(ExperimentConfig("exaul", sched, singleton_unlock=True, **kw), 0)
        ix = run_trial(ExperimentConfig("exp3ix-ca", sched, **kw), 0)
        same += np.array_equal(ex.arms, ix.arms)
    elapsed = time.perf_counter() - start
    ok = same == 5 and elapsed < 5.0
    record_criterion(3, ok, f"{same}/5 seeds give identical arm sequences, {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_04_lemma1_everywhere(main_pools, record_criterion):
    holds = total = 0
    failures = []
    start = time.perf_counter()
    for env in ("stochastic", "shift-single", "shift-alternating", "shift-gradual", "adversary"):
        sched = Schedule(env, main_pools[:1] if env == "stochastic" else main_pools)
        for algo in ("exaul", "exp3ix-ca", "ew-ca", "no-ca"):
            for res in run_trials(algo, sched, 20, alpha=0.05):
                total += 1
                holds += res.audit.lemma1_ok
                if not res.audit.lemma1_ok:
                    failures.append((env, algo, res.trial))
    elapsed = time.perf_counter() - start
    ok = holds == total == 400 and elapsed < 600
    record_criterion(4, ok, f"lemma holds on {holds}/{total} runs, {elapsed:.0f}s (< 600s) {failures[:3]}")
    assert ok


def test_criterion_05_fdr_control(stochastic_runs, record_criterion):
    alpha = 0.05
    ex, t_ex = stochastic_runs["exaul"]
    ix, t_ix = stochastic_runs["exp3ix-ca"]
    mean_fdr = float(np.mean([r.fdr for r in ex]))
    gap_ex = float(np.mean([abs(r.fdr - alpha) for r in ex]))
    gap_ix = float(np.mean([abs(r.fdr - alpha) for r in ix]))
    limit = alpha + 2 / math.sqrt(T)
    elapsed = t_ex + t_ix
    ok = mean_fdr <= limit and gap_ex <= gap_ix and elapsed < 900
    record_criterion(
        5, ok,
        f"mean FDR {mean_fdr:.4f} <= {limit:.4f}; mean |FDR-a| exaul {gap_ex:.4f} vs exp3ix {gap_ix:.4f}; "
        f"{elapsed:.0f}s (< 900s)",
    )
    assert ok


def test_criterion_06_regret_bound(stochastic_runs, record_criterion):
    ex, elapsed = stochastic_runs["exaul"]
    bound = regret_bound(T, GRID, 0.01)
    within = sum(r.regret <= bound for r in ex)
    worst = max(r.regret for r in ex)
    ok = within >= 99 and elapsed < 600
    record_criterion(6, ok, f"{within}/100 trials within {bound:.1f} (max regret {worst:.1f}), {elapsed:.0f}s (< 600s)")
    assert ok


def test_criterion_07_shift_recovery(record_criterion):
    alpha = 0.10
    pools = gen_pool(10000, 201, "well", 0.2), gen_pool(10000, 202, "well", 0.4)
    start = time.perf_counter()
    runs = run_trials("exaul", Schedule("shift-single", pools), 100, alpha=alpha)
    elapsed = time.perf_counter() - start
    within = sum(r.fdr <= alpha + 0.03 for r in runs)
    ok = within >= 95 and elapsed < 900
    record_criterion(
        7, ok, f"{within}/100 trials with FDR <= {alpha + 0.03:.2f} "
        f"(mean {np.mean([r.fdr for r in runs]):.4f}), {elapsed:.0f}s (< 900s)",
    )
    assert ok


def test_criterion_08_abstaining_not_optimal(record_criterion):
    rng = np.random.default_rng(8)
    n, horizon, alpha = 32, 500, 0.1
    lam = math.sqrt(horizon)
    grid, params = HypothesisGrid(n), LossParams(alpha, lam)
    checked = failures = drawn = 0
    start = time.perf_counter()
    while checked < 50:
        drawn += 1
        pool = gen_pool(int(rng.integers(50, 500)), int(rng.integers(2**32)), str(rng.choice(["well", "over", "under"])),
                        float(rng.uniform(0.05, 0.5)))
        idx = rng.integers(len(pool), size=horizon)
        rounds = [RoundOutcome(float(pool.scores[i]), float(pool.correct[i])) for i in idx]
        losses = brute_force_losses(grid, params, rounds).sum(axis=0)
        scores = np.array([r.score for r in rounds])
        errors = np.array([1 - r.correctness for r in rounds])
        feasible = []
        for k in range(n - 1):
            answered = scores >= k / (n - 1)
            if answered.any() and errors[answered].sum() <= alpha * answered.sum():
                feasible.append((k, horizon - answered.sum()))
        if not feasible:
            continue
        checked += 1
        always_abstain, best = losses[-1], losses.min()
        for k, abstained in feasible:
            margin = (horizon - abstained) / (1 + lam)
            if not (always_abstain - losses[k] >= margin - 1e-9 and always_abstain - best >= margin - 1e-9):
                failures += 1
        if not best < always_abstain:
            failures += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 5.0
    record_criterion(8, ok, f"{failures} failures on {checked} pools ({drawn} drawn), {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_09_determinism_and_replay(main_pools, tmp_path, record_criterion):
    sched = Schedule("shift-gradual", main_pools)
    cfg = dict(horizon=2000, grid_size=200, trials=3, base_seed=77)
    run_experiment(ExperimentConfig("exaul", sched, output_dir=str(tmp_path / "a"), **cfg))
    run_experiment(ExperimentConfig("exaul", sched, output_dir=str(tmp_path / "b"), **cfg))
    identical = (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()

    combos = [(a, e) for a in ("exaul", "exp3ix-ca", "ew-ca", "no-ca")
              for e in ("stochastic", "shift-single", "shift-alternating", "shift-gradual", "adversary")]
    rng = np.random.default_rng(9)
    exact = 0
    for i in rng.choice(len(combos), size=10, replace=False):
        algo, env = combos[i]
        s = Schedule(env, main_pools[:1] if env == "stochastic" else main_pools, chunk=500, window=200)
        out = tmp_path / f"replay_{i}"
        summary = run_experiment(ExperimentConfig(algo, s, horizon=3000, grid_size=200, log_every=1,
                                                  base_seed=int(i), output_dir=str(out)))
        res = summary.results[0]
        rep = replay_steps(read_summary(out / "logs" / "trial_0000.csv"), 0.05)
        exact += (rep["fdr"], rep["ineff"], rep["fdr_risk"], rep["T"]) == (res.fdr, res.ineff, res.fdr_risk, 3000)
    ok = identical and exact == 10
    record_criterion(9, ok, f"summary CSVs byte-identical: {identical}; exact replay on {exact}/10 runs")
    assert ok


def test_criterion_10_rate_schedules(record_criterion):
    mpmath.mp.dps = 50
    worst = 0.0
    for horizon in (100, 10_000, 30_000, 1_000_003):
        for n in (2, 32, 100, 1000, 4096):
            T_, H = mpmath.mpf(horizon), mpmath.mpf(n)
            refs = {
                "exaul": mpmath.sqrt(mpmath.log(H) / T_),
                "exp3ix-ca": mpmath.sqrt(2 * mpmath.log(H) / (T_ * H)),
            }
            for algo, ref in refs.items():
                got = default_rates(algo, horizon, n)
                for value, expected in ((got.eta, ref), (got.gamma, ref / 2)):
                    worst = max(worst, float(abs((mpmath.mpf(value) - expected) / expected)))
    # agreement to 15 significant digits
    ok = worst < 5e-15
    record_criterion(10, ok, f"max relative error vs 50-digit reference = {worst:.2e} (< 5e-15)")
    assert ok
