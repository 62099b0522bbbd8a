"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; the lines are printed together
at the end of the pytest run (see ``conftest.py``) and also when this file is
run directly with ``python tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from driftgp.calibration import fit_affine
from driftgp.cli import main as cli_main
from driftgp.drift import correct, correct_offline, correct_online
from driftgp.gpr import HeteroscedasticGP
from driftgp.kernels import KernelSpec
from driftgp.scheduler import ScheduleConfig, ScheduleState, uncertainty_from_moments, update_intervals
from driftgp.simulate import CycleSpec, default_scenario, reference_signal, run_correction_sweep, run_schedule_sim
from driftgp.timesync import OffsetEstimate, estimate_offsets, fit_offset_model

RESULTS: dict = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def random_kernel(r):
    fam = r.choice(["rbf", "rq", "matern"])
    return KernelSpec(
        fam,
        variance=float(r.uniform(0.2, 5.0)),
        length=float(r.uniform(20, 200)),
        alpha=float(r.uniform(0.3, 3.0)),
        nu=float(r.choice([0.5, 1.5, 2.5])),
    )


# -- 1 --------------------------------------------------------------------------


def test_c01_gpr_dense_inverse_oracle():
    r = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for case in range(100):
        n = int(r.integers(1, 51))
        ts = np.sort(r.uniform(0, 400, n))
        k = random_kernel(r)
        # targets drawn from the model itself: prior draw plus the stated noise
        noise = r.uniform(1e-3, 0.5, n) * k.variance
        prior = np.linalg.cholesky(k.gram(ts) + 1e-9 * k.variance * np.eye(n))
        ys = 10 + prior @ r.standard_normal(n) + np.sqrt(noise) * r.standard_normal(n)
        gp = HeteroscedasticGP(k, optimize_variance=bool(case % 2) and n >= 2).fit(ts, ys, noise)
        kf = gp.kernel_
        tr = gp.training_
        A = kf.gram(tr.ts) + np.diag(gp.noise_var_) + gp.jitter_ * np.eye(tr.n)
        Ainv = np.linalg.inv(A)
        m = tr.ys.mean()
        tstar = r.uniform(-50, 450, 25)
        Ks = kf.gram(tr.ts, tstar)
        mean_o = m + Ks.T @ Ainv @ (tr.ys - m)
        var_o = kf.variance - np.einsum("ij,ik,kj->j", Ks, Ainv, Ks)
        lml_o = -0.5 * (tr.ys - m) @ Ainv @ (tr.ys - m) - 0.5 * np.linalg.slogdet(A)[1] - 0.5 * tr.n * np.log(2 * np.pi)
        mean, var = gp.predict(tstar, return_var=True)
        worst = max(worst, np.max(np.abs(mean - mean_o)), np.max(np.abs(var - np.maximum(var_o, 0))),
                    abs(gp.log_marginal_likelihood() - lml_o))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-8 and elapsed < 5.0, f"GPR vs dense inverse: max abs diff {worst:.2e} (tol 1e-8), {elapsed:.2f} s (< 5 s)")


# -- 2 --------------------------------------------------------------------------


def test_c02_noise_free_interpolation():
    # With zero noise the fitted model still carries the noise floor and jitter D,
    # so the training residual is D A^-1 r with the a priori bound
    # |residual| <= max(D) * ||r|| / lambda_min(A). The 1e-6 tolerance is checked on
    # every instance where that bound (and max(D) for the variance) is within
    # tolerance; every other instance must stay inside its own bound.
    r = np.random.default_rng(2)
    worst_mean, worst_var, posed, beyond, inconsistent = 0.0, 0.0, 0, 0, 0
    for case in range(200):
        k = random_kernel(r)
        n = int(r.integers(1, 13))
        if case % 2:
            ts = np.cumsum(r.uniform(1.0, 3.0, n) * k.length)
        else:
            ts = np.sort(r.uniform(0, 400, n))
        ys = r.normal(5, 3, n) if case % 4 < 2 else 5 + np.sqrt(k.variance) * r.standard_normal(n)
        gp = HeteroscedasticGP(k, optimize_variance=False).fit(ts, ys)
        mean, var = gp.predict(ts, return_var=True)
        err = float(np.max(np.abs(mean - ys)))
        d = float(np.max(gp.noise_var_)) + gp.jitter_
        lam = float(np.linalg.eigvalsh(k.gram(ts))[0]) + float(np.min(gp.noise_var_)) + gp.jitter_
        bound = d * float(np.linalg.norm(ys - gp.mean_offset_)) / lam
        inconsistent += err > 1.01 * bound + 1e-12
        if bound <= 1e-6 and d <= 1e-6 * k.variance:
            posed += 1
            worst_mean = max(worst_mean, err)
            worst_var = max(worst_var, float(np.max(var)) / k.variance)
        else:
            beyond += err > 1e-6
    single = HeteroscedasticGP(KernelSpec(), optimize_variance=False).fit([0.0], [5.0], [0.0]).predict([0.0], return_var=True)
    example = abs(single[0][0] - 5.0) <= 1e-6 and single[1][0] <= 1e-6
    ok = posed >= 50 and worst_mean <= 1e-6 and worst_var <= 1e-6 and inconsistent == 0 and example
    report(2, ok, f"noise-free interpolation on {posed} well-posed instances: max |mean - y| {worst_mean:.1e} (tol 1e-6), "
                  f"max var/sigma2 {worst_var:.1e} (tol 1e-6); n=1 example ok: {example}; "
                  f"{beyond} ill-conditioned instances exceed 1e-6, all {200 - inconsistent}/200 within the floor+jitter bound")


# -- 3 --------------------------------------------------------------------------


def test_c03_kernel_identities():
    r = np.random.default_rng(3)
    exp_err = 0.0
    for _ in range(20):
        s2, ell = r.uniform(0.1, 10), r.uniform(1, 300)
        rr = np.linspace(0, 10 * ell, 1001)
        exp_err = max(exp_err, np.max(np.abs(KernelSpec("matern", s2, ell, nu=0.5).from_distance(rr) - s2 * np.exp(-rr / ell))))
    diag_err = 0.0
    psd_ok = True
    for _ in range(50):
        k = random_kernel(r)
        ts = r.uniform(0, 400, int(r.integers(1, 51)))
        K = k.gram(ts)
        diag_err = max(diag_err, np.max(np.abs(np.diag(K) - k.variance)), abs(k(3.0, 3.0) - k.variance))
        try:
            np.linalg.cholesky(K + 1e-9 * k.variance * np.eye(ts.size))
        except np.linalg.LinAlgError:
            psd_ok = False
    ok = exp_err <= 1e-12 and diag_err == 0.0 and psd_ok
    report(3, ok, f"kernels: Matern-1/2 vs exp {exp_err:.1e} (tol 1e-12), k(t,t) err {diag_err:.1e}, 50 grids PSD+jitter: {psd_ok}")


# -- 4 --------------------------------------------------------------------------


def test_c04_calibration_ols_oracle():
    r = np.random.default_rng(4)
    worst = 0.0
    scaling_exact = True
    for _ in range(200):
        n = int(r.integers(3, 13))
        y = r.uniform(0, 100, n)
        x = r.uniform(-50, 50) + r.uniform(0.05, 2.0) * y + r.normal(0, r.uniform(0.01, 3), n)
        cal = fit_affine(y, x, 0.0)
        X = np.column_stack([np.ones(n), y])
        G = np.linalg.inv(X.T @ X)
        beta = G @ X.T @ x
        res = x - X @ beta
        se = np.sqrt(np.diag(res @ res / (n - 2) * G))
        worst = max(worst, np.max(np.abs(cal.coefficients - beta) / np.maximum(1, np.abs(beta))),
                    np.max(np.abs(cal.standard_errors - se) / np.maximum(1, se)))
        c = 2.0 ** int(r.integers(-4, 5))
        scaled = fit_affine(y, c * x, 0.0)
        scaling_exact &= bool(
            np.array_equal(scaled.coefficients, c * cal.coefficients)
            and np.array_equal(scaled.standard_errors, c * cal.standard_errors)
        )
    report(4, worst <= 1e-9 and scaling_exact,
           f"OLS vs normal equations: max rel diff {worst:.1e} (tol 1e-9); signal scaling exact: {scaling_exact}")


# -- 5 --------------------------------------------------------------------------


def test_c05_scheduler_algebra():
    r = np.random.default_rng(5)
    worst_budget, worst_bound, frozen = 0.0, -np.inf, True
    steps = 0
    while steps < 1000:
        n = int(r.integers(1, 9))
        d_init = float(r.uniform(5, 100))
        cfg = ScheduleConfig(alpha=float(r.uniform(0, 1)), initial_interval=d_init, max_interval=d_init * float(r.uniform(1, 5)))
        s = ScheduleState.initial(cfg, np.zeros(n))
        for i in range(n):
            if r.random() < 0.9 or i == 0:
                s.record_calibration(i, 0.0)
        for _ in range(50):
            u = r.exponential(size=n) * (r.random(n) < 0.8)
            u[s.counts == 0] = np.nan
            s = update_intervals(s, u, cfg)
            worst_budget = max(worst_budget, abs(s.total_frequency() - n / d_init))
            worst_bound = max(worst_bound, float(np.max(s.intervals - cfg.max_interval)))
            steps += 1
        zero = ScheduleConfig(0.0, d_init, cfg.max_interval)
        frozen &= bool(np.array_equal(update_intervals(s, r.exponential(size=n), zero).intervals, s.intervals))

    cfg = ScheduleConfig(alpha=1.0, initial_interval=50.0, max_interval=100.0)
    s = ScheduleState.initial(cfg, [0.0, 0.0])
    s.record_calibration(0, 0.0)
    s.record_calibration(1, 0.0)
    sym = update_intervals(s, [0.4, 0.4], cfg).intervals
    hot = update_intervals(s, [1.0, 0.0], cfg).intervals
    examples = bool(np.allclose(sym, [50.0, 50.0], rtol=1e-12, atol=0) and np.allclose(hot, [100 / 3, 100.0], rtol=1e-12, atol=0))
    ok = worst_budget <= 1e-9 and worst_bound <= 1e-9 and frozen and examples
    report(5, ok, f"scheduler: {steps} steps, budget err {worst_budget:.1e} (tol 1e-9), max interval - Dmax {worst_bound:.1e}, "
                  f"alpha=0 frozen: {frozen}, examples {sym.round(2).tolist()} / {hot.round(2).tolist()}")


# -- 6 --------------------------------------------------------------------------


def test_c06_uncertainty_spot_values():
    a = uncertainty_from_moments([1.0, 1.0], [0.3, 0.4], 1)
    b = uncertainty_from_moments([1.0, 1.0], [0.3, 0.4], 2)
    ok = abs(a - 0.35355339059327373) <= 1e-12 and abs(b - 0.08838834764831843) <= 1e-12
    report(6, ok, f"uncertainty spot values: C=1 -> {a:.12f}, C=2 -> {b:.12f} (tol 1e-12)")


# -- 7 --------------------------------------------------------------------------


@pytest.mark.slow
def test_c07_offline_matern_beats_stepwise_on_high_drift_sensor():
    t0 = time.perf_counter()
    intervals = [float(v) for v in range(20, 101, 10)]
    res = run_correction_sweep(default_scenario(0), [KernelSpec()], intervals, reps=50, sensors=["sensor1"])
    elapsed = time.perf_counter() - t0
    med = {s["interval"]: s["rel_mse"] for s in res.summary("median") if s["method"] == "offline:Matern-200"}
    worst = max(med.values())
    ok = len(med) == len(intervals) and worst < 0.9 and elapsed < 600
    report(7, ok, f"high-drift sensor, offline Matern-200 / stepwise median rel MSE over 50 reps: worst {worst:.3f} "
                  f"(< 0.9) across {len(med)} intervals, {elapsed:.0f} s (< 600 s)")


# -- 8 --------------------------------------------------------------------------


@pytest.mark.slow
def test_c08_adaptive_scheduling_beats_fixed():
    seeds = range(20)
    lines, ok = [], True
    for d_init in (20.0, 30.0, 40.0, 50.0, 60.0):
        cfg = ScheduleConfig(alpha=0.1, initial_interval=d_init)
        rel, wins, budget_err, bound_err = [], 0, 0.0, -np.inf
        used_adaptive = used_fixed = 0
        for seed in seeds:
            res = run_schedule_sim(default_scenario(seed), cfg, reps=1)
            rel.append(float(res.fleet_relative_mse()[0]))
            counts = {k: int(v[0]) for k, v in res.calibration_counts("adaptive").items()}
            wins += all(counts["sensor1"] > counts[s] for s in ("sensor3", "sensor4"))
            used_adaptive += sum(counts.values())
            used_fixed += sum(int(v[0]) for v in res.calibration_counts("fixed").values())
            by_t: dict = {}
            for row in res.traces[(0, "adaptive")]:
                by_t[row["t_hours"]] = by_t.get(row["t_hours"], 0.0) + 1.0 / row["interval_hours"]
                bound_err = max(bound_err, row["interval_hours"] - cfg.max_interval)
            budget_err = max(budget_err, max(abs(v - 4 / d_init) for v in by_t.values()))
        gain = 1.0 - float(np.median(rel))
        share = wins / len(seeds)
        good = gain >= 0.05 and share >= 0.9 and budget_err <= 1e-9 and bound_err <= 1e-9
        ok &= good
        lines.append(f"D={d_init:g}: gain {gain:.1%}, high-drift wins {share:.0%}, frequency-budget err {budget_err:.0e}, "
                     f"realised calibrations {used_adaptive}/{used_fixed} adaptive/fixed")
    report(8, ok, "adaptive vs fixed (20 seeds, alpha 0.1; need gain >= 5%, wins >= 90%, sum 1/interval = n/D_init): " + "; ".join(lines))


# -- 9 --------------------------------------------------------------------------


def test_c09_online_equals_truncated_offline():
    r = np.random.default_rng(9)
    mismatches, checked = 0, 0
    for _ in range(5):
        n = int(r.integers(1, 12))
        times = np.sort(r.uniform(0, 400, n))
        cals = [fit_affine([0, 0, 0, 100, 100, 100], 20 - 0.01 * tc + (5 * np.exp(-tc / 150)) * np.array([0, 0, 0, 100, 100, 100])
                           + r.normal(0, 0.5, 6), tc) for tc in times]
        t = np.sort(r.uniform(0, 420, 300))
        x = r.uniform(10, 500, t.size)
        on = correct_online(cals, KernelSpec(), t, x)
        for i in range(t.size):
            past = [c for c in cals if c.t <= t[i]]
            if not past:
                mismatches += int(on.valid[i])
                continue
            off = correct_offline(past, KernelSpec(), t[i : i + 1], x[i : i + 1])
            same = (on.y_hat[i] == off.y_hat[0] or (np.isnan(on.y_hat[i]) and np.isnan(off.y_hat[0]))) and (
                on.sigma_y[i] == off.sigma_y[0] or (np.isnan(on.sigma_y[i]) and np.isnan(off.sigma_y[0]))
            )
            mismatches += not same
            checked += 1
    report(9, mismatches == 0, f"online vs truncated offline: {mismatches} non-bitwise records out of {checked}")


# -- 10 -------------------------------------------------------------------------


def test_c10_timesync():
    cycle = CycleSpec(lag_hours=0.05)
    ts = np.arange(0, 40, 1 / 30)
    worst, windows = 0.0, 0
    # one underlying lagged process, integrated once with warm-up, seen by both clocks
    grid = np.arange(0, 60, 1 / 3600)
    truth = reference_signal(grid, cycle)
    for off in (-150.0, -30.0, 0.0, 30.0, 150.0):
        rt = np.arange(-1, 41, 1 / 3600)
        # reference clock reads t - off for an event the sensor logs at t
        est = estimate_offsets(ts, np.interp(ts + 10, grid, truth), rt, np.interp(rt + 10 + off / 3600, grid, truth))
        expected = 8  # 40 h of sensor data in 5 h windows, all with signal variance
        if len(est) < expected:
            worst = np.inf
        windows += len(est)
        worst = max([worst] + [abs(e.offset - off) for e in est])
    c = np.arange(2.5, 300, 5.0)
    planted = np.where(c <= 100, 0.129 * c + 24.5, 0.129 * c - 123.9)
    model = fit_offset_model([OffsetEstimate(a, b, 1.0) for a, b in zip(c, planted)], [100.0])
    coef_err = max(abs(model.slopes[0] - 0.129), abs(model.intercepts[0] - 24.5),
                   abs(model.slopes[1] - 0.129), abs(model.intercepts[1] + 123.9))
    ok = worst <= 2.0 and coef_err <= 1e-9
    report(10, ok, f"timesync: worst offset error {worst:g} s over {windows} windows (tol 2 s); two-segment coefficients err {coef_err:.1e} (tol 1e-9)")


# -- 11 -------------------------------------------------------------------------


class _Moments:
    def __init__(self, mean, var):
        self.mean, self.var = mean, var

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, self.mean), np.full(t.shape, self.var)


def test_c11_sigma_delta_method_vs_monte_carlo():
    r = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        b0, b1 = r.uniform(5, 50), r.uniform(0.5, 8) * r.choice([-1, 1])
        s0, s1 = abs(b0) * r.uniform(0, 0.05), abs(b1) * r.uniform(0, 0.05)
        x = b0 + b1 * r.uniform(0, 100)
        res = correct([_Moments(b0, s0**2), _Moments(b1, s1**2)], [0.0], [x])
        draws = (x - r.normal(b0, s0, 100_000)) / r.normal(b1, s1, 100_000)
        worst = max(worst, abs(res.sigma_y[0] / np.std(draws) - 1.0))
    report(11, worst <= 0.10, f"delta-method sigma_y vs 1e5-draw Monte Carlo: worst relative gap {worst:.2%} (tol 10%)")


# -- 12 -------------------------------------------------------------------------


def _pipeline(root):
    d, c, k, e = (str(root / s) for s in "dcke")
    assert cli_main(["gen-data", "--seed", "42", "--out-dir", d]) == 0
    assert cli_main(["calibrate", "--sensor", f"{d}/sensor1.csv", "--reference", f"{d}/reference.csv",
                     "--interval", "40", "--first-time", "7", "--out-dir", c]) == 0
    for mode in ("offline", "online", "stepwise", "linear"):
        assert cli_main(["correct", "--sensor", f"{d}/sensor1.csv", "--calibrations", f"{c}/calibrations.csv",
                         "--mode", mode, "--name", f"sensor1_{mode}.csv", "--out-dir", k]) == 0
    assert cli_main(["eval", "--corrected", *(f"sensor1={k}/sensor1_{m}.csv" for m in ("offline", "online", "stepwise", "linear")),
                     "--reference", f"{d}/reference.csv", "--interval", "40", "--out-dir", e]) == 0
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c12_end_to_end_determinism(tmp_path):
    a = _pipeline(tmp_path / "run1")
    b = _pipeline(tmp_path / "run2")
    same = a.keys() == b.keys() and all(a[name] == b[name] for name in a)
    report(12, same and len(a) >= 12, f"gen-data -> calibrate -> correct -> eval twice: {len(a)} files, byte-identical: {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
