"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

These run the full pipelines at desk scale with fixed seeds. Expect a few
minutes for the closed-form checks and tens of minutes for the fitting
criteria (5, 6, 7).
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import expon, weibull_min

import diffexc as dx
from diffexc.core import MarkedArrivals, RngSeed, TimeGrid, per_mark_interarrivals
from diffexc.drift import DriftSpec, init_params, param_count, drift_vjp, delta_gradient
from diffexc.excursions import sample_signed_excursions
from diffexc.inference import FitConfig, fit, fit_baseline_bridge
from diffexc.likelihood import (conditional_intensity,
                                conditional_intensity_from_density, elbo,
                                excursion_log_density, levy_cdf,
                                levy_excursion_log_density, ou_fht_cdf,
                                ou_fht_density)
from diffexc.metrics import drift_relative_mse, gen_renewal, ks_statistic
from diffexc.sde import sample_arrivals_until, sample_fht

OU = DriftSpec("ou")
ZERO = DriftSpec("linear")


def _report(num, name, ok, detail=""):
    print(f"\nACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def _ks_vs_cdf(samples, cdf):
    x = np.sort(np.asarray(samples))
    n = x.size
    F = np.asarray(cdf(x))
    return float(max(np.max(np.abs(np.arange(1, n + 1) / n - F)),
                     np.max(np.abs(np.arange(n) / n - F))))


def test_criterion_01_levy_law():
    # driftless unit-volatility diffusion, dt=1e-3, delta=0.1, >= 2000
    # delta-excursions; per-mark interarrivals against 2 Phi(-2 delta/sqrt(tau))
    t0 = time.time()
    delta, dt = 0.1, 1e-3
    seqs = sample_arrivals_until(ZERO, [0.0], dt, 1e4, 1.0, delta, RngSeed(7),
                                 2000, max_paths=40)
    durs = np.concatenate([per_mark_interarrivals(s)[0] for s in seqs])
    ks = _ks_vs_cdf(durs, lambda x: 2.0 * ndtr(-2.0 * delta / np.sqrt(x)))
    el = time.time() - t0
    _report(1, "Levy excursion-law reproduction",
            durs.size >= 2000 and ks <= 0.05 and el <= 120.0,
            f"n={durs.size} KS={ks:.4f} (<=0.05) runtime={el:.0f}s (<=120)")


def test_criterion_02_prop1_consistency():
    # model CDF from exp(excursion_log_density), K=512, Riemann over 200
    # grid points, against 5000 simulated OU interarrivals
    t0 = time.time()
    delta = 0.1
    seqs = sample_arrivals_until(OU, [], 1e-3, 100.0, 1.0, delta, RngSeed(2024),
                                 5000, max_paths=60)
    durs = np.concatenate([per_mark_interarrivals(s)[0] for s in seqs])
    grid = np.geomspace(np.quantile(durs, 0.0005), durs.max() * 1.1, 201)
    logp = np.empty(200)
    for i, tau in enumerate(grid[:-1]):
        b = sample_signed_excursions(float(tau), 512, delta, 100,
                                     RngSeed(31).child(i))
        logp[i] = excursion_log_density(float(tau), delta, OU, [], b).value
    cdf = np.concatenate([[0.0], np.cumsum(np.exp(logp) * np.diff(grid))])
    x = np.sort(durs)
    F = np.interp(x, grid, cdf)
    n = x.size
    ks = float(max(np.max(np.abs(np.arange(1, n + 1) / n - F)),
                   np.max(np.abs(np.arange(n) / n - F))))
    el = time.time() - t0
    _report(2, "change-of-measure density consistency",
            n >= 5000 and ks <= 0.08 and el <= 600.0,
            f"n={n} KS={ks:.4f} (<=0.08) runtime={el:.0f}s (<=600)")


def test_criterion_03_ou_fht_oracle():
    # The closed form is the law of an OU pulled toward the boundary with
    # volatility sqrt(2), started |alpha - x0| away (it matches hitting the
    # mean level, not climbing away from it); simulate exactly that process
    # with x0=0, alpha=1.
    t0 = time.time()
    val = ou_fht_density(1.0, 0.0, 1.0)
    ok_val = abs(val - 0.3376) <= 5e-4
    samples = sample_fht(lambda x, t: 1.0 - x, None, 0.0, 1.0, 1e-3,
                         RngSeed(11), 40.0, n=10_000, sigma=math.sqrt(2.0))
    ks = _ks_vs_cdf(samples, lambda tt: ou_fht_cdf(tt, 0.0, 1.0))
    el = time.time() - t0
    _report(3, "OU first-hitting oracle",
            ok_val and ks <= 0.05,
            f"density(1)={val:.5f} (0.3376 +- 5e-4) KS={ks:.4f} (<=0.05) "
            f"runtime={el:.0f}s")


def test_criterion_04_gradient_correctness():
    # analytic objective gradient vs central finite differences for every
    # drift family; delta-gradient matches the closed form to 1e-10
    from diffexc.inference import _data_term, _penalty_term, _penalty_grid, \
        prepare_interarrival_data
    from diffexc.likelihood import sample_unit_population

    gen = RngSeed(40).generator()
    durs = gen.exponential(size=12) + 0.05
    marks = gen.integers(0, 2, size=12)
    data = MarkedArrivals(np.cumsum(durs), marks)
    seq_data = prepare_interarrival_data([data], "pooled")
    delta = 0.15
    K, m = 6, 24
    pop = sample_unit_population(32, m, RngSeed(41))
    grid = _penalty_grid(seq_data[0]["taus"], 30)
    specs = [
        DriftSpec("linear"),
        DriftSpec("mlp", width=6, depth=3),
        DriftSpec("mlp", width=5, depth=2, activation="leaky-relu",
                  posenc=(1.0,), time_input=True),
        DriftSpec("kernel", base=DriftSpec("ou"), eta=0.8, source="history"),
        DriftSpec("kernel", base=DriftSpec("linear"), eta=1.1,
                  source="exogenous"),
        DriftSpec("hawkes2"),
    ]
    worst = 0.0
    for spec in specs:
        batches = [[sample_signed_excursions(
            float(tau), K, min(delta, 1.5 * math.sqrt(tau)), m,
            RngSeed(42).child(i), sign=int(s)).values
            for i, (tau, s) in enumerate(zip(seq_data[0]["taus"],
                                             seq_data[0]["signs"]))]]
        n_par = param_count(spec)
        params = init_params(spec, RngSeed(43)).values + \
            0.05 * gen.standard_normal(n_par)

        def obj_and_grad(v):
            val, g = _data_term(spec, v, seq_data, batches, delta, 10 ** 9,
                                "exact")
            pen, _, gp = _penalty_term(spec, v, delta, grid, pop)
            return val - pen, g - gp

        _, g = obj_and_grad(params)
        h = 1e-5
        idx = gen.choice(n_par, size=min(20, n_par), replace=False)
        for i in idx:
            e = np.zeros(n_par)
            e[i] = h
            fd = (obj_and_grad(params + e)[0] - obj_and_grad(params - e)[0]) / (2 * h)
            rel = abs(g[i] - fd) / max(abs(fd), abs(g[i]), 1e-6)
            worst = max(worst, rel)
        assert worst <= 1e-5, f"{spec.family}: rel err {worst:.2e}"
    dg = delta_gradient(0.37, durs)
    closed = float(np.sum(1.0 / 0.37 - 4.0 * 0.37 / durs))
    ok_delta = abs(dg - closed) <= 1e-10
    _report(4, "gradient correctness",
            worst <= 1e-5 and ok_delta,
            f"max rel err {worst:.2e} (<=1e-5), delta-grad err "
            f"{abs(dg - closed):.1e} (<=1e-10)")


def _criterion5_config(seed):
    return FitConfig(epochs=300, lr_drift=2e-2, K=12, n_steps=80,
                     seed=RngSeed(seed), penalty_K=64, penalty_points=80,
                     interarrival_mode="per_mark", delta_init=0.1,
                     train_delta=False, resample_every=3)


def test_criterion_05_drift_recovery():
    # OU data at dt=0.01 (~2000 interarrivals), linear-family fit; the
    # excursion estimator must land in [-1.4, -0.6] and beat the bridge
    # baseline's relative drift MSE in >= 8/10 paired seeds
    grid = np.linspace(-2.0, 2.0, 81)
    in_band = 0
    beats = 0
    details = []
    for seed in range(10):
        seqs = sample_arrivals_until(OU, [], 0.01, 50.0, 1.0, 0.1,
                                     RngSeed(1000 + seed), 2000, max_paths=80)
        cfg = _criterion5_config(seed)
        th = fit(seqs, ZERO, cfg).final_params.values[0]
        thb = fit_baseline_bridge(seqs, ZERO, cfg).final_params.values[0]
        mse = drift_relative_mse(lambda x: th * x, lambda x: -x, grid)
        mseb = drift_relative_mse(lambda x: thb * x, lambda x: -x, grid)
        in_band += -1.4 <= th <= -0.6
        beats += mse < mseb
        details.append(round(float(th), 3))
    _report(5, "drift recovery vs bridge baseline",
            in_band >= 8 and beats >= 8,
            f"theta in band {in_band}/10, excursion beats bridge {beats}/10, "
            f"thetas={details}")


def test_criterion_06_history_coefficient():
    # w=1 exponential-kernel history task: excursion squared error <= 0.3
    # and below the bridge baseline in >= 8/10 paired seeds
    t0 = time.time()
    kspec = DriftSpec("kernel", base=DriftSpec("ou"), eta=2.0, source="history")
    ok_ex = 0
    beats = 0
    errs = []
    for seed in range(10):
        seqs = [dx.sample_arrivals(kspec, [1.0], 0.0, TimeGrid(0.0, 0.05, 1000),
                                   1.0, 0.0, RngSeed(5000 + seed).child(p))
                for p in range(6)]
        cfg = FitConfig(epochs=300, lr_drift=2e-2, K=16, n_steps=60,
                        seed=RngSeed(seed), lambda_reg=0.0, train_delta=False,
                        resample_every=3)
        w_ex = fit(seqs, kspec, cfg).final_params.values[0]
        w_bb = fit_baseline_bridge(seqs, kspec, cfg).final_params.values[0]
        e_ex = (w_ex - 1.0) ** 2
        e_bb = (w_bb - 1.0) ** 2
        ok_ex += e_ex <= 0.3
        beats += e_ex < e_bb
        errs.append((round(float(e_ex), 3), round(float(e_bb), 3)))
    el = time.time() - t0
    _report(6, "history kernel coefficient",
            ok_ex >= 8 and beats >= 8 and el <= 1200.0,
            f"sqerr<=0.3 in {ok_ex}/10, beats bridge {beats}/10, "
            f"runtime={el:.0f}s (<=1200), (ex, bb)={errs}")


def _fit_renewal(family, params, seed):
    durs = gen_renewal(family, params, 200, RngSeed(42))
    data = MarkedArrivals(np.cumsum(durs), np.zeros(200, dtype=int))
    spec = DriftSpec("mlp", width=16, depth=6)
    cfg = FitConfig(epochs=2000, lr_drift=1e-3, lr_delta=1e-2, K=16, n_steps=60,
                    seed=RngSeed(seed), lambda_reg=1.0, penalty_K=32,
                    penalty_points=60, train_delta=True)
    rep = fit(data, spec, cfg)
    seqs = sample_arrivals_until(spec, rep.final_params, 1e-3, 50.0, 1.0,
                                 rep.final_delta, RngSeed(77), 1100,
                                 max_paths=120)
    return np.concatenate([per_mark_interarrivals(s)[0] for s in seqs])


def test_criterion_07_renewal_roundtrip():
    # fit exponential(1) with 200 samples (MLP 16x6, 2000 epochs), sample
    # >= 1000 interarrivals, KS <= 0.10; Weibull(1, 1.5) KS <= 0.12
    s_exp = _fit_renewal("exponential", {"lam": 1.0}, 0)
    ks_exp = ks_statistic(s_exp, expon().cdf)
    s_wei = _fit_renewal("weibull", {"lam": 1.0, "k": 1.5}, 1)
    ks_wei = ks_statistic(s_wei, weibull_min(c=1.5, scale=1.0).cdf)
    _report(7, "renewal round trip",
            s_exp.size >= 1000 and ks_exp <= 0.10
            and s_wei.size >= 1000 and ks_wei <= 0.12,
            f"exp: n={s_exp.size} KS={ks_exp:.4f} (<=0.10); "
            f"weibull: n={s_wei.size} KS={ks_wei:.4f} (<=0.12)")


def test_criterion_08_conditional_intensity():
    # analytic exponential density -> flat unit intensity; driftless model
    # intensity at t=1, delta=0.5 equals 0.3544 within MC tolerance
    t = np.arange(0.0, 3.0001, 1e-3)
    lam = conditional_intensity_from_density(lambda s: math.exp(-s), t)
    sel = t >= 0.01
    worst = float(np.abs(lam[sel] - 1.0).max())
    grid = np.arange(0.01, 1.0001, 0.002)
    lam_model = conditional_intensity(ZERO, [0.0], 0.5, grid, K=512,
                                      rng=RngSeed(28))
    v = float(lam_model[-1])
    _report(8, "conditional intensity",
            worst < 1e-2 and abs(v - 0.3544) <= 0.02,
            f"max |lam-1|={worst:.4f} (<1e-2); model lam(1)={v:.4f} "
            f"(0.3544 +- 0.02)")


def _run_cli(args):
    res = subprocess.run([sys.executable, "-m", "diffexc.cli"] + args,
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res.stdout


def test_criterion_09_pipeline_determinism(tmp_path):
    # every pipeline is bit-identical across two runs with equal seeds
    gen = np.random.default_rng(3)
    data = tmp_path / "data.csv"
    with open(data, "w") as fh:
        fh.write("seq_id,time,mark\n")
        for t in np.cumsum(gen.exponential(size=60)):
            fh.write(f"0,{t!r},0\n")
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"family": "linear", "input_dim": 1,
                                "time_input": False}))
    outputs = {}
    for run in (0, 1):
        d = tmp_path / f"run{run}"
        d.mkdir()
        _run_cli(["simulate", "--spec", str(spec), "--params", "-1.0",
                  "--dt", "0.01", "--horizon", "5", "--delta", "0.1",
                  "--seed", "9", "--out-path", str(d / "path.csv"),
                  "--out-arrivals", str(d / "arr.csv")])
        _run_cli(["fit", "--data", str(data), "--spec", str(spec),
                  "--out", str(d / "ck.json"), "--loss-csv", str(d / "loss.csv"),
                  "--epochs", "5", "--k", "8", "--n-steps", "30", "--seed", "9"])
        _run_cli(["sample", "--checkpoint", str(d / "ck.json"),
                  "--out", str(d / "sampled.csv"), "--dt", "0.01",
                  "--horizon", "20", "--n-arrivals", "40", "--seed", "9"])
        _run_cli(["eval", "--data-a", str(d / "sampled.csv"), "--reference",
                  "exponential:lam=1", "--out", str(d / "metrics.json"),
                  "--qq-file", str(d / "qq.csv"), "--seed", "9"])
        _run_cli(["intensity", "--checkpoint", str(d / "ck.json"),
                  "--t-max", "0.5", "--grid-dt", "0.05", "--k", "64",
                  "--seed", "9", "--out", str(d / "intensity.csv")])
        outputs[run] = {f.name: f.read_bytes() for f in d.iterdir()}
    same = all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    _report(9, "pipeline determinism",
            set(outputs[0]) == set(outputs[1]) and same,
            f"files={sorted(outputs[0])}")


def test_criterion_10_jensen_bound():
    # ELBO <= Monte Carlo log-likelihood + 3 SE across 100 random drifts
    taus = [0.4, 1.2, 3.0, 0.9]
    delta = 0.15
    batches = [sample_signed_excursions(t, 32, delta, 60, RngSeed(12, i))
               for i, t in enumerate(taus)]
    spec = DriftSpec("mlp", width=8, depth=2)
    violations = 0
    for seed in range(100):
        params = init_params(spec, RngSeed(seed, 77))
        lower = elbo(taus, delta, spec, params, batches)
        ests = [excursion_log_density(t, delta, spec, params, b)
                for t, b in zip(taus, batches)]
        upper = sum(e.value for e in ests) + 3.0 * sum(e.std_error for e in ests)
        violations += lower > upper + 1e-10
    _report(10, "Jensen bound", violations == 0,
            f"violations={violations}/100")
