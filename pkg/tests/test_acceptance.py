"""End-to-end acceptance suite.

Each test checks one numbered claim about the package and prints a single
PASS/FAIL line (pytest runs with ``-s`` so the lines always appear in the
run log). The training-based checks (6, 7, 9) dominate the runtime; the
whole suite completes in roughly ten minutes on a commodity CPU.
"""

import itertools
import time

import numpy as np
import pytest

from risbf import channel, cli, learn, pi, solvers, wmmse
from risbf.config import SystemConfig


def report(num, ok, detail):
    line = f"CRITERION {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(f"\n{line}", flush=True)
    assert ok, line


def rng(seed):
    return np.random.default_rng(seed)


def random_pd(n, r):
    g = (r.standard_normal((n, n)) + 1j * r.standard_normal((n, n))) / np.sqrt(2)
    return g @ g.conj().T + 0.1 * n * np.eye(n)


def random_x(n, r):
    return np.exp(1j * r.uniform(0.0, 2.0 * np.pi, n))


# ---------------------------------------------------------------------------
# 1. power-iteration certificates at scale


def test_criterion_1_pi_certificates():
    t0 = time.perf_counter()
    r = rng(1)
    worst_resid = 0.0
    for _ in range(1000):
        n = int(r.integers(4, 65))
        r_mat = random_pd(n, r)
        quad = pi.QuadraticForm(a=None, beta=None, b=None, gamma=0.0, r=r_mat)
        _, _, cert = pi.pi_solve(quad, random_x(n, r), max_iter=3000, tol=1e-13)
        assert cert.monotone and cert.max_violation <= 1e-9
        assert cert.bound_ok
        rel = cert.stationarity_residual / np.linalg.norm(r_mat)
        worst_resid = max(worst_resid, rel)
        assert rel <= 1e-6
    elapsed = time.perf_counter() - t0
    report(1, elapsed < 30.0,
           f"1000 runs monotone, residual <= {worst_resid:.2e}*||R||_F "
           f"(bound 1e-6), objective within the entrywise bound, "
           f"{elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------------------
# 2. one full WMMSE sweep never increases the surrogate objective


def test_criterion_2_wmmse_descent():
    t0 = time.perf_counter()
    r = rng(2)
    worst = -np.inf
    for _ in range(1000):
        m = int(r.integers(2, 9))
        k = int(r.integers(1, 5))
        h = (r.standard_normal((k, m)) + 1j * r.standard_normal((k, m))) / np.sqrt(2)
        w = (r.standard_normal((m, k)) + 1j * r.standard_normal((m, k))) / np.sqrt(2)
        p_t = float(r.uniform(0.5, 2.0))
        w = wmmse.scale_power(w, p_t)
        alpha = r.uniform(0.5, 2.0, size=k)
        sigma2 = np.full(k, r.uniform(0.05, 0.5))
        u = wmmse.update_u(h, w, sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        before = wmmse.p3_objective(alpha, lam, wmmse.mse(u, h, w, sigma2, p_t))
        w2 = wmmse.update_w(u, lam, h, alpha, sigma2, p_t)
        u2 = wmmse.update_u(h, w2, sigma2, p_t)
        lam2 = wmmse.update_lambda(u2, h, w2)
        after = wmmse.p3_objective(alpha, lam2, wmmse.mse(u2, h, w2, sigma2, p_t))
        worst = max(worst, (after - before) / abs(before))
        assert after <= before + 1e-9 * abs(before)
    elapsed = time.perf_counter() - t0
    report(2, elapsed < 30.0,
           f"1000 sweeps, worst relative increase {worst:.2e} (<= 1e-9), "
           f"{elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------------------
# 3. tiny quantized instance vs exhaustive optimum


def _wmmse_at_fixed_theta(channels, theta, p_t, sweeps=50):
    h = channel.combined_channel(channels, theta)
    w = wmmse.zf_init(h, p_t)
    for _ in range(sweeps):
        u = wmmse.update_u(h, w, channels.sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        w = wmmse.update_w(u, lam, h, channels.alpha, channels.sigma2, p_t)
    return wmmse.wsr(channels, wmmse.scale_power(w, p_t), theta)


def test_criterion_3_tiny_exhaustive_oracle():
    t0 = time.perf_counter()
    cfg = SystemConfig(m=2, k=2, n=3, phase_bits=2, seed=0)
    levels = np.exp(2j * np.pi * np.arange(4) / 4)
    ratios = []
    for seed in range(100):
        r = rng(3000 + seed)
        los = channel.sample_los(cfg, r)
        ch = channel.sample_channels(los, cfg, r)
        got = solvers.wmmse_pi(ch, cfg, 10, r).wsr
        best = max(_wmmse_at_fixed_theta(ch, np.array(pattern), cfg.p_t)
                   for pattern in itertools.product(levels, repeat=3))
        ratios.append(got / best)
    med = float(np.median(ratios))
    elapsed = time.perf_counter() - t0
    report(3, med >= 0.9 and elapsed < 300.0,
           f"median solver/exhaustive WSR ratio {med:.4f} (>= 0.9) over 100 "
           f"seeds, {elapsed:.1f}s (< 5min)")


# ---------------------------------------------------------------------------
# 4. small unimodular quadratic program vs dense phase grid


def test_criterion_4_uqp_grid_oracle():
    t0 = time.perf_counter()
    levels = np.exp(2j * np.pi * np.arange(64) / 64)
    hits = 0
    for seed in range(100):
        r = rng(4000 + seed)
        r_mat = random_pd(3, r)
        quad = pi.QuadraticForm(a=None, beta=None, b=None, gamma=0.0, r=r_mat)
        _, _, cert = pi.pi_solve(quad, random_x(3, r), max_iter=500, tol=1e-12)
        best = max(float(np.vdot(xg, r_mat @ xg).real)
                   for xg in (np.array([p0, p1, 1.0])
                              for p0 in levels for p1 in levels))
        if cert.objective >= 0.95 * best:
            hits += 1
    elapsed = time.perf_counter() - t0
    report(4, hits >= 90 and elapsed < 120.0,
           f"{hits}/100 runs >= 0.95x the 64-level grid optimum (need 90), "
           f"{elapsed:.1f}s (< 2min)")


# ---------------------------------------------------------------------------
# 5. GNN structural contracts


def test_criterion_5_gnn_contracts():
    details = []
    for m in (2, 4, 8):
        i_o = 4
        params = learn.TrainableParams.init(m, i_o, "pinet-plus", rng(50 + m))
        expect = i_o + 69 * m * m + 54 * m + 3
        assert params.to_vector().size == expect
        details.append(f"M={m}: {expect} params")

        k, p_t = 5, 0.01
        gnn = params.gnn
        feats = rng(60 + m).standard_normal((k, 4 * m + 6))
        p, zeta = learn.gnn_forward(gnn, feats, p_t)
        assert abs(p.sum() - p_t) <= 1e-9 * p_t
        assert abs(zeta.sum() - p_t) <= 1e-9 * p_t
        perm = rng(70 + m).permutation(k)
        p2, zeta2 = learn.gnn_forward(gnn, feats[perm], p_t)
        np.testing.assert_allclose(p2, p[perm], rtol=1e-12)
        np.testing.assert_allclose(zeta2, zeta[perm], rtol=1e-12)
    report(5, True,
           "permutation equivariant, budgets exact to 1e-9*P_T, counts "
           + ", ".join(details))


# ---------------------------------------------------------------------------
# 6. desk-scale unfolding efficacy (trains two models)


def test_criterion_6_desk_scale_training():
    cfg = SystemConfig(m=4, k=2, n=16, p_t_mw=10.0,
                       user_center=(200.0, 10.0), seed=11)
    dataset = channel.generate_dataset(cfg, 500)
    hyper = learn.TrainHyper(epochs=20, batch_size=50, lr=0.05, c0=0.1,
                             holdout=50)
    t0 = time.perf_counter()
    trained = {}
    for variant in ("pinet", "pinet-plus"):
        res = learn.train(dataset, cfg, variant, hyper, rng(42), i_o=5)
        trained[variant] = res.params
    train_time = time.perf_counter() - t0

    ecfg = SystemConfig(m=4, k=2, n=16, p_t_mw=10.0,
                        user_center=(200.0, 10.0), seed=777)
    erng = rng(777)
    test = [channel.sample_channels(los, ecfg, erng)
            for los in channel.generate_dataset(ecfg, 100)]

    w_pi = float(np.mean([solvers.wmmse_pi(ch, ecfg, 5, rng(1)).wsr
                          for ch in test]))
    w_net = float(np.mean([solvers.wmmse_pinet_forward(
        ch, trained["pinet"], ecfg, mode="pinet", rng=rng(1)).wsr
        for ch in test]))
    w_plus = float(np.mean([solvers.wmmse_pinet_forward(
        ch, trained["pinet-plus"], ecfg, mode="pinet-plus", rng=rng(1)).wsr
        for ch in test]))
    ok = w_net >= w_pi and w_plus >= w_net and train_time < 7200.0
    report(6, ok,
           f"mean WSR: classic@5 {w_pi:.4f} <= learned-step {w_net:.4f} <= "
           f"learned-step+init {w_plus:.4f}; training {train_time:.0f}s (< 2h)")


# ---------------------------------------------------------------------------
# 7 + 8 share one full-scale trained model and test set


@pytest.fixture(scope="module")
def full_scale():
    cfg = SystemConfig(m=8, k=4, n=100, p_t_mw=10.0, seed=21)
    dataset = channel.generate_dataset(cfg, 500)
    hyper = learn.TrainHyper(epochs=50, batch_size=50, lr=0.05, c0=0.1,
                             holdout=50)
    res = learn.train(dataset, cfg, "pinet-plus", hyper, rng(42), i_o=3)
    ecfg = SystemConfig(m=8, k=4, n=100, p_t_mw=10.0, seed=777)
    erng = rng(777)
    test = [channel.sample_channels(los, ecfg, erng)
            for los in channel.generate_dataset(ecfg, 200)]
    return res.params, ecfg, test


def test_criterion_7_iteration_efficiency(full_scale):
    params, ecfg, test = full_scale
    w_pi, w_plus, t_pi, t_plus = [], [], [], []
    for ch in test:
        rep = solvers.wmmse_pi(ch, ecfg, 38, rng(1))
        w_pi.append(rep.wsr)
        t_pi.append(rep.wall_time)
        rep = solvers.wmmse_pinet_forward(ch, params, ecfg, i_o=3,
                                          mode="pinet-plus", rng=rng(1))
        w_plus.append(rep.wsr)
        t_plus.append(rep.wall_time)
    wsr_ratio = float(np.mean(w_plus) / np.mean(w_pi))
    time_ratio = float(np.mean(t_plus) / np.mean(t_pi))
    report(7, wsr_ratio >= 0.98 and time_ratio < 0.15,
           f"learned@3 vs classic@38 on 200 samples: WSR ratio "
           f"{wsr_ratio:.4f} (>= 0.98), wall-time ratio {time_ratio:.4f} "
           f"(< 0.15)")


def test_criterion_8_three_bit_phases_near_continuous(full_scale):
    params, ecfg, test = full_scale
    ecfg3 = SystemConfig(m=8, k=4, n=100, p_t_mw=10.0, phase_bits=3, seed=777)
    pi_cont = float(np.mean([solvers.wmmse_pi(ch, ecfg, 38, rng(1)).wsr
                             for ch in test]))
    pi_b3 = float(np.mean([solvers.wmmse_pi(ch, ecfg3, 38, rng(1)).wsr
                           for ch in test]))
    plus_cont = float(np.mean([solvers.wmmse_pinet_forward(
        ch, params, ecfg, i_o=3, mode="pinet-plus", rng=rng(1)).wsr
        for ch in test]))
    plus_b3 = float(np.mean([solvers.wmmse_pinet_forward(
        ch, params, ecfg3, i_o=3, mode="pinet-plus", rng=rng(1)).wsr
        for ch in test]))
    gap_pi = abs(pi_cont - pi_b3) / pi_cont
    gap_plus = abs(plus_cont - plus_b3) / plus_cont
    report(8, gap_pi <= 0.05 and gap_plus <= 0.05,
           f"3-bit vs continuous mean WSR gap: classic {gap_pi:.4f}, "
           f"learned {gap_plus:.4f} (both <= 0.05) over 200 samples")


# ---------------------------------------------------------------------------
# 9. two-timescale solver under estimation error


def test_criterion_9_imcsi_trends():
    # Scenario where the passive array carries real weight: low transmit
    # power (rates ~linear in received power) and users near the surface.
    cfg = SystemConfig(m=8, k=4, n=100, p_t_mw=0.1, seed=888,
                       user_center=(200.0, 10.0))
    i_o = 5
    train_cfg = SystemConfig(m=8, k=4, n=100, p_t_mw=0.1, seed=99,
                             user_center=(200.0, 10.0))
    dataset = channel.generate_dataset(train_cfg, 150)
    hyper = learn.TrainHyper(epochs=10, batch_size=50, holdout=25,
                             varrho=0.2, avg_samples=3)
    t0 = time.perf_counter()
    params = learn.train(dataset, train_cfg, "pinet-imcsi", hyper, rng(5),
                         i_o=i_o).params
    train_time = time.perf_counter() - t0

    los_rng = rng(888)
    los_list = [channel.sample_los(cfg, los_rng) for _ in range(100)]
    n_avg = 20

    def median_avg_wsr(varrho):
        vals = []
        for idx, los in enumerate(los_list):
            r = rng(10_000 + idx)
            stream = [channel.corrupt_channels(
                channel.sample_channels(los, cfg, r), varrho, r)
                for _ in range(i_o + 1)]
            theta = solvers.wmmse_pinet_imcsi(stream, params, cfg, rng=r)
            vals.append(solvers.avg_wsr_estimated(theta, los, cfg, varrho,
                                                  n_avg, rng(20_000 + idx)))
        return float(np.median(vals))

    rand_med = float(np.median([solvers.avg_wsr_estimated(
        solvers.random_theta(cfg.n, rng(30_000 + idx)), los, cfg, 0.2,
        n_avg, rng(40_000 + idx)) for idx, los in enumerate(los_list)]))

    medians = [median_avg_wsr(v) for v in (0.0, 0.1, 0.2, 0.4)]
    monotone = all(medians[i] >= medians[i + 1] for i in range(3))
    margin = medians[2] / rand_med
    report(9, monotone and margin >= 1.2,
           f"median avg WSR {['%.4f' % m for m in medians]} nonincreasing "
           f"across error levels 0/0.1/0.2/0.4: {monotone}; at 0.2 it is "
           f"{margin:.3f}x the random-phase baseline {rand_med:.4f} "
           f"(>= 1.2x); training {train_time:.0f}s")


# ---------------------------------------------------------------------------
# 10. CLI determinism


def test_criterion_10_cli_determinism(tmp_path):
    import json

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"m": 3, "k": 2, "n": 6, "p_t_dbm": 10.0, "seed": 9}))
    d1, d2 = tmp_path / "d1.json", tmp_path / "d2.json"
    for out in (d1, d2):
        assert cli.main(["gen", "--config", str(cfg_path), "--count", "5",
                         "--out", str(out)]) == 0
    gen_ok = d1.read_bytes() == d2.read_bytes()

    s1, s2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    for out in (s1, s2):
        assert cli.main(["solve", str(d1), "--algo", "wmmse-pi",
                         "--iters", "3", "--out", str(out)]) == 0
    solve_ok = s1.read_bytes() == s2.read_bytes()
    report(10, gen_ok and solve_ok,
           f"gen byte-identical: {gen_ok}; solve byte-identical: {solve_ok}")
