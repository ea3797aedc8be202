"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
and then asserts the same condition.
"""

import math
import time

import numpy as np

from instances import (
    class_o_system,
    nonmember_system,
    psd_rank_deficient,
    random_saddle,
    random_spd,
    record,
    stable_saddle,
    sym_with_spectrum,
)
from retrofit import (
    FunctionClassParams,
    QuadraticObjectiveO,
    SaddleProblem,
    agd_redesign,
    al_redesign,
    classify_O,
    classify_S,
    convexification_alpha,
    fixed_point,
    hatx_redesign,
    hb_redesign,
    kappa_h_bounds,
    simulate,
)
from retrofit.config import load_config
from retrofit.errors import NotConvexifiable
from retrofit.pipeline import run_pipeline
from retrofit.rates import gd_certificate, optimal_pdg_steps, pdg_certificate, potential_trace
from retrofit.redesign import hatx_hessian


def test_c01_gd_geometric_bound_pathwise():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = -np.inf
    for _ in range(200):
        n = int(rng.integers(1, 21))
        mu, L = np.sort(rng.uniform(0.1, 10.0, 2))
        eps = 2.0 / (mu + L)
        obj = QuadraticObjectiveO(random_spd(n, mu, L, rng), rng.standard_normal(n), np.eye(n), eps)
        sys = obj.to_system()
        x_star = fixed_point(sys).x
        x0 = x_star + rng.standard_normal(n) * rng.uniform(0.1, 10)
        traj = simulate(sys, x0, 1000)
        errors = np.linalg.norm(traj.states - x_star, axis=1)
        cert = gd_certificate(FunctionClassParams(mu, L), eps)
        res = cert.check_errors(errors, slack=1e-10)
        worst = max(worst, res.worst_excess)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0 and elapsed < 10
    record(1, ok, f"200 instances, worst excess {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_c02_sublinear_bounds_and_agd_ordering():
    rng = np.random.default_rng(2)
    worst_t3 = worst_t6 = -np.inf
    ordering_fail = 0
    ordering_checked = 0
    for _ in range(100):
        n = int(rng.integers(3, 16))
        rank = int(rng.integers(2, n))
        L = rng.uniform(0.5, 10.0)
        kappa_eff = math.exp(rng.uniform(math.log(10), math.log(1000)))
        Q = psd_rank_deficient(n, rank, L, rng, kappa_eff)
        x_star = rng.standard_normal(n)
        r = -Q @ x_star
        f = lambda x: 0.5 * x @ Q @ x + r @ x  # noqa: E731
        f_star = f(x_star)
        eps = 1.0 / L
        obj = QuadraticObjectiveO(Q, r, np.eye(n), eps)
        x0 = x_star + rng.standard_normal(n) * 3
        # distance to the solution set, which is what the bounds use
        R2 = np.linalg.norm(np.linalg.pinv(Q) @ Q @ (x0 - x_star)) ** 2
        K = 100

        gd = simulate(obj.to_system(), x0, K).states
        gd_gap = np.array([f(x) for x in gd]) - f_star
        ks = np.arange(1, K + 1)
        worst_t3 = max(worst_t3, np.max(gd_gap[1:] - 2 * R2 / (eps * ks) - 1e-10))

        agd = agd_redesign(obj, FunctionClassParams(0.0, L), schedule="nesterov")
        y = simulate(agd, x0, K).aux["y"]
        # Original indexing: x_1 = x_0, and x_{k+2} is the k-th gradient point.
        seq = np.vstack([x0, x0, y])
        agd_gap = np.array([f(x) for x in seq]) - f_star
        ks = np.arange(1, seq.shape[0])
        worst_t6 = max(worst_t6, np.max(agd_gap[1:] - 8 * R2 / (3 * eps * (ks + 1) ** 2) - 1e-10))

        if kappa_eff >= 100:
            ordering_checked += 1
            if not agd_gap[K] <= gd_gap[K] / 10:
                ordering_fail += 1
    ok = worst_t3 <= 0 and worst_t6 <= 0 and ordering_fail == 0 and ordering_checked > 0
    record(2, ok, f"T3 worst excess {worst_t3:.2e}, T6 worst excess {worst_t6:.2e}, "
                  f"AGD<=GD/10 fails {ordering_fail}/{ordering_checked}")
    assert ok


def test_c03_hb_spectral_certificate():
    rng = np.random.default_rng(3)
    worst = worst_eigvals = -np.inf
    for _ in range(200):
        n = int(rng.integers(1, 21))
        mu, L = np.sort(rng.uniform(0.1, 10.0, 2))
        Q = random_spd(n, mu, L, rng, endpoints=False)
        obj = QuadraticObjectiveO(Q, rng.standard_normal(n), np.eye(n), 1.0)
        params = FunctionClassParams(float(mu), float(L))
        hb = hb_redesign(obj, params)
        ratio = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu))
        worst = max(worst, hb.extended_spectral_radius() - ratio - 1e-8)
        generic = float(np.max(np.abs(np.linalg.eigvals(hb.extended_iteration_matrix()))))
        worst_eigvals = max(worst_eigvals, generic - ratio - 1e-8)
    ok = worst <= 0
    record(3, ok, f"200 instances, worst radius excess {worst:.2e} "
                  f"(generic eigensolver: {worst_eigvals:.2e})")
    assert ok


def test_c04_potential_decay():
    rng = np.random.default_rng(4)
    worst_decay = -np.inf
    worst_balance = 0.0
    worst_c3 = -np.inf
    for _ in range(100):
        prob = random_saddle(rng, n=int(rng.integers(2, 7)), mu=rng.uniform(0.5, 1.5),
                             L=None)
        m = prob.m
        w = np.linalg.eigvalsh(prob.Q22)
        s = np.linalg.svd(prob.B, compute_uv=False)
        params = FunctionClassParams(float(w[0]), float(w[-1]))
        gamma = w[0] ** 2 * s[-1] ** 2 / (2 * w[-1] * s[0] ** 3)
        steps = optimal_pdg_steps(prob, params, gamma)
        worst_balance = max(worst_balance, abs(steps.c1 - steps.c2))
        worst_c3 = max(worst_c3, steps.c - steps.bound)
        run = SaddleProblem(prob.Q22, prob.r, prob.B, prob.b, steps.eps1, steps.eps2)
        cert = pdg_certificate(run, params, gamma)
        x_star, lam_star = run.kkt_solution()
        z0 = np.concatenate([lam_star, x_star]) + rng.standard_normal(m + prob.n) * 2
        traj = simulate(run.to_system(), z0, 300)
        trace = potential_trace(run, traj, gamma)
        res = cert.check_potential(trace, rel=1e-12)
        worst_decay = max(worst_decay, res.worst_excess / trace.V[0])
    ok = worst_decay <= 0 and worst_balance <= 1e-12 and worst_c3 <= 0
    record(4, ok, f"max V ratio excess {worst_decay:.2e}, |c1-c2| {worst_balance:.1e}, "
                  f"c - bound {worst_c3:.2e}")
    assert ok


def test_c05_dual_hessian_bracket():
    rng = np.random.default_rng(5)
    worst = -np.inf
    for _ in range(50):
        prob = random_saddle(rng)
        w = np.linalg.eigvalsh(prob.Q22)
        s = np.linalg.svd(prob.B, compute_uv=False)
        Hg = prob.B @ np.linalg.solve(prob.Q22, prob.B.T)
        e = np.linalg.eigvalsh(0.5 * (Hg + Hg.T))
        lo, hi = s[-1] ** 2 / w[-1], s[0] ** 2 / w[0]
        scale = max(hi, 1.0) * 1e-12
        worst = max(worst, lo - e[0] - scale, e[-1] - hi - scale)
    ok = worst <= 0
    record(5, ok, f"50 instances, worst bracket excess {worst:.2e}")
    assert ok


def test_c06_kappa_h_bracket():
    rng = np.random.default_rng(6)
    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(1, 9))
        mu = rng.uniform(0.1, 5.0)
        L = mu * rng.uniform(1.0, 50.0)
        alpha = math.exp(rng.uniform(math.log(1e-2), math.log(1e2)))
        H = random_spd(n, mu, L, rng)
        e = np.linalg.eigvalsh(hatx_hessian(H, alpha))
        kappa = e[-1] / e[0]
        lo, hi = kappa_h_bounds(FunctionClassParams(mu, L), alpha)
        worst = max(worst, (lo - kappa) / kappa, (kappa - hi) / kappa)
    lo, hi = kappa_h_bounds(FunctionClassParams(1.0, 4.0), 2.0)
    spot = abs(lo - 3.8936) <= 1e-3 and abs(hi - 15.574) <= 1e-3
    ok = worst <= 1e-12 and spot
    record(6, ok, f"100 draws, worst relative excess {worst:.2e}; spot ({lo:.4f}, {hi:.3f})")
    assert ok


def test_c07_classification_oracles():
    rng = np.random.default_rng(7)
    wrong = []
    for i in range(200):
        sys, _, _ = class_o_system(int(rng.integers(1, 11)), rng)
        if not classify_O(sys).member:
            wrong.append(("O", i))
    kinds = ("complex", "unstable", "defective")
    for i in range(200):
        sys = nonmember_system(kinds[i % 3], int(rng.integers(2, 11)), rng)
        if classify_O(sys).member:
            wrong.append((kinds[i % 3], i))
    worst_res = 0.0
    worst_eig = -np.inf
    for i in range(50):
        prob = stable_saddle(rng)
        v = classify_S(prob.to_system())
        if not v.member or v.witness is None:
            wrong.append(("S", i))
            continue
        worst_res = max(worst_res, v.witness.residual, v.witness.commute_residual)
        worst_eig = max(worst_eig, v.witness.max_eig)
    ok = not wrong and worst_res <= 1e-8 and worst_eig <= -1e-10
    record(7, ok, f"mislabeled {len(wrong)}/450, witness residual {worst_res:.1e}, "
                  f"max witness eigenvalue {worst_eig:.2e}")
    assert ok


def test_c08_optimum_preservation():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        prob = stable_saddle(rng)
        m, n = prob.m, prob.n
        z_od = fixed_point(prob.to_system().base).x
        alpha = rng.uniform(0.0, 2.0)
        for plant in (al_redesign(prob, alpha), hatx_redesign(prob, alpha)):
            z = plant.extended_fixed_point()[: m + n]
            worst = max(worst, float(np.max(np.abs(z - z_od))))
    ok = worst <= 1e-8
    record(8, ok, f"100 instances x (AL, hat-x), worst fixed-point mismatch {worst:.1e}")
    assert ok


def _segment_reach(metrics, name, seg, threshold="0.001"):
    return metrics[name]["segments"][seg]["first_reach"][threshold]


def test_c09_congestion_ordering():
    cfg = load_config("bundled:congestion_fig1")
    t0 = time.perf_counter()
    rep = run_pipeline(cfg, None)
    elapsed = time.perf_counter() - t0
    met = rep.data["metrics"]
    pre = {v: _segment_reach(met, v, 0) for v in ("OD", "HB", "AGD")}
    post = {v: _segment_reach(met, v, 1) for v in ("OD", "HB", "AGD")}
    ok = (all(x is not None for x in (*pre.values(), *post.values()))
          and pre["HB"] < pre["OD"] and pre["AGD"] < pre["OD"]
          and post["HB"] < post["OD"] and post["AGD"] < post["OD"]
          and elapsed < 5)
    record(9, ok, f"steps to 1e-3 before event {pre}, after event {post}, {elapsed:.2f}s")
    assert ok


def test_c10_pi_ordering():
    cfg = load_config("bundled:pi_fig3")
    t0 = time.perf_counter()
    rep = run_pipeline(cfg, None)
    elapsed = time.perf_counter() - t0
    met = rep.data["metrics"]
    names = ("OD", "AL", "HATX")
    dis = {v: met[v]["final_disagreement"] for v in names}
    reach = {v: _segment_reach(met, v, 0) for v in names}
    tv = {v: met[v]["total_variation"] for v in names}
    ok = (all(d <= 1e-6 for d in dis.values())
          and None not in reach.values()
          and reach["AL"] <= reach["OD"] and reach["HATX"] <= reach["OD"]
          and tv["HATX"] < min(tv["OD"], tv["AL"])
          and elapsed < 5)
    record(10, ok, f"steps to 1e-3 {reach}, total variation "
                   f"{ {k: round(v, 2) for k, v in tv.items()} }, "
                   f"max disagreement {max(dis.values()):.1e}, {elapsed:.2f}s")
    assert ok


def test_c11_convexification():
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, n))
        B = rng.standard_normal((m, n))
        Z = np.linalg.svd(B)[2][m:].T  # orthonormal null-space basis
        # PD on null(B), with a negative direction in range(B').
        Y = np.linalg.qr(B.T)[0]  # orthonormal basis of range(B')
        range_eigs = rng.uniform(-3.0, 1.0, m)
        range_eigs[0] = rng.uniform(-3.0, -0.5)
        H = (Z @ random_spd(n - m, 0.5, 3.0, rng) @ Z.T
             + Y @ sym_with_spectrum(range_eigs, rng) @ Y.T)
        X = rng.uniform(-0.5, 0.5) * (Z @ rng.standard_normal((n - m, m)) @ Y.T)
        H = H + X + X.T
        assert np.linalg.eigvalsh(H)[0] < 0 < np.linalg.eigvalsh(Z.T @ H @ Z)[0]
        a = convexification_alpha(H, B)
        if not np.linalg.eigvalsh(H + 1.01 * a * B.T @ B)[0] > 0:
            bad += 1
    rejected = 0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, n))
        B = rng.standard_normal((m, n))
        Z = np.linalg.svd(B)[2][m:].T
        z = Z @ rng.standard_normal(n - m)
        H = random_spd(n, 0.1, 2.0, rng) - (5.0 / (z @ z)) * np.outer(z, z)
        try:
            convexification_alpha(H, B)
        except NotConvexifiable:
            rejected += 1
    ok = bad == 0 and rejected == 50
    record(11, ok, f"convexified {50 - bad}/50, nullspace violations rejected {rejected}/50")
    assert ok
