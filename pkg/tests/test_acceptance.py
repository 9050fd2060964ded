"""Acceptance criteria 1-8, one test per criterion.

Each test prints a single ``CRITERION k: PASS|FAIL`` line (visible with
``pytest -v``) carrying the measured values and the pinned tolerances, and
then asserts.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from freqctl import qp
from freqctl.harness import compare, load_scenario, run_scenario
from freqctl.mipc import (
    MipcConfig,
    build_bundle,
    build_energy_rate_constraints,
    build_linear_model,
    build_power_constraints,
    build_prediction,
    mipc_step,
    solve_unconstrained,
)
from freqctl.netmodel import ac_power_machines, dc_partition, dc_power_ibrs
from freqctl.observer import CommMask, DisturbanceObserver, ObserverConfig
from freqctl.plant import (
    Disturbance,
    DisturbanceSchedule,
    HoldController,
    MachineParams,
    SimConfig,
    initial_state,
    simulate,
    solve_equilibrium,
    step_swing,
)

from conftest import random_network
from test_qp import enumerate_active_sets, random_qp

H = 0.05  # control period used throughout


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def toy_model(toy, toy_part):
    return build_linear_model(toy_part, toy.params, H)


def stacked(xs, n, Q1, Q2):
    J = 0.0
    for t in range(1, len(xs)):
        y, dy = xs[t][:n], (xs[t][:n] - xs[t - 1][:n]) / H
        J += y @ Q1 @ y + dy @ Q2 @ dy
    return J


def test_criterion_1_condensation(toy, toy_part, report):
    t0 = time.perf_counter()
    model = toy_model(toy, toy_part)
    n, rng = model.n, np.random.default_rng(1)
    Q1, Q2 = np.eye(n), H * np.eye(n)
    worst = 0.0
    for N in (1, 5, 20):
        b = build_bundle(model.A, model.Bu, model.C, N, Q1, Q2, H)
        for _ in range(100):
            # deviations of typical size: 1e-2 p.u. speed and rad
            x0, u = 1e-2 * rng.standard_normal(model.nx), 1e-2 * rng.standard_normal(N)
            xs = [x0]
            for t in range(N):
                xs.append(model.A @ xs[-1] + model.Bu @ u[t:t + 1])
            direct = stacked(xs, n, Q1, Q2)
            condensed = 0.5 * x0 @ b.G @ x0 + x0 @ b.F @ u + 0.5 * u @ b.H @ u
            worst = max(worst, abs(condensed - 0.5 * direct))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-10 and elapsed < 1.0,
           f"max |condensed - stacked/2| = {worst:.2e} (tol 1e-10) over N in (1, 5, 20) x 100 draws; "
           f"{elapsed:.2f} s (budget 1 s). Identity checked with the 1/2 on both sides, see decisions ledger")


def test_criterion_2_unconstrained(toy, toy_part, report):
    t0 = time.perf_counter()
    model = toy_model(toy, toy_part)
    rng = np.random.default_rng(2)
    b = build_bundle(model.A, model.Bu, model.C, 20, np.eye(3), H * np.eye(3), H)
    worst_res, beaten = 0.0, True
    for _ in range(100):
        x0 = 1e-2 * rng.standard_normal(model.nx)
        u = solve_unconstrained(b.H, b.F, x0)
        g = b.F.T @ x0
        worst_res = max(worst_res, np.linalg.norm(b.H @ u + g) / (1 + np.linalg.norm(g)))
        best = b.objective(x0, u)
        cands = u + rng.standard_normal((10, u.size)) * np.abs(u).max()
        for cand in cands:
            beaten &= b.objective(x0, cand) >= best
    # 1000 candidates in total: 10 per draw x 100 draws
    elapsed = time.perf_counter() - t0
    report(2, worst_res < 1e-8 and beaten and elapsed < 1.0,
           f"max ||Hu*+F'x0||/(1+||F'x0||) = {worst_res:.2e} (tol 1e-8); u* beat all 1000 perturbed "
           f"candidates: {beaten}; {elapsed:.2f} s (budget 1 s)")


def test_criterion_3_qp(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    du = dobj = kkt = 0.0
    for _ in range(50):
        p = random_qp(rng)
        sol = qp.solve(p, tol=1e-10)
        u_ref, _, val = enumerate_active_sets(p)
        du = max(du, np.abs(sol.u - u_ref).max())
        dobj = max(dobj, abs(p.objective(sol.u) - val))
        kkt = max(kkt, sol.residuals.max())
    elapsed = time.perf_counter() - t0
    report(3, du < 1e-8 and dobj < 1e-8 and kkt < 1e-8 and elapsed < 5.0,
           f"50 QPs: max |du| = {du:.1e}, |dobj| = {dobj:.1e}, KKT = {kkt:.1e} (tol 1e-8); "
           f"{elapsed:.2f} s (budget 5 s)")


def test_criterion_4_constraint_maps(toy, toy_part, report):
    model = toy_model(toy, toy_part)
    rng = np.random.default_rng(4)
    N = 20
    cfg = MipcConfig(horizon=N, control_period=H, p_min=(-0.2,), p_max=(0.2,), energy=(0.5,), rate=(0.05,))
    pred = build_prediction(model.A, model.Bu, N)
    power, pmap = build_power_constraints(toy_part, pred.S, pred.M, cfg)
    er = build_energy_rate_constraints(pmap, cfg)
    map_err = 0.0
    for _ in range(50):
        x0, u = 1e-2 * rng.standard_normal(6), 1e-2 * rng.standard_normal(N)
        xs = [x0]
        for t in range(N):
            xs.append(model.A @ xs[-1] + model.Bu @ u[t:t + 1])
        p = np.array([dc_power_ibrs(toy_part, xs[t][3:], u[t:t + 1])[0] for t in range(N)])
        energy = H * np.cumsum(p)
        rate = p[:-1] - p[1:]
        lhs_p = power.L @ u - power.V @ x0
        lhs_e = er.L @ u - er.V @ x0
        tags_p, tags_e = np.array(power.tags), np.array(er.tags)
        map_err = max(map_err,
                      np.abs(lhs_p[tags_p == "power-upper"] - p).max(),
                      np.abs(lhs_p[tags_p == "power-lower"] + p).max(),
                      np.abs(lhs_e[tags_e == "energy"] - energy).max(),
                      np.abs(lhs_e[tags_e == "rate"] - np.concatenate([rate, -rate])).max())

    worst_viol, runs = 0.0, []
    for name in ("toy_tight", "toy_energy"):
        res = run_scenario(load_scenario(name))
        lim = res.spec.limits
        p_ibr = res.trajectory.p_ibr
        worst_viol = max(worst_viol, (p_ibr - lim["p_max"]).max(), (lim["p_min"] - p_ibr).max())
        if "energy" in lim:
            dt = np.diff(res.trajectory.t)[:, None]
            used = np.cumsum(dt * (p_ibr[:-1] - p_ibr[0]), axis=0).max()
            worst_viol = max(worst_viol, used - lim["energy"])
        runs.append(f"{name}: {res.metrics.violations} violations")
    report(4, map_err < 1e-12 and worst_viol <= 1e-9,
           f"stacked rows vs step-by-step DC simulation: max err {map_err:.1e} (tol 1e-12); closed loop "
           f"{', '.join(runs)}, worst excess {worst_viol:.1e} (tol 1e-9)")


def closed_loop_linear(model, mask, d_true, steps, *, noise=0.0, seed=0, horizon=20):
    """Linear plant, offset-free MIPC (unconstrained) on the augmented model."""
    sigma = (noise, noise) if noise else (0.0, 0.0)
    obs = DisturbanceObserver(model, ObserverConfig(), mask=mask, noise=sigma)
    aug = obs.aug
    C_cost = np.hstack([np.eye(model.n), np.zeros((model.n, aug.nz - model.n))])
    bundle = build_bundle(aug.A, aug.B, C_cost, horizon, np.eye(model.n), H * np.eye(model.n), H)
    rng = np.random.default_rng(seed)
    x = np.zeros(model.nx)
    obs.reset(x)
    u = np.zeros(model.nu)
    d_hist, innov = [], []
    for k in range(steps):
        x = model.step(x, u, d_true)
        y = x + noise * rng.standard_normal(model.nx)
        obs.predict(u)
        innov.append(np.abs(obs.update(y)).max())
        d_hist.append(obs.d_hat_full.copy())
        u = mipc_step(obs.z, bundle).u0
    return np.array(d_hist), np.array(innov)


def test_criterion_5_offset_free(toy, toy_part, ne39, report):
    t0 = time.perf_counter()
    model = toy_model(toy, toy_part)
    d = np.array([0.0, 0.1, 0.0])
    d_hist, innov = closed_loop_linear(model, CommMask.full(3), d, 200)
    err_clean = abs(d_hist[-1, 1] - 0.1) / 0.1
    innov_clean = innov[-1]

    eq = solve_equilibrium(ne39.net, ne39.p_gen, ne39.p_ibr)
    model39 = build_linear_model(dc_partition(ne39.net, (eq.delta, eq.u)), ne39.params, H)
    half = CommMask(tuple(i % 2 == 0 for i in range(ne39.n_gen)))
    d39 = np.zeros(ne39.n_gen)
    d39[4] = 0.1
    # 120 s run, average taken after a 20 s transient; the error is unbiased and shrinks
    # like 1/sqrt(window), so the worst of 10 seeds is checked rather than a single draw
    errs = []
    for seed in range(10):
        d_hist, _ = closed_loop_linear(model39, half, d39, 2400, noise=1e-3, seed=seed)
        errs.append(abs(d_hist[400:, 4].mean() - 0.1) / 0.1)
    err_noisy = max(errs)
    elapsed = time.perf_counter() - t0
    report(5, err_clean < 0.02 and innov_clean < 1e-6 and err_noisy < 0.05 and elapsed < 10.0,
           f"noiseless toy: d_hat rel err {err_clean:.1e} (tol 2%), final innovation {innov_clean:.1e} "
           f"(tol 1e-6); 39-bus, 5 of 10 machines measured, sigma 1e-3, 100 s average: worst rel err "
           f"over 10 seeds {100 * err_noisy:.2f}% (tol 5%); {elapsed:.2f} s (budget 10 s)")


@pytest.fixture(scope="module")
def comparisons():
    t0 = time.perf_counter()
    out = {name: compare(load_scenario(name), ("none", "vsm", "mipc")) for name in ("toy_loss", "ne39_loss")}
    return out, time.perf_counter() - t0


def test_criterion_6_comparative(comparisons, report):
    comps, elapsed = comparisons
    tol = 1e-9
    ok, parts, best_gain = True, [], 0.0
    for name, comp in comps.items():
        v, m = comp.rows["vsm"], comp.rows["mipc"]
        no_worse = (m.objective <= v.objective * (1 + tol)
                    and m.nadir >= v.nadir - tol * max(1.0, abs(v.nadir))
                    and m.max_rocof <= v.max_rocof * (1 + tol))
        gain = 1 - m.objective / v.objective
        best_gain = max(best_gain, gain)
        ok &= no_worse
        parts.append(f"{name}: objective {m.objective:.4g} vs VSM {v.objective:.4g} ({100 * gain:.1f}% better), "
                     f"nadir {m.nadir:.4g} vs {v.nadir:.4g}, max ROCOF {m.max_rocof:.4g} vs {v.max_rocof:.4g}, "
                     f"VSM gains ({comp.vsm_gains.k_m:g}, {comp.vsm_gains.k_d:g})")
    ok &= best_gain >= 0.05 and elapsed < 120.0
    report(6, ok, "; ".join(parts) + f"; ties within rel 1e-9; largest objective gain {100 * best_gain:.1f}% "
           f"(need 5%); {elapsed:.1f} s including VSM grids (budget 120 s)")


def test_criterion_7_numerical_consistency(toy, toy_eq, toy_part, report):
    model = toy_model(toy, toy_part)
    x = np.array([1e-4, -2e-4, 5e-5, 3e-3, -2e-3, 4e-3])
    state = replace(initial_state(toy_eq), omega=x[:3].copy(), delta=toy_eq.delta + x[3:])
    lin_err = 0.0
    for _ in range(50):
        state = step_swing(state, toy.net, toy.params, np.zeros(3), H)
        x = model.A @ x
        lin_err = max(lin_err, np.abs(np.concatenate([state.omega, state.delta - toy_eq.delta]) - x).max())

    sched = DisturbanceSchedule((Disturbance(0.0, np.inf, 1, 0.3),))

    def final(sub):
        cfg = SimConfig(duration=1.0, control_period=sub, substep=sub)
        return simulate(toy.net, toy.params, sched, HoldController(toy_eq.p_ibr), cfg,
                        state=initial_state(toy_eq)).omega[-1]

    ref = final(1e-4)
    ratio = np.abs(final(2e-3) - ref).max() / np.abs(final(1e-3) - ref).max()

    net = random_network(np.random.default_rng(7), 3, 1)
    params = MachineParams(m=[4.0, 5.0, 6.0], d=1.0, droop=0.05, tau_g=2.0)
    eq = solve_equilibrium(net, [0.0, 0.3, -0.2], [0.1])
    h = 0.005
    cfg = SimConfig(duration=2.0, control_period=0.05, substep=h)
    tr = simulate(net, params, DisturbanceSchedule((Disturbance(0.05, np.inf, 2, 0.25),)),
                  HoldController(eq.p_ibr), cfg, state=initial_state(eq))
    pe_sum = np.array([ac_power_machines(net, d, u).total.sum() for d, u in zip(tr.delta, tr.u)])
    balance = np.abs(pe_sum + tr.p_ibr.sum(axis=1)).max()
    report(7, lin_err < 1e-4 and 1.6 < ratio < 2.6 and balance < 1e-10,
           f"linear vs plant free response sup err {lin_err:.1e} over 50 steps (tol 1e-4); step-halving "
           f"error ratio {ratio:.2f} (first order: 1.6-2.6); lossless network balance {balance:.1e} (tol 1e-10)")


def test_criterion_8_step_budget(comparisons, report):
    comps, _ = comparisons
    log = comps["ne39_loss"].results["mipc"].log
    times = np.array([entry["solve_ms"] for entry in log])
    worst, median = times.max(), np.median(times)
    report(8, worst < 50.0,
           f"39-bus, N = 20: {len(times)} control steps, median {median:.2f} ms, max {worst:.2f} ms "
           f"(budget 50 ms per step)")
