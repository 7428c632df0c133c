"""Acceptance suite: one test per stated criterion, each recording a
PASS/FAIL line (printed in the terminal summary).

The only deliberate expected failure is threshold blow-up detection at
128^2 with mass 60: a conservative scheme obeys sup u <= mass / cell
volume = 60 * 128^2 = 983,040, which is below the 1e6 detection level, so
that sub-assertion is marked xfail(strict=True) and a companion test
asserts the conservation bound itself."""
import math

import numpy as np
import pytest

from kslab.diagnostics import dissipation_window, moser_ladder
from kslab.grid import Grid, integrate
from kslab.harness import config_from_dict, convergence_study, execute_run, make_initial_data
from kslab.inequalities import (
    FieldEnsemble,
    check_eta_interpolation,
    check_gn,
    check_log_domination,
    check_sequence_lemma,
    check_truncation,
    check_truncation_ensemble,
)
from kslab.model import CoefficientSpec, ModelSpec, SourceSpec, homogeneous_steady_state
from kslab.stepper import State, StepOptions, adapt_dt, step

from conftest import record_criterion

KS_CLASSICAL = {
    "diffusion": {"family": "constant", "value": 1.0},
    "sensitivity": {"family": "constant", "value": 1.0},
}


def _gaussian_run(n, mass, T_end, model, dt_max=1e-2, cadence=None, k=None, tau=None):
    """Centered Gaussian bump, sigma = 0.05, chemical field started flat at
    the mean density (the density profile is the pinned part of the setup)."""
    d = {
        "schema": "kslab-run/1",
        "model": model,
        "grid": {"geometry": "rectangle", "Lx": 1.0, "Ly": 1.0, "nx": n, "ny": n},
        "initial": {
            "kind": "gaussian-bumps",
            "centers": [[0.5, 0.5]],
            "sigma": 0.05,
            "mass": mass,
            "v0": {"kind": "constant", "value": mass},
        },
        "T_end": T_end,
        "step": {"dt_max": dt_max},
        "diagnostics": {},
    }
    if cadence is not None:
        d["diagnostics"]["cadence"] = cadence
    if k is not None:
        d["diagnostics"]["k"] = k
    if tau is not None:
        d["diagnostics"]["tau"] = tau
    return execute_run(config_from_dict(d))


def _agree(a, b, tol=0.10):
    return abs(a - b) <= tol * max(abs(a), abs(b))


# --- shared expensive runs ----------------------------------------------------


@pytest.fixture(scope="module")
def run4a():
    return {n: _gaussian_run(n, 10.0, 2.0, KS_CLASSICAL) for n in (128, 256)}


@pytest.fixture(scope="module")
def run4b_fine():
    return _gaussian_run(256, 60.0, 1.0, KS_CLASSICAL, dt_max=5e-3, cadence=1e-3)


@pytest.fixture(scope="module")
def run4b_coarse():
    # truncated horizon: the discrete peak saturates well before t = 0.1,
    # and the conservation bound rules the 1e6 threshold out at every t
    return _gaussian_run(128, 60.0, 0.1, KS_CLASSICAL, dt_max=5e-3, cadence=1e-3)


SOURCE_4C = {**KS_CLASSICAL, "source": {"r": 0.0, "mu": 1.0, "p": 0.5}}
DEGENERATE_5 = {
    "diffusion": {"family": "exponential-decay"},
    "sensitivity": {"family": "saturating-increasing"},
    "source": {"r": 0.0, "mu": 1.0, "p": 0.4},
}


@pytest.fixture(scope="module")
def run4c():
    return {n: _gaussian_run(n, 60.0, 5.0, SOURCE_4C, k=1.0, tau=1.0) for n in (128, 256)}


@pytest.fixture(scope="module")
def run5():
    return {n: _gaussian_run(n, 60.0, 5.0, DEGENERATE_5, k=1.5, tau=1.0) for n in (128, 256)}


# --- criterion 1: conservation ------------------------------------------------


def test_criterion_1_conservation():
    g = Grid.rectangle(1.0, 1.0, 64, 64)
    u0, v0 = make_initial_data(
        {"kind": "gaussian-bumps", "mass": 10.0, "sigma": 0.1,
         "v0": {"kind": "constant", "value": 10.0}},
        g,
        seed=0,
    )
    s = State(u0, v0)
    model = ModelSpec(
        CoefficientSpec("constant", value=1.0), CoefficientSpec("constant", value=1.0)
    )
    opts = StepOptions(linear_tol=1e-10)
    m0 = integrate(s.u, g)
    worst = 0.0
    for _ in range(1000):
        s = step(s, model, adapt_dt(s, model, opts), opts)
        worst = max(worst, abs(integrate(s.u, g) - m0) / m0)
    ok = worst <= 1e-8
    record_criterion(
        "1 conservation", ok, f"1000 steps, 64^2, max relative mass drift {worst:.3e} <= 1e-8"
    )
    assert ok


# --- criterion 2: equilibrium fixed point --------------------------------------


def test_criterion_2_equilibrium_fixed_point():
    src = SourceSpec(r=1.0, mu=1.0, p=1.0)
    u_star = homogeneous_steady_state(src)
    assert 1.0 < u_star < 2.0
    g = Grid.rectangle(1.0, 1.0, 64, 64)
    s = State(g.field(np.full(g.shape, u_star)), g.field(np.full(g.shape, u_star)))
    model = ModelSpec(
        CoefficientSpec("constant", value=1.0), CoefficientSpec("constant", value=1.0), src
    )
    opts = StepOptions()
    worst = 0.0
    while s.t < 10.0 - 1e-12:
        dt = min(adapt_dt(s, model, opts), 10.0 - s.t)
        s = step(s, model, dt, opts)
        worst = max(worst, float(np.abs(s.u.values - u_star).max()))
    ok = worst <= 1e-6
    record_criterion(
        "2 equilibrium", ok, f"max |u - u*| over t in [0,10] is {worst:.3e} <= 1e-6"
    )
    assert ok


# --- criterion 3: convergence orders -------------------------------------------


def test_criterion_3_convergence_orders():
    d = {
        "schema": "kslab-run/1",
        "model": {
            "diffusion": {"family": "constant", "value": 1.0},
            "sensitivity": {"family": "constant", "value": 0.0},
        },
        "grid": {"geometry": "rectangle", "Lx": 1.0, "Ly": 1.0, "nx": 32, "ny": 32},
        "initial": {"kind": "perturbed-constant", "amplitude": 0.5, "modes": 2, "mass": 1.0},
        "T_end": 0.02,
        "step": {"dt_max": 4e-4, "linear_tol": 1e-12},
    }
    cfg = config_from_dict(d)

    def analytic(x, y, t):
        amp, modes = 0.5, 2
        norm = sum(2.0 ** (1 - m) for m in range(1, modes + 1))
        out = np.ones_like(x)
        for m in range(1, modes + 1):
            out += (
                (amp / norm)
                * 2.0 ** (1 - m)
                * math.exp(-2 * math.pi**2 * m**2 * t)
                * np.cos(math.pi * m * x)
                * np.cos(math.pi * m * y)
            )
        return out

    spatial = convergence_study(cfg, 3, mode="spatial", analytic=analytic)
    temporal = convergence_study(cfg, 3, mode="temporal")
    s_ok = all(abs(o - 2.0) <= 0.1 for o in spatial["orders"])
    t_ok = all(abs(o - 1.0) <= 0.2 for o in temporal["orders"])
    record_criterion(
        "3 convergence orders",
        s_ok and t_ok,
        f"spatial {['%.3f' % o for o in spatial['orders']]} (2.0 +/- 0.1), "
        f"temporal {['%.3f' % o for o in temporal['orders']]} (1.0 +/- 0.2)",
    )
    assert s_ok and t_ok


# --- criterion 4: dichotomy -----------------------------------------------------


def test_criterion_4a_subcritical_mass_completes(run4a):
    sups = {n: r.sup_diagnostics["sup_u"] for n, r in run4a.items()}
    completed = all(r.outcome == "completed" and r.t_final >= 2.0 - 1e-9 for r in run4a.values())
    stable = _agree(sups[128], sups[256])
    record_criterion(
        "4a mass 10 bounded",
        completed and stable,
        f"completed to T=2; sup_t max u {sups[128]:.4g} (128^2) vs {sups[256]:.4g} (256^2), "
        "within 10%",
    )
    assert completed and stable


def test_criterion_4b_supercritical_blowup_fine(run4b_fine):
    res = run4b_fine
    sup_final = float(res.final_state.u.values.max())
    ok = res.outcome == "blowup" and res.t_star is not None and res.t_star < 1.0 and sup_final > 1e6
    record_criterion(
        "4b mass 60 blow-up (256^2)",
        ok,
        f"outcome {res.outcome}, t* {res.t_star}, detected sup u {sup_final:.4g} > 1e6",
    )
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason=(
        "threshold detection at 128^2 is unreachable: exact mass conservation "
        "bounds sup u by 60 * 128^2 = 983,040 < 1e6 (see the companion bound test)"
    ),
)
def test_criterion_4b_supercritical_blowup_coarse(run4b_coarse):
    res = run4b_coarse
    sup_final = float(res.final_state.u.values.max())
    ok = res.outcome == "blowup" and res.t_star is not None and res.t_star < 1.0 and sup_final > 1e6
    record_criterion(
        "4b mass 60 blow-up (128^2)",
        ok,
        f"outcome {res.outcome}, max u {sup_final:.4g}; expected failure, see 4b bound line",
    )
    assert ok


def test_criterion_4b_coarse_conservation_bound(run4b_coarse):
    # constructive impossibility: a nonnegative conservative field on a
    # 128^2 unit square with mass 60 cannot exceed 60/h^2 anywhere
    res = run4b_coarse
    bound = 60.0 * 128**2
    sup_seen = max(
        float(res.final_state.u.values.max()),
        max(r.sup_u for r in res.records if not math.isnan(r.sup_u)),
    )
    ok = sup_seen <= bound and bound < 1e6
    record_criterion(
        "4b bound (128^2)",
        ok,
        f"sup u observed {sup_seen:.4g} <= mass/h^2 = {bound:.4g} < 1e6: threshold unreachable",
    )
    assert ok


def test_criterion_4c_damped_supercritical_bounded(run4c):
    res = run4c
    completed = all(r.outcome == "completed" and r.t_final >= 5.0 - 1e-9 for r in res.values())
    sup_u = {n: r.sup_diagnostics["sup_u"] for n, r in res.items()}
    sup_y = {n: r.sup_diagnostics["sup_energy_y"] for n, r in res.items()}
    finite = all(math.isfinite(x) for x in (*sup_u.values(), *sup_y.values()))
    stable = _agree(sup_u[128], sup_u[256]) and _agree(sup_y[128], sup_y[256])
    record_criterion(
        "4c mass 60 + damping bounded",
        completed and finite and stable,
        f"completed to T=5; sup_t max u {sup_u[128]:.4g}/{sup_u[256]:.4g}, "
        f"sup_t y(k=1) {sup_y[128]:.4g}/{sup_y[256]:.4g}, within 10%",
    )
    assert completed and finite and stable


# --- criterion 5: degenerate diffusion ------------------------------------------


def test_criterion_5_degenerate_regime_bounded(run5):
    res = run5
    completed = all(r.outcome == "completed" and r.t_final >= 5.0 - 1e-9 for r in res.values())
    sup_v = {n: r.sup_diagnostics["sup_v"] for n, r in res.items()}
    sup_y = {n: r.sup_diagnostics["sup_energy_y"] for n, r in res.items()}
    finite = all(math.isfinite(x) for x in (*sup_v.values(), *sup_y.values()))
    stable = _agree(sup_v[128], sup_v[256]) and _agree(sup_y[128], sup_y[256])
    record_criterion(
        "5 degenerate bounded",
        completed and finite and stable,
        f"completed to T=5; sup_t sup v {sup_v[128]:.4g}/{sup_v[256]:.4g}, "
        f"sup_t y(k=3/2) {sup_y[128]:.4g}/{sup_y[256]:.4g}, within 10%",
    )
    assert completed and finite and stable


# --- criterion 6: energy and windowed dissipation --------------------------------


def test_criterion_6_energy_and_dissipation_window(run4c, run5):
    rows = []
    ok = True
    for tag, res, k, p in (("4c", run4c, 1.0, 0.5), ("5", run5, 1.5, 0.4)):
        wins = {n: dissipation_window(r.records, 1.0, k, p) for n, r in res.items()}
        ys = {n: r.sup_diagnostics["sup_energy_y"] for n, r in res.items()}
        finite = all(math.isfinite(x) for x in (*wins.values(), *ys.values()))
        agree = _agree(wins[128], wins[256]) and _agree(ys[128], ys[256])
        ok = ok and finite and agree
        rows.append(
            f"{tag}: window {wins[128]:.4g}/{wins[256]:.4g}, sup y {ys[128]:.4g}/{ys[256]:.4g}"
        )
    record_criterion("6 energy/dissipation window", ok, "; ".join(rows) + " (within 10%)")
    assert ok


# --- criterion 7: inequality suite ------------------------------------------------


def test_criterion_7_inequality_suite():
    details = []
    ok = True
    for n in (32, 64):
        g = Grid.rectangle(1.0, 1.0, n, n)
        for j, gen in enumerate(("band-limited-trig", "gaussian-bumps", "two-valued")):
            e = FieldEnsemble(g, gen, 100, seed=100 * n + j)
            gn = check_gn(e, p=2.0, q=1.0, r=2.0, s=1.0)
            eta = check_eta_interpolation(e, etas=(0.01, 0.1, 0.5, 0.9))
            trunc = check_truncation_ensemble(e, q=2.0, N=2.0, gauge="log")
            proof_ok = all(
                check_truncation(f, 2.0, 2.0, "log").proof_inequalities_ok for f in e.fields()
            )
            ok = ok and gn.passed and eta.passed and trunc.passed and proof_ok
        details.append(f"{n}^2 ensembles pass")
    dom = check_log_domination(
        1.0, 1.0, 2.0, 0.5, np.geomspace(1e-6, 1e6, 4000), eps_list=(0.01, 0.1, 1.0)
    )
    ok = ok and dom.passed

    rng = np.random.default_rng(7)
    worst = math.inf
    for _ in range(1000):
        K = int(rng.integers(1, 25))
        rep = check_sequence_lemma(
            rng.uniform(1e-6, 2.0, K), rng.uniform(1.0, 2.0, K), float(rng.uniform(1e-6, 10.0)), K
        )
        worst = min(worst, rep.relative_margin)
        ok = ok and rep.passed
    seq_ok = worst >= -1e-12
    ok = ok and seq_ok
    record_criterion(
        "7 inequality suite",
        ok,
        "; ".join(details)
        + f"; log-domination certified; 1000 sequence trials, worst margin {worst:.2e} >= -1e-12",
    )
    assert ok


# --- criterion 8: ladder toward the sup -------------------------------------------


def test_criterion_8_moser_ladder(run4c):
    u = run4c[256].final_state.u
    g = u.grid
    ladder, sup = moser_ladder(u, g, q0=4.0, levels=4)
    norms = [uq / g.measure ** (1.0 / q) for q, uq in ladder]
    nondecreasing = all(a <= b * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    close = norms[-1] >= 0.95 * sup
    record_criterion(
        "8 ladder",
        nondecreasing and close,
        f"q=4..64 normalized norms nondecreasing; q=64 value {norms[-1]:.4g} vs sup {sup:.4g} "
        f"({100 * norms[-1] / sup:.1f}%, need >= 95%)",
    )
    assert nondecreasing and close
