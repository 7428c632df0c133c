import math

import mpmath
import numpy as np
import pytest

from kslab.diagnostics import (
    DiagnosticsConfig,
    DiagnosticsRecord,
    detect_blowup,
    dissipation_density,
    dissipation_window,
    energy_y,
    lq_norm,
    make_record,
    moser_ladder,
)
from kslab.errors import ValidationError, WindowTooShortError
from kslab.grid import Grid, integrate
from kslab.stepper import State

mpmath.mp.dps = 40


@pytest.fixture
def square():
    return Grid.rectangle(1.0, 1.0, 16, 16)


def _state(g, u, v, t=0.0, last_dt=1e-3):
    return State(g.field(u), g.field(v), t=t, last_dt=last_dt)


def test_energy_y_constant_fields(square):
    # u = 1, v = const: y = ln^k(1+e), gradient term vanishes
    s = _state(square, np.ones(square.shape), np.full(square.shape, 2.0))
    expected = float(mpmath.log(1 + mpmath.e) ** 1.5)
    assert abs(energy_y(s, 1.5) - expected) < 1e-13


def test_energy_y_includes_half_gradient_term(square):
    # u = 0 kills the entropy part; v = x contributes exactly 1/2
    x, _ = square.cell_centers()
    s = _state(square, np.zeros(square.shape), x.copy())
    assert energy_y(s, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_energy_y_matches_naive_loop_quadrature(square):
    rng = np.random.default_rng(51)
    u = rng.random(square.shape) * 3.0
    v = rng.random(square.shape)
    s = _state(square, u, v)
    k = 1.25
    cell = square.hx * square.hy
    entropy = math.fsum(
        float(x) * math.log(float(x) + math.e) ** k * cell for x in u.flat
    )
    got = energy_y(s, k)
    from kslab.grid import grad_sq_integral

    expected = entropy + 0.5 * grad_sq_integral(s.v, square)
    assert abs(got - expected) < 1e-12 * max(1.0, abs(expected))


def test_lq_norm_constant_field(square):
    f = square.field(np.full(square.shape, 3.0))
    for q in (1.0, 2.0, 7.0, 64.0):
        assert lq_norm(f, square, q) == pytest.approx(3.0, rel=1e-13)


def test_lq_norm_matches_direct_quadrature(square):
    rng = np.random.default_rng(53)
    u = square.field(rng.random(square.shape) * 2.0)
    q = 3.0
    direct = integrate(square.field(u.values**q), square) ** (1.0 / q)
    assert lq_norm(u, square, q) == pytest.approx(direct, rel=1e-13)


def test_lq_norm_survives_values_that_overflow_naive_powers(square):
    u = square.field(np.full(square.shape, 1e8))
    # 1e8^64 overflows float64; the max-factored form must not
    assert lq_norm(u, square, 64.0) == pytest.approx(1e8, rel=1e-12)


def test_lq_norm_two_valued_closed_form(square):
    # half the domain at a, half at b: ||u||_q = (0.5 a^q + 0.5 b^q)^{1/q}
    a, b = 1.0, 4.0
    vals = np.full(square.shape, a)
    vals[: square.nx // 2] = b
    u = square.field(vals)
    for q in (2.0, 8.0, 32.0):
        expected = float((0.5 * mpmath.mpf(a) ** q + 0.5 * mpmath.mpf(b) ** q) ** (1 / mpmath.mpf(q)))
        assert lq_norm(u, square, q) == pytest.approx(expected, rel=1e-12)


def test_dissipation_density_constant_field(square):
    s = _state(square, np.full(square.shape, 2.0), np.zeros(square.shape))
    k, p = 1.5, 0.5
    expected = float(4 * mpmath.log(2 + mpmath.e) ** (k - p))
    assert dissipation_density(s, k, p) == pytest.approx(expected, rel=1e-13)


def test_make_record_csv_layout(square):
    rng = np.random.default_rng(59)
    s = _state(square, rng.random(square.shape), rng.random(square.shape), t=0.25)
    d = DiagnosticsConfig(k=1.0, q_list=(2.0, 4.0))
    rec = make_record(s, d, p=0.5)
    header = DiagnosticsRecord.csv_header(d.q_list)
    assert header == (
        "t,mass,energy_y,sup_u,sup_v,grad_v_sq,lap_v_sq,dissipation_density,"
        "u_l2,u_l4,clamped_mass,blowup"
    )
    row = rec.csv_row().split(",")
    assert len(row) == len(header.split(","))
    assert float(row[0]) == 0.25
    assert row[-1] == "0"
    # repr round-trips every float exactly
    assert float(row[1]) == rec.mass


def test_make_record_flags_nonfinite_state(square):
    u = np.ones(square.shape)
    u[3, 3] = np.inf
    s = _state(square, u, np.ones(square.shape))
    rec = make_record(s, DiagnosticsConfig())
    assert rec.blowup and rec.blowup_reason == "nonfinite"
    assert math.isnan(rec.mass)


def _rec(t, value):
    return DiagnosticsRecord(
        t=t, mass=1.0, energy_y=1.0, sup_u=1.0, sup_v=1.0, grad_v_sq=0.0,
        lap_v_sq=0.0, dissipation_density=value,
    )


def test_dissipation_window_constant_integrand():
    series = [_rec(0.1 * i, 3.0) for i in range(21)]
    assert dissipation_window(series, 1.0, 1.0, 0.5) == pytest.approx(3.0, rel=1e-12)


def test_dissipation_window_matches_exhaustive_oracle():
    rng = np.random.default_rng(61)
    ts = np.cumsum(rng.random(40) * 0.1)
    vals = rng.random(40) * 5.0
    series = [_rec(float(t), float(v)) for t, v in zip(ts, vals)]
    tau = 0.8
    got = dissipation_window(series, tau, 1.0, 0.5)

    # oracle: dense linear interpolation of the integrand, then brute-force
    # trapezoid over every window start on the fine mesh
    fine_t = np.linspace(ts[0], ts[-1], 40001)
    fine_v = np.interp(fine_t, ts, vals)
    fine_cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (fine_v[1:] + fine_v[:-1]) * np.diff(fine_t))]
    )
    best = -math.inf
    for t0 in ts:
        if t0 > ts[-1] - tau + 1e-12:
            continue
        i0 = np.searchsorted(fine_t, t0)
        i1 = np.searchsorted(fine_t, min(t0 + tau, ts[-1]))
        best = max(best, fine_cum[i1] - fine_cum[i0])
    assert got == pytest.approx(best, rel=1e-3)


def test_dissipation_window_peak_localization():
    # integrand is a bump on [1, 2]; the best window must capture it, and a
    # window anchored at t=0 must not
    series = [_rec(0.05 * i, 4.0 if 1.0 <= 0.05 * i <= 2.0 else 0.0) for i in range(81)]
    got = dissipation_window(series, 1.0, 1.0, 0.5)
    assert got == pytest.approx(4.0, rel=0.1)
    ts = [r.t for r in series]
    vals = [r.dissipation_density for r in series]
    first_window = np.trapezoid(vals[:21], ts[:21])
    assert got > first_window + 3.0


def test_dissipation_window_rejects_short_series():
    with pytest.raises(WindowTooShortError):
        dissipation_window([_rec(0.0, 1.0)], 1.0, 1.0, 0.5)
    series = [_rec(0.0, 1.0), _rec(0.3, 1.0)]
    with pytest.raises(WindowTooShortError):
        dissipation_window(series, 1.0, 1.0, 0.5)


def test_moser_ladder_two_valued_closed_form(square):
    vals = np.ones(square.shape)
    vals[: square.nx // 4] = 10.0
    u = square.field(vals)
    ladder, sup = moser_ladder(u, square, q0=4.0, levels=4)
    assert sup == 10.0
    qs = [q for q, _ in ladder]
    assert qs == [4.0, 8.0, 16.0, 32.0, 64.0]
    for q, uq in ladder:
        expected = float(
            (0.25 * mpmath.mpf(10) ** q + 0.75) ** (1 / mpmath.mpf(q))
        )
        assert uq == pytest.approx(expected, rel=1e-10)
    # normalized norms approach the sup from below
    norms = [uq for _, uq in ladder]
    assert all(a <= b + 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < sup
    assert norms[-1] > 0.9 * sup


def test_moser_ladder_rejects_bad_input(square):
    with pytest.raises(ValidationError):
        moser_ladder(square.field(np.ones(square.shape)), square, q0=2.0, levels=2)
    with pytest.raises(ValidationError):
        moser_ladder(square.field(-np.ones(square.shape)), square, q0=4.0, levels=2)


def test_detect_blowup_threshold(square):
    u = np.ones(square.shape)
    u[0, 0] = 2e6
    s = _state(square, u, np.ones(square.shape))
    flag, reason = detect_blowup(s, DiagnosticsConfig(), last_dt=1e-3)
    assert flag and reason == "threshold"


def test_detect_blowup_dt_collapse(square):
    s = _state(square, np.ones(square.shape), np.ones(square.shape))
    flag, reason = detect_blowup(s, DiagnosticsConfig(), last_dt=1e-13)
    assert flag and reason == "dt-collapse"


def test_detect_blowup_clean_state(square):
    s = _state(square, np.ones(square.shape), np.ones(square.shape))
    flag, reason = detect_blowup(s, DiagnosticsConfig(), last_dt=1e-3)
    assert not flag and reason is None


def test_config_validation_and_admissible_interval():
    with pytest.raises(ValidationError):
        DiagnosticsConfig(k=0.0)
    with pytest.raises(ValidationError):
        DiagnosticsConfig(tau=-1.0)
    d = DiagnosticsConfig(k=1.0)
    assert d.admissible_k_warning(p=0.5, regime="nondegenerate") is None
    # degenerate regime requires k in (1+p, 2-p): k=1 falls outside
    assert d.admissible_k_warning(p=0.4, regime="degenerate") is not None
    d2 = DiagnosticsConfig(k=1.5)
    assert d2.admissible_k_warning(p=0.4, regime="degenerate") is None
