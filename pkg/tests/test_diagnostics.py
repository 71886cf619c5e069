import math

import numpy as np
import pytest

from bfb.diagnostics import (
    BoundsError, DiagnosticsRecord, check_absorbing_ball, compute_bounds,
    compute_norms, lp_norm_velocity, max_principle_check, monotonicity_check,
    monotonicity_ratio, sample_record, sync_error, time_derivative_norms,
    uniform_gronwall_bound,
)
from bfb.integrator import IntegratorConfig, integrate
from bfb.model import PhysicalParams, State, U_PARITY, explicit_reference, zero_explicit
from bfb.spectral import Parity, forward_transform, inverse_transform, l2_norm, physical_l2_norm, zeros

from conftest import make_state

ODD = Parity.ODD


def _theta_state(grid, c):
    _, _, z = grid.mesh()
    th = forward_transform(c * np.sin(math.pi * z), ODD, grid)
    return State(tuple(zeros(grid, p) for p in U_PARITY), th)


def test_norms_zero(grid8, params):
    n = compute_norms(State.zero(grid8), params)
    assert all(v == 0 for v in (n.u_H0, n.theta_H1, n.u_V0dot, n.theta_V1, n.u_L2a2, n.theta_Hm1))


@pytest.mark.parametrize("L", [1.0, 2.0])
def test_norms_single_theta_mode(L):
    from bfb.spectral import build_grid
    g = build_grid(8, 8, 8, L)
    c = 0.3
    n = compute_norms(_theta_state(g, c), PhysicalParams(1, 1, 1, 2, L))
    assert n.theta_H1 == pytest.approx(c * L, rel=1e-14)
    assert n.theta_V1 == pytest.approx(math.pi * c * L, rel=1e-14)
    assert n.theta_Hm1 == pytest.approx(c * L / math.pi, rel=1e-14)


def test_lp_at_alpha_zero_is_h0(grid16, rng):
    s = make_state(grid16, rng)
    n = compute_norms(s, PhysicalParams(1, 1, 1, 0.0, 1.0))
    assert n.u_L2a2 == pytest.approx(n.u_H0, rel=1e-12)


def test_parseval_consistency(grid16, rng, params):
    s = make_state(grid16, rng)
    n = compute_norms(s, params)
    phys = math.sqrt(sum(physical_l2_norm(inverse_transform(c), grid16) ** 2 for c in s.u))
    assert n.u_H0 == pytest.approx(phys, rel=1e-12)
    assert n.theta_H1 == pytest.approx(physical_l2_norm(inverse_transform(s.theta), grid16), rel=1e-12)


def test_bounds_reference_values():
    p = PhysicalParams(1, 1, 1, 2, 1)
    b = compute_bounds(p)
    assert b.gamma2 == pytest.approx(1.0, rel=1e-14)
    # independent evaluation: (2 pi^2 / (pi^2 + 32))^(3/2) * 4
    assert b.gamma1 == pytest.approx(1.2948108101463, rel=1e-12)
    assert b.gamma1 == pytest.approx((2 * math.pi ** 2 / (math.pi ** 2 + 32)) ** 1.5 * 4, rel=1e-14)
    assert b.r_weak == b.gamma1
    # r_grad = (g2((a+1) g1 + 4aL^2) + (3+a) g1 + 4aL^2) / (2 nu) = (6 g1 + 8) / 2
    assert b.r_grad == pytest.approx(3 * b.gamma1 + 4, rel=1e-14)


@pytest.mark.parametrize("nu,kappa,a,alpha,L", [(1, 1, 1, 2, 1), (0.3, 2.0, 5.0, 1.5, 3.0),
                                                (2.0, 0.1, 0.2, 3.0, 0.5), (1, 1, 1, 0.5, 1)])
def test_gamma_identity(nu, kappa, a, alpha, L):
    p = PhysicalParams(nu, kappa, a, alpha, L)
    b = compute_bounds(p)
    assert b.gamma1 * min(a, kappa * p.lam) == pytest.approx(2 * b.gamma0, rel=1e-14)
    assert b.gamma1_alt * min(a, kappa * p.lam) == pytest.approx(2 * b.gamma0_alt, rel=1e-14)
    if alpha < 1:
        assert b.gamma2 is None and b.r_grad is None


def test_bounds_alpha_one_rejected():
    with pytest.raises(BoundsError, match="gamma2"):
        compute_bounds(PhysicalParams(1, 1, 1, 1.0, 1))
    with pytest.raises(BoundsError):
        compute_bounds(PhysicalParams(1, 1, 1, 0.0, 1))


def test_gronwall():
    assert uniform_gronwall_bound(0, 0, 0, 1) == 0
    assert uniform_gronwall_bound(0, 2.5, 0, 3) == 2.5
    assert uniform_gronwall_bound(1, 1, 2, 2) == pytest.approx(2 * math.e)
    assert uniform_gronwall_bound(1, 1, 2, 2) == pytest.approx(5.43656365691809, rel=1e-14)
    base = uniform_gronwall_bound(0.5, 1.0, 1.0, 1.0)
    assert uniform_gronwall_bound(0.6, 1.0, 1.0, 1.0) > base
    assert uniform_gronwall_bound(0.5, 1.1, 1.0, 1.0) > base
    assert uniform_gronwall_bound(0.5, 1.0, 1.1, 1.0) > base
    assert uniform_gronwall_bound(0.5, 1.0, 1.0, 1.1) < base
    with pytest.raises(ValueError):
        uniform_gronwall_bound(1, 1, 1, 0)


def _records(times, energies):
    return [DiagnosticsRecord(t, math.sqrt(e), 0.0, 0.0, 0.0, 0.0, 0.0) for t, e in zip(times, energies)]


def test_ball_zero_trajectory(grid8, params):
    tr = integrate(State.zero(grid8), params, IntegratorConfig(t_end=1.0, max_dt=0.05), explicit_reference)
    rep = check_absorbing_ball(tr, compute_bounds(params))
    assert rep.passed and rep.energy_max == 0 and rep.grad_pass


def test_ball_linear_decay_under_envelope(grid16, rng, params):
    s = make_state(grid16, rng, energy=5.0)
    tr = integrate(s, params, IntegratorConfig(t_end=1.0, max_dt=0.01, sample_every=2), zero_explicit)
    rep = check_absorbing_ball(tr, compute_bounds(params))
    assert rep.envelope_pass and rep.energy_pass


def test_ball_detects_violation(params):
    b = compute_bounds(params)
    t = np.linspace(0, 10, 50)
    rep = check_absorbing_ball(_records(t, np.full(50, 2 * b.gamma1)), b)
    assert not rep.energy_pass and not rep.passed
    with pytest.raises(ValueError, match="too short"):
        check_absorbing_ball(_records(t, np.ones(50)), b, window=6.0)


def test_max_principle(grid8, params):
    rep = max_principle_check([State.zero(grid8)])
    assert rep.passed and rep.t_min[0] == 0.0 and rep.t_max[0] == 1.0
    bad = max_principle_check([_theta_state(grid8, 2.0)])
    assert not bad.initial_admissible and not bad.passed


def test_monotonicity_ratio_cases():
    u = np.array([[0.3, -1.2, 0.7]])
    assert np.isnan(monotonicity_ratio(u, u, 2.0))[0]
    for alpha in (1.5, 2.0, 3.0):
        assert monotonicity_ratio(u, -u, alpha)[0] == pytest.approx(2.0 ** (-2 * alpha), rel=1e-14)
    r = monotonicity_ratio(np.random.default_rng(0).standard_normal((100, 3)),
                           np.random.default_rng(1).standard_normal((100, 3)), 0.0)
    assert np.allclose(r, 1.0)


@pytest.mark.parametrize("alpha", [0.0, 1.5, 2.0, 3.0])
def test_monotonicity_check(alpha):
    delta, ok = monotonicity_check(alpha, 20_000, rng_seed=3)
    assert ok and delta > 0
    assert delta <= 2.0 ** (-2 * alpha) + 1e-12


def test_monotonicity_rejects_small_samples():
    with pytest.raises(ValueError):
        monotonicity_check(2.0, 100)


def test_sync_error(grid16, rng):
    s = make_state(grid16, rng)
    assert sync_error(s, s) == (0.0, 0.0, 0.0)
    c = 0.2
    other = State(s.u, s.theta - _theta_state(grid16, c).theta)
    e = sync_error(s, other)
    # ||sin(pi z)||_2 = L
    assert e[1] == pytest.approx(c / math.pi * 1.0, rel=1e-13)
    assert e[0] == 0.0
    a, b2, c2 = (make_state(grid16, rng) for _ in range(3))
    for i in range(3):
        assert sync_error(a, c2)[i] <= sync_error(a, b2)[i] + sync_error(b2, c2)[i] + 1e-14


def test_hm1_poincare_chain(grid16, rng):
    from bfb.spectral import gradient
    a, b = make_state(grid16, rng), make_state(grid16, rng)
    lam = math.pi ** 2
    e = sync_error(a, b)[1]
    d = a.theta - b.theta
    grad = math.sqrt(sum(l2_norm(g) ** 2 for g in gradient(d)))
    assert e <= l2_norm(d) / math.sqrt(lam) * (1 + 1e-12)
    assert l2_norm(d) / math.sqrt(lam) <= grad / lam * (1 + 1e-12)


def test_time_derivative_norms(grid16, rng, params):
    s = make_state(grid16, rng)
    # dt small against 1 / |k|^2 of the top retained modes
    cfg = IntegratorConfig.fixed(1e-4, 1e-3, sample_every=1, keep_states=True)
    tr = integrate(s, params, cfg, zero_explicit)
    out = time_derivative_norms(tr.checkpoints, params)
    assert out is not None and len(out) == len(tr.checkpoints) - 2
    t, val = out[0]
    exact = math.sqrt(grid16.volume * np.sum(np.abs(grid16.k2 * tr.checkpoints[1].u_coeffs()) ** 2))
    assert val == pytest.approx(exact, rel=1e-2)
    assert time_derivative_norms(tr.checkpoints[:2], params) is None


def test_sample_record(grid16, rng, params):
    s = make_state(grid16, rng)
    r = sample_record(s, params, 0.01)
    assert r.dt == 0.01 and r.e_H0 is None
    assert r.u_L2a2 == pytest.approx(lp_norm_velocity(s, 6))
