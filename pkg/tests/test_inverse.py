"""Flux-norm, adjoint, and reconstruction tests.

Independent oracles:
  * constant trace: H1 norm equals sqrt(T * total arc length) exactly
    (the derivative stencils annihilate constants, trapezoid sums dt).
  * sin(omega t): closed form T/2 -+ sin(2 omega T)/(4 omega) for the
    squared integrals of sin and cos.
  * np.gradient reproduces the time-derivative stencil.
  * adjoint and linearity identities hold to round-off for any correct
    transpose pair, far below the asserted tolerances.
  * inverse-crime recoveries compare against the planted profile.
"""

import math

import numpy as np
import pytest

from twave.errors import DomainError
from twave.forward import FluxTrace, build_grid, solve, solve_linearized
from twave.geometry import DomainPair, circle_curve
from twave.inverse import (
    InverseConfig,
    _bump,
    _h1_gram,
    _time_deriv,
    _time_deriv_t,
    adjoint_check,
    h1_flux_norm,
    h1_linf_surrogate,
    random_potential,
    reconstruct_linearized,
    reconstruct_potential,
    stability_ensemble,
    stability_ratio,
)
from twave.rng import trial_rng


def concentric(nx, T, t0=0.0):
    dp = DomainPair(circle_curve(1.0), circle_curve(2.0), a1=2.0, a2=1.0)
    return build_grid(dp, nx, T=T, t0=t0)


def probing_data(grid, r=0.5, amp=0.2):
    X, Y = grid.mesh()
    u0 = np.where(grid.interior, r + amp * _bump(np.hypot(X, Y - 0.2), 1.2), 0.0)
    return u0, np.zeros_like(u0)


def synthetic_trace(times, values, weights):
    n = weights.size
    return FluxTrace(times=times, values=values, weights=weights,
                     arclength=np.linspace(0.0, 1.0, n),
                     points=np.zeros((n, 2)))


@pytest.fixture(scope="module")
def small():
    grid = concentric(40, 2.0)
    u0, u1 = probing_data(grid)
    return grid, u0, u1


class TestFluxNorm:
    def test_zero_trace(self):
        t = synthetic_trace(np.linspace(0.0, 1.0, 11), np.zeros((11, 4)),
                            np.ones(4))
        assert h1_flux_norm(t) == 0.0

    def test_constant_trace_closed_form(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(0.5, 1.5, size=6)
        T = 1.7
        t = synthetic_trace(np.linspace(0.0, T, 101), np.ones((101, 6)), w)
        assert h1_flux_norm(t) == pytest.approx(math.sqrt(T * w.sum()), rel=1e-12)

    def test_sinusoid_closed_form(self):
        # int sin^2 = T/2 - sin(2wT)/4w, int cos^2 = T/2 + sin(2wT)/4w
        T, omega, nt = 1.3, 5.0, 2048
        times = np.linspace(0.0, T, nt + 1)
        w = np.array([0.4, 1.1, 0.8])
        vals = np.sin(omega * times)[:, None] * np.ones(3)[None, :]
        s2 = T / 2 - math.sin(2 * omega * T) / (4 * omega)
        c2 = T / 2 + math.sin(2 * omega * T) / (4 * omega)
        exact = math.sqrt(w.sum() * (s2 + omega ** 2 * c2))
        got = h1_flux_norm(synthetic_trace(times, vals, w))
        assert got == pytest.approx(exact, rel=1e-4)

    def test_needs_three_levels(self):
        t = synthetic_trace(np.array([0.0, 0.1]), np.zeros((2, 3)), np.ones(3))
        with pytest.raises(ValueError):
            h1_flux_norm(t)

    def test_derivative_matches_gradient(self):
        g = np.random.default_rng(1).standard_normal((37, 5))
        np.testing.assert_allclose(_time_deriv(g, 0.03),
                                   np.gradient(g, 0.03, axis=0), rtol=1e-13)

    def test_derivative_transpose_exact(self):
        rng = np.random.default_rng(2)
        g = rng.standard_normal((25, 4))
        y = rng.standard_normal((25, 4))
        lhs = np.sum(_time_deriv(g, 0.07) * y)
        rhs = np.sum(g * _time_deriv_t(y, 0.07))
        assert lhs == pytest.approx(rhs, rel=1e-13)

    def test_gram_reproduces_norm(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((30, 6))
        w = rng.uniform(0.5, 2.0, size=6)
        t = synthetic_trace(np.linspace(0.0, 1.0, 30), g, w)
        quad = float(np.sum(g * _h1_gram(g, t.dt, w)))
        assert math.sqrt(quad) == pytest.approx(h1_flux_norm(t), rel=1e-12)

    def test_surrogate_linear_field(self):
        # u = t on every cell: sup |u| = 1, difference quotient = 1
        states = np.linspace(0.0, 1.0, 21)[:, None, None] * np.ones((3, 3))
        assert h1_linf_surrogate(states, 0.05) == pytest.approx(2.0, rel=1e-12)


class TestAdjoint:
    def test_dot_identity(self, small):
        grid, u0, u1 = small
        rng = np.random.default_rng(4)
        R = 0.6 + 0.3 * rng.standard_normal((grid.nt + 1, grid.ny, grid.nx))
        R *= grid.interior[None]
        p = np.where(grid.interior, 0.4 * rng.standard_normal((grid.ny, grid.nx)), 0.0)
        assert adjoint_check(grid, R, p, n_pairs=5, seed=0) < 1e-8

    def test_forward_map_linear(self, small):
        grid, u0, u1 = small
        base = solve(grid, u0, u1, want_trace=True, store="f64")
        for k in range(3):
            rng = trial_rng(17, k)
            f1 = np.where(grid.interior, rng.standard_normal((grid.ny, grid.nx)), 0.0)
            f2 = np.where(grid.interior, rng.standard_normal((grid.ny, grid.nx)), 0.0)
            a, b = rng.uniform(-2.0, 2.0, size=2)
            lhs = solve_linearized(grid, a * f1 + b * f2, base.states).trace.values
            rhs = (a * solve_linearized(grid, f1, base.states).trace.values
                   + b * solve_linearized(grid, f2, base.states).trace.values)
            scale = np.max(np.abs(rhs)) or 1.0
            assert np.max(np.abs(lhs - rhs)) / scale < 1e-10


@pytest.fixture(scope="module")
def lin_setup():
    grid = concentric(48, 4.0)
    u0, u1 = probing_data(grid)
    X, Y = grid.mesh()
    p = np.where(grid.interior, 0.25 * _bump(np.hypot(X - 0.3, Y), 0.9), 0.0)
    base = solve(grid, u0, u1, potential=p, want_trace=True, store="f64")
    cfg = InverseConfig(grid=grid, p=p, m=1.0, u0=u0, u1=u1, r=0.5,
                        mu=1e-8, cg_maxiter=60)
    return grid, cfg, base


class TestLinearized:

    def test_zero_flux_gives_zero(self, lin_setup):
        grid, cfg, base = lin_setup
        zero = np.zeros((grid.nt + 1, grid.boundary.points.shape[0]))
        res = reconstruct_linearized(cfg, zero, base.states)
        assert res.converged and res.iterations == 0
        assert np.all(res.f == 0.0)

    def test_two_bump_recovery(self, lin_setup):
        grid, cfg, base = lin_setup
        X, Y = grid.mesh()
        f_true = np.where(grid.interior,
                          0.8 * _bump(np.hypot(X - 0.5, Y - 0.4), 0.55)
                          - 0.6 * _bump(np.hypot(X + 0.6, Y + 0.3), 0.5), 0.0)
        data = solve_linearized(grid, f_true, base.states,
                                potential=cfg.p).trace.values
        res = reconstruct_linearized(cfg, data, base.states)
        assert res.adjoint_defect < 1e-8
        rel = np.linalg.norm(res.f - f_true) / np.linalg.norm(f_true)
        assert rel < 0.05

    def test_iteration_cap_returns_partial(self, lin_setup):
        grid, cfg, base = lin_setup
        rng = np.random.default_rng(5)
        data = rng.standard_normal((grid.nt + 1, grid.boundary.points.shape[0]))
        capped = InverseConfig(grid=grid, p=cfg.p, m=1.0, u0=cfg.u0, u1=cfg.u1,
                               r=0.5, mu=1e-6, cg_maxiter=2)
        res = reconstruct_linearized(capped, data, base.states)
        assert not res.converged
        assert res.iterations == 2 and len(res.residuals) == 3
        assert np.isfinite(res.f).all()

    def test_auto_mu_positive(self, lin_setup):
        grid, cfg, base = lin_setup
        auto = InverseConfig(grid=grid, p=cfg.p, m=1.0, u0=cfg.u0, u1=cfg.u1,
                             r=0.5, cg_maxiter=1)
        zero = np.zeros((grid.nt + 1, grid.boundary.points.shape[0]))
        res = reconstruct_linearized(auto, zero, base.states)
        assert res.mu > 0.0

    def test_floor_violation_rejected(self, lin_setup):
        grid, cfg, base = lin_setup
        R = base.states.copy()
        R[0] *= 0.0
        zero = np.zeros((grid.nt + 1, grid.boundary.points.shape[0]))
        with pytest.raises(DomainError):
            reconstruct_linearized(cfg, zero, R)

    def test_shape_mismatch_rejected(self, lin_setup):
        grid, cfg, base = lin_setup
        with pytest.raises(DomainError):
            reconstruct_linearized(cfg, np.zeros((3, 4)), base.states)


class TestStability:
    def test_ratio_definition(self, small):
        grid, u0, u1 = small
        cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                            u0=u0, u1=u1, r=0.5)
        dq = random_potential(grid, trial_rng(3, 0), amp=0.4)
        tr = stability_ratio(cfg, cfg.p + dq)
        h2 = grid.h * grid.h
        l2 = math.sqrt(float(np.sum(dq ** 2)) * h2)
        assert tr.l2_diff == pytest.approx(l2, rel=1e-12)
        assert tr.delta_inf == pytest.approx(0.4, rel=1e-12)
        assert tr.ratio == pytest.approx(tr.l2_diff / tr.flux_h1, rel=1e-12)
        assert not tr.near_invisible

    def test_identical_potential_rejected(self, small):
        grid, u0, u1 = small
        cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                            u0=u0, u1=u1, r=0.5)
        with pytest.raises(DomainError):
            stability_ratio(cfg, cfg.p.copy())

    def test_bound_violation_rejected(self, small):
        grid, u0, u1 = small
        cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                            u0=u0, u1=u1, r=0.5)
        q = np.where(grid.interior, 3.0, 0.0)
        with pytest.raises(DomainError):
            stability_ratio(cfg, q)

    def test_near_invisible_flagged_not_divided(self, small):
        grid, u0, u1 = small
        cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                            u0=u0, u1=u1, r=0.5)
        dq = random_potential(grid, trial_rng(3, 1), amp=1e-16)
        tr = stability_ratio(cfg, cfg.p + dq)
        assert tr.near_invisible
        assert math.isnan(tr.ratio)
        assert tr.l2_diff > 0.0

    def test_small_ensemble(self, small):
        grid, u0, u1 = small
        cfg = InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                            u0=u0, u1=u1, r=0.5)
        rep = stability_ensemble(cfg, 6, seed=9)
        assert len(rep.trials) == 6
        assert rep.n_near_invisible == 0
        assert np.isfinite(rep.ratios).all()
        assert rep.max_ratio >= rep.median_ratio > 0.0
        again = stability_ensemble(cfg, 6, seed=9)
        np.testing.assert_array_equal(rep.ratios, again.ratios)

    def test_random_potential_normalization(self, small):
        grid, u0, u1 = small
        q = random_potential(grid, trial_rng(11, 0), amp=0.7)
        assert np.max(np.abs(q[grid.interior])) == pytest.approx(0.7, rel=1e-12)
        assert np.all(q[~grid.interior] == 0.0)


@pytest.fixture(scope="module")
def pot_setup():
    grid = concentric(48, 4.0)
    u0, u1 = probing_data(grid)
    X, Y = grid.mesh()
    p = np.where(grid.interior, 0.25 * _bump(np.hypot(X - 0.3, Y), 0.9), 0.0)
    return grid, u0, u1, p, X, Y


class TestPotential:

    def test_exact_reference_stops_immediately(self, pot_setup):
        grid, u0, u1, p, X, Y = pot_setup
        obs = solve(grid, u0, u1, potential=p, want_trace=True).trace
        cfg = InverseConfig(grid=grid, p=p, m=1.0, u0=u0, u1=u1, r=0.5, mu=1e-8)
        res = reconstruct_potential(cfg, obs)
        assert res.converged and not res.diverged
        assert len(res.history) == 1
        assert res.history[0]["residual"] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(res.q, np.where(grid.interior, p, 0.0))

    def test_bump_perturbation_recovered(self, pot_setup):
        grid, u0, u1, p, X, Y = pot_setup
        dq = np.where(grid.interior,
                      0.08 * _bump(np.hypot(X + 0.4, Y - 0.3), 0.6), 0.0)
        obs = solve(grid, u0, u1, potential=p + dq, want_trace=True).trace
        cfg = InverseConfig(grid=grid, p=p, m=1.0, u0=u0, u1=u1, r=0.5,
                            mu=1e-8, cg_maxiter=30, outer_maxiter=8,
                            outer_tol=1e-5)
        res = reconstruct_potential(cfg, obs)
        rel = np.linalg.norm(res.q - (p + dq)) / np.linalg.norm(p + dq)
        assert rel <= 0.1
        assert res.converged
        assert len(res.history) <= 8
        assert np.max(np.abs(res.q)) <= 1.0 + 1e-12

    def test_zero_budget_returns_reference(self, pot_setup):
        grid, u0, u1, p, X, Y = pot_setup
        obs = solve(grid, u0, u1, potential=p, want_trace=True).trace
        cfg = InverseConfig(grid=grid, p=p, m=1.0, u0=u0, u1=u1, r=0.5,
                            mu=1e-8, outer_maxiter=0)
        res = reconstruct_potential(cfg, obs)
        assert not res.converged and not res.diverged
        assert res.history == []


class TestConfigValidation:
    def test_floor_must_be_positive(self, small):
        grid, u0, u1 = small
        with pytest.raises(DomainError):
            InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                          u0=u0, u1=u1, r=0.0)

    def test_initial_data_floor_enforced(self, small):
        grid, u0, u1 = small
        with pytest.raises(DomainError):
            InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                          u0=0.1 * u0, u1=u1, r=0.5)

    def test_reference_bound_enforced(self, small):
        grid, u0, u1 = small
        p = np.where(grid.interior, 2.0, 0.0)
        with pytest.raises(DomainError):
            InverseConfig(grid=grid, p=p, m=1.0, u0=u0, u1=u1, r=0.5)

    def test_horizon_must_exceed_minimum(self, small):
        grid, u0, u1 = small
        with pytest.raises(DomainError):
            InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                          u0=u0, u1=u1, r=0.5, t_min=5.0)

    def test_negative_mu_rejected(self, small):
        grid, u0, u1 = small
        with pytest.raises(DomainError):
            InverseConfig(grid=grid, p=np.zeros((grid.ny, grid.nx)), m=1.0,
                          u0=u0, u1=u1, r=0.5, mu=-1.0)
