import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airalloc.model import (
    Allocation,
    FeasibilityError,
    SystemParams,
    assert_feasible,
    computation_success,
    default_allocation,
    local_budget_rho,
    local_success,
    monte_carlo_outage,
    reference_params,
    success_breakdown,
    transmission_success,
)
from airalloc.special import chi, regularized_lower_gamma
from oracles import random_feasible_allocation


def test_reference_params_layout():
    p = reference_params(n_servers=3, task_mbits=10.0)
    assert p.n_servers == 3
    assert p.task_bits == pytest.approx(10e6)
    assert p.server_speeds_hz == (5e9, 5e9, 5e9)
    assert p.local_speed_hz == pytest.approx(1e9)
    assert p.mean_gains == pytest.approx((10e-7, 9e-7, 8e-7))
    assert p.workload.mean == pytest.approx(500.0)
    assert p.p_max_w == 1.0 and p.latency_budget_s == 1.0 and p.energy_budget_j == 1.0


def test_params_validation():
    good = reference_params(2)
    with pytest.raises(ValueError):
        SystemParams(**{**good.__dict__, "task_bits": 0.0})
    with pytest.raises(ValueError):
        SystemParams(**{**good.__dict__, "p_max_w": -1.0})
    with pytest.raises(ValueError):
        SystemParams(**{**good.__dict__, "mean_gains": (1e-7,)})  # wrong length
    with pytest.raises(ValueError):
        SystemParams(**{**good.__dict__, "noise_w": 0.0})
    with pytest.raises(ValueError):
        SystemParams(**{**good.__dict__, "server_speeds_hz": (5e9, -5e9)})


def test_allocation_validation():
    with pytest.raises(ValueError):
        Allocation(phi=(0.6, 0.6), t_shares=(0.5,), power_w=1.0, rho=0.0)
    with pytest.raises(ValueError):
        Allocation(phi=(0.5, 0.5), t_shares=(0.5, 0.5), power_w=1.0, rho=0.0)
    with pytest.raises(ValueError):
        Allocation(phi=(0.5, 0.5), t_shares=(-0.1,), power_w=1.0, rho=0.0)
    with pytest.raises(ValueError):
        Allocation(phi=(0.5, 0.5), t_shares=(0.5,), power_w=0.0, rho=0.0)
    with pytest.raises(ValueError):
        Allocation(phi=(1.0,), t_shares=(), power_w=1.0, rho=0.0)


def test_assert_feasible_catches_each_budget():
    p = reference_params(2)
    ok = default_allocation(p)
    assert_feasible(p, ok)  # no raise
    with pytest.raises(FeasibilityError):
        assert_feasible(p, Allocation(ok.phi, (0.6, 0.6), ok.power_w, ok.rho))  # latency
    with pytest.raises(FeasibilityError):
        assert_feasible(p, Allocation(ok.phi, ok.t_shares, 2.0, ok.rho))  # power cap
    # Energy: transmit bill plus local bill must fit the budget.
    big_rho = p.local_speed_hz * p.latency_budget_s
    with pytest.raises(FeasibilityError):
        assert_feasible(p, Allocation(ok.phi, (0.45, 0.45), 1.0, big_rho))


def test_transmission_success_closed_form():
    p = reference_params(2)
    got = transmission_success(p, 1, 0.4, 0.3, 0.8)
    x = p.task_bits * 0.4 / (p.bandwidth_hz * 0.3)
    y = 0.8 * p.mean_gains[0] / p.noise_w
    assert got == pytest.approx(chi(x, y), rel=1e-14)
    # Conventions at the boundary of the decision space.
    assert transmission_success(p, 1, 0.0, 0.3, 0.8) == 1.0
    assert transmission_success(p, 1, 0.4, 0.0, 0.8) == 0.0
    with pytest.raises(ValueError):
        transmission_success(p, 2, 0.4, 0.3, 0.0)  # zero power is no SNR at all
    with pytest.raises(ValueError):
        transmission_success(p, 3, 0.4, 0.3, 0.8)


def test_computation_success_closed_form():
    p = reference_params(2)
    w = p.workload
    got = computation_success(p, 1, 0.4, 0.25)
    u = p.server_speeds_hz[0] * 0.25 / (0.4 * p.task_bits * w.scale)
    assert got == pytest.approx(regularized_lower_gamma(w.shape, u), rel=1e-14)
    assert computation_success(p, 1, 0.0, 0.25) == 1.0
    assert computation_success(p, 1, 0.4, 0.0) == 0.0
    assert computation_success(p, 1, 0.4, -0.1) == 0.0


def test_local_budget_rho_min_of_two_budgets():
    p = reference_params(2)
    e_coef = p.switched_capacitance * p.local_speed_hz ** 2
    # At the 1 J reference budget the energy cap always binds.
    rho = local_budget_rho(p, (0.45, 0.45), 1.0)
    assert rho == pytest.approx((p.energy_budget_j - 0.9) / e_coef)
    # With a roomier budget the latency cap takes over.
    rich = reference_params(2, energy_j=2.0)
    assert local_budget_rho(rich, (0.1, 0.1), 0.5) == pytest.approx(
        rich.local_speed_hz * rich.latency_budget_s
    )
    # Spending the whole budget on the uplink leaves nothing local.
    assert local_budget_rho(p, (0.5, 0.6), 1.0) < 0.0


def test_local_success_uses_cycle_budget():
    p = reference_params(1)
    w = p.workload
    rho = 2.5e9
    got = local_success(p, 0.3, rho)
    u = rho / (0.3 * p.task_bits * w.scale)
    assert got == pytest.approx(regularized_lower_gamma(w.shape, u), rel=1e-14)
    assert local_success(p, 0.0, rho) == 1.0
    assert local_success(p, 0.3, 0.0) == 0.0


def test_breakdown_uses_partial_airtime_sums():
    p = reference_params(2)
    alloc = Allocation(phi=(0.2, 0.5, 0.3), t_shares=(0.2, 0.3), power_w=0.9,
                       rho=local_budget_rho(p, (0.2, 0.3), 0.9))
    bd = success_breakdown(p, alloc)
    # Server 1 computes against the slack after its own upload finishes;
    # server 2 waits for both uploads on the shared uplink.
    assert bd.p_compute[0] == pytest.approx(computation_success(p, 1, 0.5, 1.0 - 0.2), rel=1e-12)
    assert bd.p_compute[1] == pytest.approx(computation_success(p, 2, 0.3, 1.0 - 0.5), rel=1e-12)
    assert bd.p_transmit[0] == pytest.approx(transmission_success(p, 1, 0.5, 0.2, 0.9), rel=1e-12)
    expected = bd.p_local * np.prod(bd.p_transmit) * np.prod(bd.p_compute)
    assert bd.p_success == pytest.approx(float(expected), rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
@settings(max_examples=30)
def test_breakdown_factors_are_probabilities(seed, n_servers):
    p = reference_params(n_servers)
    alloc = random_feasible_allocation(p, np.random.default_rng(seed))
    assert_feasible(p, alloc)
    bd = success_breakdown(p, alloc)
    for v in (bd.p_local, *bd.p_transmit, *bd.p_compute, bd.p_success):
        assert 0.0 <= v <= 1.0
    assert bd.p_outage == pytest.approx(1.0 - bd.p_success, abs=1e-15)


def test_monte_carlo_agrees_with_analytic(rng):
    p = reference_params(2, task_mbits=10.0)
    n = 40_000
    for _ in range(5):
        alloc = random_feasible_allocation(p, rng)
        bd = success_breakdown(p, alloc)
        mc = monte_carlo_outage(p, alloc, n_trials=n, seed=int(rng.integers(2 ** 31)))
        # Binomial three-sigma band around the analytic value (plus one-count
        # slack), so even near-hopeless allocations get a fair comparison.
        sigma = math.sqrt(max(bd.p_outage * bd.p_success, 0.0) / n)
        band = 3.0 * sigma + 1.0 / n
        assert abs(mc.p_outage - bd.p_outage) <= band, (
            f"MC {mc.p_outage:.5f} vs analytic {bd.p_outage:.5f} exceeds {band:.5f}"
        )


def test_monte_carlo_reproducible_and_validated():
    p = reference_params(1)
    alloc = default_allocation(p)
    a = monte_carlo_outage(p, alloc, n_trials=5_000, seed=7)
    b = monte_carlo_outage(p, alloc, n_trials=5_000, seed=7)
    assert a.p_outage == b.p_outage
    with pytest.raises(ValueError):
        monte_carlo_outage(p, alloc, n_trials=0)
    with pytest.raises(ValueError):
        monte_carlo_outage(p, alloc, n_trials=100, speed_jitter=1.0)


def test_speed_jitter_shifts_the_estimate():
    p = reference_params(1, task_mbits=10.0)
    # Mostly-offloaded split with real compute pressure on the server, so the
    # outcome is genuinely sensitive to the realized execution speed.
    t = (0.5,)
    alloc = Allocation(phi=(0.02, 0.98), t_shares=t, power_w=1.0,
                       rho=local_budget_rho(p, t, 1.0))
    exact = monte_carlo_outage(p, alloc, n_trials=30_000, seed=3)
    jit = monte_carlo_outage(p, alloc, n_trials=30_000, seed=3, speed_jitter=0.2)
    # Jitter must change the sampled worlds; direction is model-dependent.
    assert jit.p_outage != exact.p_outage


def test_default_allocation_variants():
    p = reference_params(3)
    full = default_allocation(p, offload_only=True)
    assert full.phi[0] == 0.0
    assert sum(full.phi) == pytest.approx(1.0)
    part = default_allocation(p)
    assert part.phi == pytest.approx((0.25,) * 4)
    assert sum(part.t_shares) == pytest.approx(0.5 * p.latency_budget_s)
    assert_feasible(p, full)
    assert_feasible(p, part)
