"""Single-user task-splitting model over wireless edge servers.

A task of ``task_bits`` bits is split into a local share ``phi[0]`` and one
share ``phi[m]`` per edge server.  Each offloaded share must first be
delivered over a fading uplink within its time share, then finish on the
server before the latency budget; the local share must finish on the local
CPU within both the latency budget and the device energy budget.  All three
stages are independent, so the end-to-end success probability factorizes and
the outage probability is one minus the product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .special import GammaWorkload, chi, regularized_lower_gamma

__all__ = [
    "FeasibilityError",
    "SystemParams",
    "Allocation",
    "SuccessBreakdown",
    "MonteCarloResult",
    "reference_params",
    "default_allocation",
    "assert_feasible",
    "transmission_success",
    "computation_success",
    "local_budget_rho",
    "local_success",
    "success_breakdown",
    "monte_carlo_outage",
]

_FEAS_TOL = 1e-9


class FeasibilityError(ValueError):
    """An allocation violates one of the problem constraints."""


@dataclass(frozen=True)
class SystemParams:
    """Static description of one device and its reachable edge servers."""

    task_bits: float
    bandwidth_hz: float
    noise_w: float
    p_max_w: float
    mean_gains: tuple[float, ...]          # expected uplink channel gain per server
    local_speed_hz: float
    server_speeds_hz: tuple[float, ...]
    latency_budget_s: float
    energy_budget_j: float
    switched_capacitance: float            # CPU energy coefficient (J per cycle per Hz^2)
    workload: GammaWorkload

    def __post_init__(self) -> None:
        scalars = {
            "task_bits": self.task_bits,
            "bandwidth_hz": self.bandwidth_hz,
            "noise_w": self.noise_w,
            "p_max_w": self.p_max_w,
            "local_speed_hz": self.local_speed_hz,
            "latency_budget_s": self.latency_budget_s,
            "energy_budget_j": self.energy_budget_j,
            "switched_capacitance": self.switched_capacitance,
        }
        for name, v in scalars.items():
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if len(self.mean_gains) != len(self.server_speeds_hz):
            raise ValueError("mean_gains and server_speeds_hz must have equal length")
        if len(self.mean_gains) == 0:
            raise ValueError("at least one edge server is required")
        for g in self.mean_gains:
            if not (math.isfinite(g) and g > 0.0):
                raise ValueError(f"mean gains must be finite and > 0, got {g}")
        for s in self.server_speeds_hz:
            if not (math.isfinite(s) and s > 0.0):
                raise ValueError(f"server speeds must be finite and > 0, got {s}")

    @property
    def n_servers(self) -> int:
        return len(self.mean_gains)


def reference_params(
    n_servers: int = 2,
    task_mbits: float = 10.0,
    latency_s: float = 1.0,
    energy_j: float = 1.0,
) -> SystemParams:
    """Default measurement configuration used throughout the experiments.

    1 GHz local CPU, 5 GHz servers, 100 MHz uplink bandwidth, -90 dBm noise,
    1 W transmit cap, mean channel gains (11-m)*1e-7, and a Gamma(10, 50)
    cycles-per-bit workload.
    """
    return SystemParams(
        task_bits=task_mbits * 1e6,
        bandwidth_hz=1e8,
        noise_w=1e-9,
        p_max_w=1.0,
        mean_gains=tuple((11.0 - m) * 1e-7 for m in range(1, n_servers + 1)),
        local_speed_hz=1e9,
        server_speeds_hz=(5e9,) * n_servers,
        latency_budget_s=latency_s,
        energy_budget_j=energy_j,
        switched_capacitance=1e-27,
        workload=GammaWorkload(10.0, 50.0),
    )


@dataclass(frozen=True)
class Allocation:
    """One decision: task split, per-server airtime, transmit power, and the
    local compute budget ``rho`` (cycles the local CPU may spend)."""

    phi: tuple[float, ...]        # phi[0] local share, phi[m] share of server m
    t_shares: tuple[float, ...]   # uplink airtime per server, seconds
    power_w: float
    rho: float

    def __post_init__(self) -> None:
        if len(self.phi) < 2:
            raise ValueError("phi must hold a local share plus one share per server")
        if len(self.t_shares) != len(self.phi) - 1:
            raise ValueError("t_shares must hold exactly one entry per server")
        for v in self.phi:
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"phi entries must be finite and >= 0, got {v}")
        if abs(sum(self.phi) - 1.0) > _FEAS_TOL:
            raise ValueError(f"phi must sum to 1 within {_FEAS_TOL}, got sum {sum(self.phi)!r}")
        for v in self.t_shares:
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"time shares must be finite and >= 0, got {v}")
        if not (math.isfinite(self.power_w) and self.power_w > 0.0):
            raise ValueError(f"power must be finite and > 0, got {self.power_w}")
        if not (math.isfinite(self.rho) and self.rho >= 0.0):
            raise ValueError(f"rho must be finite and >= 0, got {self.rho}")


def default_allocation(p: SystemParams, offload_only: bool = False) -> Allocation:
    """Nominal starting point: uniform split, half the latency budget spent on
    the uplink in equal shares, full power, and the largest feasible ``rho``."""
    m = p.n_servers
    if offload_only:
        phi = (0.0,) + (1.0 / m,) * m
    else:
        phi = (1.0 / (m + 1),) * (m + 1)
    t = (p.latency_budget_s / (2.0 * m),) * m
    rho = local_budget_rho(p, t, p.p_max_w)
    return Allocation(phi=phi, t_shares=t, power_w=p.p_max_w, rho=max(rho, 0.0))


def assert_feasible(p: SystemParams, alloc: Allocation, tol: float = _FEAS_TOL) -> None:
    """Raise :class:`FeasibilityError` on any constraint violation."""
    if len(alloc.phi) != p.n_servers + 1:
        raise FeasibilityError(
            f"allocation has {len(alloc.phi) - 1} server shares, expected {p.n_servers}"
        )
    if alloc.power_w > p.p_max_w * (1.0 + tol):
        raise FeasibilityError(f"power {alloc.power_w} exceeds cap {p.p_max_w}")
    total_t = sum(alloc.t_shares)
    if total_t >= p.latency_budget_s * (1.0 + tol):
        raise FeasibilityError(
            f"total airtime {total_t} leaves no compute slack within {p.latency_budget_s}"
        )
    for m in range(1, p.n_servers + 1):
        if alloc.phi[m] > tol and alloc.t_shares[m - 1] <= 0.0:
            raise FeasibilityError(f"server {m} receives work but zero airtime")
    rho_cap = local_budget_rho(p, alloc.t_shares, alloc.power_w)
    if rho_cap < -tol * p.energy_budget_j:
        raise FeasibilityError(
            "transmit energy alone exceeds the device energy budget "
            f"(power {alloc.power_w} W for {total_t} s)"
        )
    if alloc.rho > rho_cap + tol * max(1.0, abs(rho_cap)):
        raise FeasibilityError(f"rho {alloc.rho} exceeds its feasible cap {rho_cap}")


def transmission_success(
    p: SystemParams, m: int, phi_m: float, t_m: float, power_w: float
) -> float:
    """Probability that server m's share is delivered within its airtime.

    A zero share never needs the link (probability 1); a positive share with
    zero airtime can never be delivered (probability 0).
    """
    if not 1 <= m <= p.n_servers:
        raise ValueError(f"server index {m} out of range 1..{p.n_servers}")
    if phi_m <= 0.0:
        return 1.0
    if t_m <= 0.0:
        return 0.0
    x = p.task_bits * phi_m / (p.bandwidth_hz * t_m)
    y = power_w * p.mean_gains[m - 1] / p.noise_w
    return chi(x, y)


def computation_success(p: SystemParams, m: int, phi_m: float, time_slack: float) -> float:
    """Probability that server m finishes its share inside ``time_slack``
    seconds (the latency budget minus the airtime spent before it)."""
    if not 1 <= m <= p.n_servers:
        raise ValueError(f"server index {m} out of range 1..{p.n_servers}")
    if phi_m <= 0.0:
        return 1.0
    if time_slack <= 0.0:
        return 0.0
    w = p.workload
    u = p.server_speeds_hz[m - 1] * time_slack / (p.task_bits * phi_m * w.scale)
    return regularized_lower_gamma(w.shape, u)


def local_budget_rho(p: SystemParams, t_shares, power_w: float) -> float:
    """Largest cycle count the local CPU may spend: the binding one of the
    latency budget and of the energy left after paying for the uplink."""
    total_t = float(np.sum(np.asarray(t_shares, dtype=float)))
    s0 = p.local_speed_hz
    latency_cap = s0 * p.latency_budget_s
    energy_cap = (p.energy_budget_j - power_w * total_t) / (p.switched_capacitance * s0 * s0)
    return min(latency_cap, energy_cap)


def local_success(p: SystemParams, phi_0: float, rho: float) -> float:
    """Probability the local share finishes within the cycle budget ``rho``."""
    if phi_0 <= 0.0:
        return 1.0
    if rho <= 0.0:
        return 0.0
    w = p.workload
    u = rho / (p.task_bits * phi_0 * w.scale)
    return regularized_lower_gamma(w.shape, u)


@dataclass(frozen=True)
class SuccessBreakdown:
    """Per-stage success probabilities for one allocation."""

    p_local: float
    p_transmit: tuple[float, ...]
    p_compute: tuple[float, ...]
    p_success: float
    p_outage: float
    ln_p_success: float


def success_breakdown(p: SystemParams, alloc: Allocation) -> SuccessBreakdown:
    """Evaluate every factor of the end-to-end success probability."""
    if len(alloc.phi) != p.n_servers + 1:
        raise FeasibilityError(
            f"allocation has {len(alloc.phi) - 1} server shares, expected {p.n_servers}"
        )
    p_local = local_success(p, alloc.phi[0], alloc.rho)
    p_tx = []
    p_comp = []
    elapsed = 0.0
    for m in range(1, p.n_servers + 1):
        t_m = alloc.t_shares[m - 1]
        elapsed += t_m
        p_tx.append(transmission_success(p, m, alloc.phi[m], t_m, alloc.power_w))
        p_comp.append(computation_success(p, m, alloc.phi[m], p.latency_budget_s - elapsed))
    p_sus = p_local * math.prod(p_tx) * math.prod(p_comp)
    ln_p = math.log(p_sus) if p_sus > 0.0 else -math.inf
    return SuccessBreakdown(
        p_local=p_local,
        p_transmit=tuple(p_tx),
        p_compute=tuple(p_comp),
        p_success=p_sus,
        p_outage=1.0 - p_sus,
        ln_p_success=ln_p,
    )


@dataclass(frozen=True)
class MonteCarloResult:
    p_outage: float
    std_error: float
    n_trials: int


def monte_carlo_outage(
    p: SystemParams,
    alloc: Allocation,
    n_trials: int = 100_000,
    seed: int | None = None,
    speed_jitter: float = 0.0,
) -> MonteCarloResult:
    """Estimate the outage probability by direct event simulation.

    Channels are sampled as exponential gains, per-stage workloads as Gamma
    draws; a trial succeeds when every offloaded share is delivered and
    computed in time and the local share fits both the latency and energy
    budgets.  ``speed_jitter`` of j rescales each server speed by an
    independent Uniform[1-j, 1+j] factor per trial, modelling execution-speed
    uncertainty; the analytic model knows nothing about it.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not 0.0 <= speed_jitter < 1.0:
        raise ValueError("speed_jitter must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n_srv = p.n_servers
    phi = np.asarray(alloc.phi, dtype=float)
    t_shares = np.asarray(alloc.t_shares, dtype=float)
    elapsed = np.cumsum(t_shares)
    w = p.workload

    gains = rng.exponential(scale=np.asarray(p.mean_gains), size=(n_trials, n_srv))
    kappa_srv = rng.gamma(w.shape, w.scale, size=(n_trials, n_srv))
    kappa_loc = rng.gamma(w.shape, w.scale, size=n_trials)
    speeds = np.asarray(p.server_speeds_hz, dtype=float)
    if speed_jitter > 0.0:
        speeds = speeds * rng.uniform(1.0 - speed_jitter, 1.0 + speed_jitter, size=(n_trials, n_srv))

    ok = np.ones(n_trials, dtype=bool)
    # Offloaded shares: deliverable bits within the airtime, then compute in the slack.
    snr = alloc.power_w * gains / p.noise_w
    deliverable = t_shares * p.bandwidth_hz * np.log2(1.0 + snr)
    share_bits = p.task_bits * phi[1:]
    finish = elapsed + share_bits * kappa_srv / speeds
    active = phi[1:] > 0.0
    if np.any(active):
        ok &= np.all(deliverable[:, active] >= share_bits[active], axis=1)
        ok &= np.all(finish[:, active] <= p.latency_budget_s, axis=1)
    # Local share: the cycle demand must fit inside the joint latency/energy budget.
    if phi[0] > 0.0:
        ok &= kappa_loc * p.task_bits * phi[0] <= alloc.rho
    p_hat = 1.0 - float(np.mean(ok))
    se = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-300) / n_trials)
    return MonteCarloResult(p_outage=p_hat, std_error=se, n_trials=int(n_trials))
