"""Cross-cutting evaluation metrics: fairness, energy efficiency, and
per-decision wall-clock latency of the different allocators."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import reference_params
from .solver import bcd_solve

__all__ = [
    "jain_index",
    "energy_efficiency",
    "LatencyRow",
    "latency_benchmark",
    "BENCH_METHODS",
]

BENCH_METHODS = ("bcd_mm1", "bcd_mm2", "gradient_descent", "dqn_inference")


def jain_index(values) -> float:
    """Fairness of a non-negative allocation vector: (sum x)^2 / (n sum x^2).

    Equals 1 when everyone holds the same amount and 1/n when one user holds
    everything.  An all-zero vector carries no allocation to rate.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("fairness of an empty vector is undefined")
    if np.any(x < 0.0):
        raise ValueError("fairness inputs must be non-negative")
    total = x.sum()
    if total == 0.0:
        raise ValueError("fairness of an all-zero vector is undefined")
    return float(total * total / (x.size * np.sum(x * x)))


def energy_efficiency(bits_completed: float, joules_spent: float) -> float:
    """Throughput per unit energy, bits per joule."""
    if joules_spent <= 0.0:
        raise ValueError(f"energy spent must be > 0, got {joules_spent}")
    if bits_completed < 0.0:
        raise ValueError(f"completed bits must be >= 0, got {bits_completed}")
    return bits_completed / joules_spent


@dataclass
class LatencyRow:
    """Median per-decision wall time of one method at one problem scale."""

    method: str
    n_servers: int
    median_s: float
    repetitions: int


def _time_calls(fn, repetitions: int) -> float:
    """Median wall time of fn() over the given repetitions, after one
    untimed warmup call."""
    fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def latency_benchmark(
    methods=BENCH_METHODS,
    server_grid=(1, 2, 3),
    repetitions: int = 5,
    seed: int = 0,
    task_mbits: float = 10.0,
) -> list[LatencyRow]:
    """Per-decision latency of each allocator across problem scales.

    Solver methods time one full allocation of the single-user reference
    configuration with the given server count; the learned method times one
    greedy decision (state encoding through the network to an action index)
    on a matching two-user environment.  All methods run on the same machine
    in the same process; the first call of each cell is warmup and excluded.
    """
    rows: list[LatencyRow] = []
    variant_of = {"bcd_mm1": "mm1", "bcd_mm2": "mm2", "gradient_descent": "pg"}
    for m in server_grid:
        p = reference_params(n_servers=m, task_mbits=task_mbits)
        for method in methods:
            if method in variant_of:
                variant = variant_of[method]
                rows.append(LatencyRow(
                    method, m, _time_calls(lambda: bcd_solve(p, variant=variant), repetitions),
                    repetitions,
                ))
            elif method == "dqn_inference":
                from .dqn import init_network, q_forward
                from .multiuser import MultiUserEnv, default_multiuser, enumerate_actions, state_vector

                mp = default_multiuser(n_users=2, n_servers=m)
                grid = enumerate_actions(mp, granularity=0.5)
                env_state = MultiUserEnv(mp, seed=seed).reset(seed)
                theta = init_network(state_vector(mp, env_state).shape[0], grid.size, seed=seed)

                def decide():
                    grid.decode(int(np.argmax(q_forward(theta, state_vector(mp, env_state)))))

                rows.append(LatencyRow(method, m, _time_calls(decide, repetitions), repetitions))
            else:
                raise ValueError(f"unknown benchmark method {method!r}")
    return rows
