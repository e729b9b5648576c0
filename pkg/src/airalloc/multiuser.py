"""Multi-user extension of the task-splitting model as a stochastic game.

``N`` devices share the same ``M`` edge servers.  Concurrent uplinks leak
interference into each other, server cycles are shared, and every device
carries a battery that drains slot by slot.  The resulting decision problem
(one allocation matrix per slot, maximizing a weighted sum of per-user
log-success) is wrapped as a Markov decision process with a finite,
enumerable action grid so that value-based learners can be trained on it.

State, dynamics, and reward follow a few explicit modeling choices that the
analytic single-user model does not pin down; they are documented on the
functions below.  The most consequential one: other users' random per-bit
workloads enter a given user's computation-success factor at their *mean*
(``shape * scale`` cycles per bit), which keeps the factor a closed-form
lower-incomplete-gamma expression.  The Monte-Carlo oracle in the test suite
samples those workloads instead, so the size of the mean-field gap is
measured rather than assumed away.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import FeasibilityError
from .special import GammaWorkload, chi, regularized_lower_gamma

__all__ = [
    "ActionSpaceError",
    "MultiUserParams",
    "MultiUserState",
    "MultiUserAction",
    "Transition",
    "default_multiuser",
    "multi_transmission_success",
    "multi_computation_success",
    "interference_matrix",
    "user_success",
    "success_vector",
    "violations",
    "spent_energy",
    "reward",
    "state_vector",
    "MultiUserEnv",
    "ActionGrid",
    "enumerate_actions",
]

_FEAS_TOL = 1e-9
_LN_FLOOR = math.log(1e-12)
_PENALTY = -10.0


class ActionSpaceError(ValueError):
    """The requested action grid is too large to enumerate jointly."""


@dataclass(frozen=True)
class MultiUserParams:
    """Static description of ``n_users`` devices sharing ``M`` edge servers.

    Per-user quantities are tuples of length ``n_users``; ``mean_gains`` is a
    tuple of per-user rows, one expected uplink gain per server.  ``slot_s``
    is the slot duration every user's airtime must fit into, ``capacities_s``
    the per-slot compute-time budget of each server, and ``energy_weight``
    the price attached to normalized per-slot energy spend in the reward.
    """

    task_bits: tuple[float, ...]            # nominal L_n, refreshed each slot
    latency_budgets_s: tuple[float, ...]
    energy_budgets_j: tuple[float, ...]     # per-slot energy allowance
    p_max_w: tuple[float, ...]
    weights: tuple[float, ...]
    mean_gains: tuple[tuple[float, ...], ...]
    bandwidth_hz: float
    noise_w: float
    local_speed_hz: float
    server_speeds_hz: tuple[float, ...]
    capacities_s: tuple[float, ...]
    slot_s: float
    switched_capacitance: float
    energy_weight: float
    energy_capacity_j: tuple[float, ...]    # battery size E_max,n
    workload: GammaWorkload
    task_range_bits: tuple[float, float] = (5e6, 30e6)

    def __post_init__(self) -> None:
        n = len(self.task_bits)
        if n == 0:
            raise ValueError("at least one user is required")
        per_user = {
            "latency_budgets_s": self.latency_budgets_s,
            "energy_budgets_j": self.energy_budgets_j,
            "p_max_w": self.p_max_w,
            "weights": self.weights,
            "mean_gains": self.mean_gains,
            "energy_capacity_j": self.energy_capacity_j,
        }
        for name, tup in per_user.items():
            if len(tup) != n:
                raise ValueError(f"{name} must have one entry per user ({n}), got {len(tup)}")
        m = len(self.server_speeds_hz)
        if m == 0:
            raise ValueError("at least one edge server is required")
        if len(self.capacities_s) != m:
            raise ValueError("capacities_s must have one entry per server")
        for row in self.mean_gains:
            if len(row) != m:
                raise ValueError("each mean_gains row must have one entry per server")
            for g in row:
                if not (math.isfinite(g) and g > 0.0):
                    raise ValueError(f"mean gains must be finite and > 0, got {g}")
        scalars = {
            "bandwidth_hz": self.bandwidth_hz,
            "noise_w": self.noise_w,
            "local_speed_hz": self.local_speed_hz,
            "slot_s": self.slot_s,
            "switched_capacitance": self.switched_capacitance,
        }
        for name, v in scalars.items():
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if not (math.isfinite(self.energy_weight) and self.energy_weight >= 0.0):
            raise ValueError("energy_weight must be finite and >= 0")
        for name in ("task_bits", "latency_budgets_s", "energy_budgets_j",
                     "p_max_w", "weights", "server_speeds_hz", "capacities_s",
                     "energy_capacity_j"):
            for v in getattr(self, name):
                if not (math.isfinite(v) and v > 0.0):
                    raise ValueError(f"{name} entries must be finite and > 0, got {v}")
        lo, hi = self.task_range_bits
        if not (0.0 < lo <= hi):
            raise ValueError(f"task_range_bits must satisfy 0 < lo <= hi, got {self.task_range_bits}")

    @property
    def n_users(self) -> int:
        return len(self.task_bits)

    @property
    def n_servers(self) -> int:
        return len(self.server_speeds_hz)


def default_multiuser(n_users: int = 2, n_servers: int = 1) -> MultiUserParams:
    """Measurement configuration for the shared-server experiments: the
    single-user reference numbers replicated per user, unit priority weights,
    per-slot compute capacity 1.5x the largest task, and a 50 J battery."""
    speeds = tuple(5e9 for _ in range(n_servers))
    gains = tuple(
        tuple((11.0 - m) * 1e-7 for m in range(1, n_servers + 1))
        for _ in range(n_users)
    )
    task_hi = 30e6
    return MultiUserParams(
        task_bits=tuple(10e6 for _ in range(n_users)),
        latency_budgets_s=tuple(1.0 for _ in range(n_users)),
        energy_budgets_j=tuple(1.0 for _ in range(n_users)),
        p_max_w=tuple(1.0 for _ in range(n_users)),
        weights=tuple(1.0 for _ in range(n_users)),
        mean_gains=gains,
        bandwidth_hz=1e8,
        noise_w=1e-9,
        local_speed_hz=1e9,
        server_speeds_hz=speeds,
        capacities_s=tuple(1.5 * task_hi / s for s in speeds),
        slot_s=1.0,
        switched_capacitance=1e-27,
        energy_weight=0.1,
        energy_capacity_j=tuple(50.0 for _ in range(n_users)),
        workload=GammaWorkload(10.0, 50.0),
    )


@dataclass
class MultiUserState:
    """Observable system snapshot at the start of a slot.

    ``task_bits`` are this slot's job sizes, ``gains`` the realized uplink
    gains (N x M), ``queues`` the per-server backlog in pending cycles, and
    ``energies`` the per-user battery levels in joules.
    """

    task_bits: np.ndarray
    gains: np.ndarray
    queues: np.ndarray
    energies: np.ndarray

    def copy(self) -> "MultiUserState":
        return MultiUserState(
            self.task_bits.copy(), self.gains.copy(),
            self.queues.copy(), self.energies.copy(),
        )


@dataclass
class MultiUserAction:
    """One joint decision: task split rows ``phi`` (N x (M+1), local share in
    column 0), airtime matrix ``t`` (N x M), and transmit powers (N,)."""

    phi: np.ndarray
    t: np.ndarray
    power: np.ndarray


@dataclass
class Transition:
    """One experience tuple as stored for replay."""

    state: MultiUserState
    action: MultiUserAction
    reward: float
    next_state: MultiUserState
    terminal: bool = False
    priority: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.reward):
            raise ValueError(f"transition reward must be finite, got {self.reward}")
        if not self.priority > 0.0:
            raise ValueError(f"transition priority must be > 0, got {self.priority}")


def _check_dims(mp: MultiUserParams, action: MultiUserAction) -> None:
    n, m = mp.n_users, mp.n_servers
    if action.phi.shape != (n, m + 1):
        raise FeasibilityError(f"phi must be {(n, m + 1)}, got {action.phi.shape}")
    if action.t.shape != (n, m):
        raise FeasibilityError(f"t must be {(n, m)}, got {action.t.shape}")
    if action.power.shape != (n,):
        raise FeasibilityError(f"power must be {(n,)}, got {action.power.shape}")


def multi_transmission_success(
    mp: MultiUserParams,
    n: int,
    m: int,
    phi: float,
    T: float,
    P_S: float,
    interference: float,
    task_bits: float | None = None,
) -> float:
    """Delivery probability of user n's share to server m under interference.

    The fading average is taken against an effective noise floor raised by
    ``interference`` watts of concurrent uplink power.  A zero share needs no
    link (probability 1); a positive share with no airtime cannot be
    delivered.
    """
    if interference < 0.0:
        raise ValueError(f"interference must be >= 0, got {interference}")
    if phi <= 0.0:
        return 1.0
    if T <= 0.0 or P_S <= 0.0:
        return 0.0
    bits = mp.task_bits[n - 1] if task_bits is None else task_bits
    x = bits * phi / (mp.bandwidth_hz * T)
    y = P_S * mp.mean_gains[n - 1][m - 1] / (mp.noise_w + interference)
    return chi(x, y)


def multi_computation_success(
    mp: MultiUserParams,
    n: int,
    m: int,
    phi_matrix: np.ndarray,
    T_row: np.ndarray,
    task_bits: np.ndarray | None = None,
) -> float:
    """Probability that server m finishes user n's share before the deadline.

    The cycles left for user n are the server's cycle budget inside the
    remaining slack (deadline minus the airtime spent on servers 1..m) minus
    the cycles other users' shares on the same server are expected to claim,
    each at the mean per-bit workload.  A non-positive residual means the
    share cannot finish in time (probability 0 rather than an error, so that
    reward surfaces stay continuous).
    """
    w = mp.workload
    bits = np.asarray(mp.task_bits, dtype=float) if task_bits is None else np.asarray(task_bits, dtype=float)
    phi_nm = float(phi_matrix[n - 1, m])
    if phi_nm <= 0.0:
        return 1.0
    slack = mp.latency_budgets_s[n - 1] - float(np.sum(T_row[:m]))
    if slack <= 0.0:
        return 0.0
    mean_cpb = w.shape * w.scale
    cross = 0.0
    for j in range(mp.n_users):
        if j != n - 1:
            cross += bits[j] * float(phi_matrix[j, m]) * mean_cpb
    cycles = mp.server_speeds_hz[m - 1] * slack - cross
    if cycles <= 0.0:
        return 0.0
    u = cycles / (bits[n - 1] * phi_nm * w.scale)
    return regularized_lower_gamma(w.shape, u)


def interference_matrix(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction) -> np.ndarray:
    """Uplink interference I[n, m]: realized received power of every other
    user that actually transmits to server m this slot."""
    rx = action.power[:, None] * state.gains * (action.phi[:, 1:] > 0.0)
    return np.maximum(rx.sum(axis=0)[None, :] - rx, 0.0)


def _local_cycle_budget(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction, n: int) -> float:
    """Cycles user n's CPU may spend this slot: the latency budget or the
    energy left after the uplink bill, whichever binds.  The per-slot energy
    allowance is additionally capped by the battery's remaining charge."""
    s0 = mp.local_speed_hz
    budget_j = min(mp.energy_budgets_j[n - 1], float(state.energies[n - 1]))
    total_t = float(np.sum(action.t[n - 1]))
    latency_cap = s0 * mp.latency_budgets_s[n - 1]
    energy_cap = (budget_j - float(action.power[n - 1]) * total_t) / (mp.switched_capacitance * s0 * s0)
    return min(latency_cap, energy_cap)


def user_success(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction, n: int) -> float:
    """End-to-end success probability of user n under the joint action."""
    interference = interference_matrix(mp, state, action)
    w = mp.workload
    phi0 = float(action.phi[n - 1, 0])
    if phi0 <= 0.0:
        p = 1.0
    else:
        rho = _local_cycle_budget(mp, state, action, n)
        if rho <= 0.0:
            p = 0.0
        else:
            u = rho / (float(state.task_bits[n - 1]) * phi0 * w.scale)
            p = regularized_lower_gamma(w.shape, u)
    for m in range(1, mp.n_servers + 1):
        p *= multi_transmission_success(
            mp, n, m, float(action.phi[n - 1, m]), float(action.t[n - 1, m - 1]),
            float(action.power[n - 1]), float(interference[n - 1, m - 1]),
            task_bits=float(state.task_bits[n - 1]),
        )
        p *= multi_computation_success(
            mp, n, m, action.phi, action.t[n - 1], task_bits=state.task_bits,
        )
    return p


def success_vector(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction) -> np.ndarray:
    _check_dims(mp, action)
    return np.array([user_success(mp, state, action, n) for n in range(1, mp.n_users + 1)])


def violations(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction) -> list[str]:
    """Names of the joint constraints the action breaks, empty if feasible.

    Checked: per-user share rows on the simplex, per-server airtime budget,
    per-server compute capacity against this slot's task sizes, and per-user
    power caps.  Each violated constraint is reported once.
    """
    _check_dims(mp, action)
    out: list[str] = []
    for n in range(mp.n_users):
        row = action.phi[n]
        if row.min() < -_FEAS_TOL or abs(row.sum() - 1.0) > 1e-6:
            out.append(f"share row of user {n + 1} off the simplex")
        if action.t[n].min() < -_FEAS_TOL:
            out.append(f"negative airtime for user {n + 1}")
        if not 0.0 <= action.power[n] <= mp.p_max_w[n] + _FEAS_TOL:
            out.append(f"power of user {n + 1} outside [0, {mp.p_max_w[n]}]")
    for m in range(mp.n_servers):
        if action.t[:, m].sum() > mp.slot_s + _FEAS_TOL:
            out.append(f"airtime on server {m + 1} over the slot budget")
        load = float(np.sum(state.task_bits * action.phi[:, m + 1])) / mp.server_speeds_hz[m]
        if load > mp.capacities_s[m] + _FEAS_TOL:
            out.append(f"compute load on server {m + 1} over capacity")
    return out


def spent_energy(mp: MultiUserParams, state: MultiUserState, action: MultiUserAction) -> np.ndarray:
    """Per-user energy bill for the slot: uplink power times total airtime
    plus local-compute energy at the mean per-bit workload."""
    w = mp.workload
    tx = action.power * action.t.sum(axis=1)
    local_cycles = state.task_bits * action.phi[:, 0] * (w.shape * w.scale)
    local = mp.switched_capacitance * mp.local_speed_hz ** 2 * local_cycles
    return tx + local


def reward(
    mp: MultiUserParams,
    state: MultiUserState,
    action: MultiUserAction,
    breakdowns: np.ndarray | None = None,
    energies: np.ndarray | None = None,
) -> float:
    """Weighted log-success minus the normalized energy bill.

    Infeasible actions short-circuit to a fixed penalty per violated
    constraint; otherwise each user's log-success is clamped at ln(1e-12) so
    a zero-probability user costs a large but finite amount.
    """
    broken = violations(mp, state, action)
    if broken:
        return _PENALTY * len(broken)
    if breakdowns is None:
        breakdowns = success_vector(mp, state, action)
    if energies is None:
        energies = spent_energy(mp, state, action)
    weights = np.asarray(mp.weights, dtype=float)
    lnp = np.array([max(math.log(p), _LN_FLOOR) if p > 0.0 else _LN_FLOOR for p in breakdowns])
    caps = np.asarray(mp.energy_capacity_j, dtype=float)
    return float(np.dot(weights, lnp) - mp.energy_weight * np.sum(energies / caps))


def state_vector(mp: MultiUserParams, state: MultiUserState) -> np.ndarray:
    """Flat observation for a value network, all features roughly unit scale:
    task sizes over the sampling range, gains over their means, queue backlog
    saturating against one slot of service, and battery fractions."""
    lo, hi = mp.task_range_bits
    tasks = (state.task_bits - lo) / max(hi - lo, 1e-300)
    means = np.asarray(mp.mean_gains, dtype=float)
    gains = state.gains / means
    serve = np.asarray(mp.server_speeds_hz, dtype=float) * mp.slot_s
    queues = state.queues / (state.queues + serve)
    energy = state.energies / np.asarray(mp.energy_capacity_j, dtype=float)
    return np.concatenate([tasks, gains.ravel(), queues, energy])


class MultiUserEnv:
    """Slotted environment: apply a joint action, collect the reward, draw the
    next slot's channel and task randomness from an owned generator.

    Dynamics per slot: channel gains are redrawn i.i.d. exponential at their
    per-pair means (block fading, no coherence across slots), task sizes are
    redrawn uniformly from ``task_range_bits``, each server's backlog grows by
    the cycles assigned to it (at the mean per-bit workload) and shrinks by
    one slot of service, and each battery pays the slot's energy bill.  A
    battery hitting empty terminates the episode.  Infeasible actions are
    rejected by the reward but still advance time: nothing is assigned, no
    energy is spent, queues drain by service only.
    """

    def __init__(self, mp: MultiUserParams, seed: int | None = None):
        self.mp = mp
        self._rng = np.random.default_rng(seed)
        self.state: MultiUserState | None = None

    def reset(self, seed: int | None = None) -> MultiUserState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        mp = self.mp
        lo, hi = mp.task_range_bits
        self.state = MultiUserState(
            task_bits=self._rng.uniform(lo, hi, size=mp.n_users),
            gains=self._rng.exponential(np.asarray(mp.mean_gains, dtype=float)),
            queues=np.zeros(mp.n_servers),
            energies=np.asarray(mp.energy_capacity_j, dtype=float),
        )
        return self.state.copy()

    def step(self, action: MultiUserAction) -> tuple[MultiUserState, float, bool]:
        if self.state is None:
            raise RuntimeError("environment must be reset before stepping")
        mp = self.mp
        state = self.state
        r = reward(mp, state, action)
        feasible = not violations(mp, state, action)

        if feasible:
            bill = spent_energy(mp, state, action)
            mean_cpb = mp.workload.shape * mp.workload.scale
            assigned = (state.task_bits[:, None] * action.phi[:, 1:] * mean_cpb).sum(axis=0)
        else:
            bill = np.zeros(mp.n_users)
            assigned = np.zeros(mp.n_servers)

        served = np.asarray(mp.server_speeds_hz, dtype=float) * mp.slot_s
        lo, hi = mp.task_range_bits
        energies = np.maximum(state.energies - bill, 0.0)
        nxt = MultiUserState(
            task_bits=self._rng.uniform(lo, hi, size=mp.n_users),
            gains=self._rng.exponential(np.asarray(mp.mean_gains, dtype=float)),
            queues=np.maximum(state.queues + assigned - served, 0.0),
            energies=energies,
        )
        terminal = bool(np.any(energies <= 0.0))
        self.state = nxt
        return nxt.copy(), r, terminal


def _share_rows(n_servers: int, granularity: float) -> list[tuple[float, ...]]:
    k = round(1.0 / granularity)
    if abs(k * granularity - 1.0) > 1e-9:
        raise ValueError(f"granularity must divide 1, got {granularity}")
    rows = []
    for cuts in itertools.combinations(range(k + n_servers), n_servers):
        counts = []
        prev = -1
        for c in cuts:
            counts.append(c - prev - 1)
            prev = c
        counts.append(k + n_servers - 1 - prev)
        rows.append(tuple(c / k for c in counts))
    return rows


@dataclass
class ActionGrid:
    """Finite joint action space: a table of feasible actions plus an exact
    encoder keyed on grid coordinates."""

    mp: MultiUserParams
    granularity: float
    actions: list[MultiUserAction]
    _index: dict[tuple, int] = field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.actions)

    def decode(self, idx: int) -> MultiUserAction:
        if not 0 <= idx < len(self.actions):
            raise IndexError(f"action index {idx} outside [0, {len(self.actions)})")
        a = self.actions[idx]
        return MultiUserAction(a.phi.copy(), a.t.copy(), a.power.copy())

    def _key(self, action: MultiUserAction) -> tuple:
        k = round(1.0 / self.granularity)
        phi = tuple(int(round(v * k)) for v in action.phi.ravel())
        t = tuple(round(float(v), 12) for v in action.t.ravel())
        p = tuple(round(float(v), 12) for v in action.power)
        return phi + t + p

    def encode(self, action: MultiUserAction) -> int:
        try:
            return self._index[self._key(action)]
        except KeyError:
            raise ValueError("action is not a point of this grid") from None


def enumerate_actions(
    mp: MultiUserParams,
    granularity: float = 0.1,
    time_fracs: tuple[float, ...] = (0.25, 0.5),
    power_fracs: tuple[float, ...] = (0.5, 1.0),
    max_actions: int = 200_000,
) -> ActionGrid:
    """Enumerate the joint discretized action space.

    Each user picks a share row on the ``granularity`` simplex grid, one
    airtime level per server (fractions of the slot), and one power level
    (fractions of the user's cap); the joint table keeps only combinations
    whose summed airtime fits the slot on every server.  Server capacity
    depends on the slot's task sizes, so it is left to the reward penalty.
    """
    rows = _share_rows(mp.n_servers, granularity)
    m = mp.n_servers
    t_rows = list(itertools.product(*[[f * mp.slot_s for f in time_fracs]] * m))
    per_user = []
    for n in range(mp.n_users):
        powers = [f * mp.p_max_w[n] for f in power_fracs]
        per_user.append(list(itertools.product(rows, t_rows, powers)))

    total = 1
    for opts in per_user:
        total *= len(opts)
    if total > max_actions:
        raise ActionSpaceError(
            f"joint action grid has {total} combinations before filtering, over the "
            f"cap of {max_actions}; coarsen the grid or switch to factored per-user "
            f"action selection (enumerate each user's options separately)"
        )

    actions: list[MultiUserAction] = []
    for combo in itertools.product(*per_user):
        t = np.array([c[1] for c in combo])
        if np.any(t.sum(axis=0) > mp.slot_s + _FEAS_TOL):
            continue
        phi = np.array([c[0] for c in combo])
        power = np.array([c[2] for c in combo])
        actions.append(MultiUserAction(phi, t, power))
    if not actions:
        raise ActionSpaceError(
            "no jointly feasible action: per-user airtime levels cannot share the slot; "
            "lower time_fracs or switch to factored per-user action selection"
        )

    grid = ActionGrid(mp=mp, granularity=granularity, actions=actions)
    for i, a in enumerate(actions):
        grid._index[grid._key(a)] = i
    return grid
