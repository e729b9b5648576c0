"""Block-coordinate maximization of the end-to-end success probability.

The decision variables are updated in three blocks per outer iteration:

1. transmit power and local cycle budget (closed-form threshold rule plus a
   safeguarded 1-D Newton search on the concave interior piece),
2. per-server airtime (projected gradient ascent with Armijo backtracking on
   a concave objective), and
3. the task split (two interchangeable minorize-maximize updates: ``mm2``
   replaces each success factor by a concave quadratic minorant and solves
   the budget-coupled subproblem in closed form under a water-filling
   multiplier; ``mm1`` uses tangent-composition minorants of the log factors
   and a numeric inner line search).

Every block never decreases the objective, so the outer trace of
``ln P_success`` is monotone up to solver tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import (
    Allocation,
    FeasibilityError,
    SuccessBreakdown,
    SystemParams,
    assert_feasible,
    computation_success,
    default_allocation,
    local_success,
    success_breakdown,
    transmission_success,
)
from .special import QuarticCoeffs, regularized_lower_gamma, solve_poly_real
from .surrogates import (
    PHI_FLOOR,
    SurrogateCoeffs,
    phi_interval,
    surrogate_computation,
    surrogate_transmission,
)

__all__ = [
    "SolverError",
    "WaterfillBracketError",
    "InnerTrace",
    "BcdTrace",
    "BcdResult",
    "ln_success",
    "solve_p1",
    "solve_p2",
    "solve_p32a",
    "solve_p32b",
    "waterfill_mu",
    "solve_p3_mm2",
    "solve_p3_mm1",
    "solve_p3_pg",
    "bcd_solve",
]

_LN2 = math.log(2.0)


class SolverError(RuntimeError):
    """A sub-solver failed in a way the caller cannot recover from."""


class WaterfillBracketError(SolverError):
    """The water-filling multiplier cannot bracket the share budget.

    Raised when the per-index maximizers already exceed the budget at zero
    multiplier, which indicates a pathological surrogate interval."""


def _safe_log(v: float) -> float:
    return math.log(v) if v > 0.0 else -math.inf


def ln_success(p: SystemParams, phi, t_shares, power_w: float, rho: float) -> float:
    """ln P_success of a candidate (phi, T, P, rho); -inf when impossible."""
    total = _safe_log(local_success(p, float(phi[0]), rho))
    elapsed = 0.0
    for m in range(1, p.n_servers + 1):
        t_m = float(t_shares[m - 1])
        elapsed += t_m
        total += _safe_log(transmission_success(p, m, float(phi[m]), t_m, power_w))
        total += _safe_log(
            computation_success(p, m, float(phi[m]), p.latency_budget_s - elapsed)
        )
        if total == -math.inf:
            return total
    return total


def _dln_lower_gamma(shape: float, scale_free_u: float) -> float:
    """d/du ln P(shape, u), safe against underflow of either factor."""
    u = scale_free_u
    if u <= 0.0:
        return math.inf
    g = regularized_lower_gamma(shape, u)
    log_num = (shape - 1.0) * math.log(u) - u - math.lgamma(shape)
    if g > 0.0 and log_num > -700.0:
        return math.exp(log_num) / g
    if g == 0.0:
        # Deep lower tail: P ~ u^shape e^{-u} / Gamma(shape+1) * S(u).
        return shape / u - shape / (shape + 1.0)
    return 0.0


# ---------------------------------------------------------------------------
# Block 1: transmit power and local cycle budget.
# ---------------------------------------------------------------------------


def solve_p1(
    p: SystemParams, phi, t_shares, *, gtol: float = 1e-8, max_iter: int = 200
) -> tuple[float, float]:
    """Best transmit power and local cycle budget for a fixed split/airtime.

    Below the threshold power at which transmit energy starts to eat into
    the local latency-capped cycle budget, more power only helps, so the cap
    binds.  Above it the objective is concave in the power and the interior
    stationary point is found by safeguarded Newton on the gradient.
    """
    phi = np.asarray(phi, dtype=float)
    t = np.asarray(t_shares, dtype=float)
    s0 = p.local_speed_hz
    e_coef = p.switched_capacitance * s0 * s0
    rho_lat = s0 * p.latency_budget_s
    total_t = float(t.sum())
    if total_t <= 0.0:
        return p.p_max_w, min(rho_lat, p.energy_budget_j / e_coef)

    p_thresh = (p.energy_budget_j - e_coef * rho_lat) / total_t
    if p.p_max_w <= p_thresh:
        return p.p_max_w, rho_lat

    p_hi = min(p.p_max_w, p.energy_budget_j / total_t)
    p_lo = max(p_thresh, p_hi * 1e-12)
    if p_lo >= p_hi or phi[0] <= 0.0:
        best = p_hi
    else:
        w = p.workload
        u_coef = 1.0 / (e_coef * p.task_bits * phi[0] * w.scale)

        tx_coefs = []
        for m in range(1, p.n_servers + 1):
            if phi[m] <= 0.0 or t[m - 1] <= 0.0:
                continue
            x = p.task_bits * phi[m] / (p.bandwidth_hz * t[m - 1])
            if x * _LN2 > 700.0:
                continue  # hopeless link regardless of power; leave to other blocks
            tx_coefs.append((math.exp(x * _LN2) - 1.0) * p.noise_w / p.mean_gains[m - 1])

        def grad(power: float) -> float:
            u = (p.energy_budget_j - power * total_t) * u_coef
            val = -_dln_lower_gamma(w.shape, u) * total_t * u_coef
            for coef in tx_coefs:
                val += coef / (power * power)
            return val

        def grad2(power: float) -> float:
            u = (p.energy_budget_j - power * total_t) * u_coef
            r = _dln_lower_gamma(w.shape, u)
            if not math.isfinite(r):
                return -math.inf
            rp = r * ((w.shape - 1.0) / u - 1.0 - r)
            val = rp * (total_t * u_coef) ** 2
            for coef in tx_coefs:
                val -= 2.0 * coef / power**3
            return val

        if grad(p_lo) <= 0.0:
            best = p_lo
        elif math.isfinite(grad(p_hi)) and grad(p_hi) >= 0.0:
            best = p_hi
        else:
            best = _newton_decreasing_root(grad, grad2, p_lo, p_hi, gtol, max_iter)

    rho = min(rho_lat, (p.energy_budget_j - best * total_t) / e_coef)
    return best, max(rho, 0.0)


def _newton_decreasing_root(
    f: Callable[[float], float],
    fprime: Callable[[float], float],
    lo: float,
    hi: float,
    gtol: float,
    max_iter: int,
) -> float:
    """Root of a decreasing function with a maintained bracket."""
    a, b = lo, hi
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        fx = f(x)
        if math.isfinite(fx) and abs(fx) <= gtol:
            return x
        if fx > 0.0:
            a = x
        else:
            b = x
        fp = fprime(x)
        step_ok = math.isfinite(fx) and math.isfinite(fp) and fp != 0.0
        x_newton = x - fx / fp if step_ok else math.nan
        x = x_newton if a < x_newton < b else 0.5 * (a + b)
        if b - a < 1e-15 * max(1.0, abs(b)):
            return 0.5 * (a + b)
    return x


# ---------------------------------------------------------------------------
# Block 2: per-server airtime.
# ---------------------------------------------------------------------------


def _project_simplex_eq(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = total}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    positive = u - (css - total) / ks > 0.0
    k = int(ks[positive][-1])
    theta = (css[k - 1] - total) / k
    return np.maximum(v - theta, 0.0)


def _project_capped_simplex(t: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= cap}."""
    t = np.maximum(t, 0.0)
    if float(t.sum()) <= cap:
        return t
    return _project_simplex_eq(t, cap)


def solve_p2(
    p: SystemParams,
    phi,
    t_start,
    power_w: float,
    rho: float,
    *,
    gtol: float = 1e-6,
    max_iter: int = 1000,
) -> np.ndarray:
    """Airtime update: projected gradient ascent with Armijo backtracking.

    The feasible set couples the latency budget (total airtime must leave
    compute slack) with the energy budget (transmit energy must leave the
    committed local cycle budget ``rho`` affordable).  Ascent stops when the
    projected-gradient norm falls below ``gtol``.
    """
    phi = np.asarray(phi, dtype=float)
    t = np.asarray(t_start, dtype=float).copy()
    n_srv = p.n_servers
    w = p.workload
    cap_lat = p.latency_budget_s * (1.0 - 1e-9)
    e_coef = p.switched_capacitance * p.local_speed_hz**2
    cap_energy = (
        (p.energy_budget_j - rho * e_coef) / power_w if power_w > 0.0 else math.inf
    )
    cap = min(cap_lat, cap_energy)
    if cap <= 0.0:
        raise FeasibilityError(
            f"committed rho {rho} and power {power_w} leave no airtime budget"
        )
    active = [m for m in range(1, n_srv + 1) if phi[m] > 0.0]
    if not active:
        return np.zeros(n_srv)

    xc = np.array([p.task_bits * phi[m] / p.bandwidth_hz for m in range(1, n_srv + 1)])
    y = np.array([power_w * g / p.noise_w for g in p.mean_gains])
    comp_coef = np.array(
        [
            p.server_speeds_hz[m - 1] / (p.task_bits * phi[m] * w.scale) if phi[m] > 0 else 0.0
            for m in range(1, n_srv + 1)
        ]
    )

    active_set = set(active)

    def value(tv: np.ndarray) -> float:
        total = 0.0
        elapsed = 0.0
        for m in range(1, n_srv + 1):
            t_m = tv[m - 1]
            elapsed += t_m
            if m not in active_set:
                continue
            if t_m <= 0.0:
                return -math.inf
            x = xc[m - 1] / t_m
            if x * _LN2 > 700.0:
                return -math.inf
            total += -(math.exp(x * _LN2) - 1.0) / y[m - 1]
            slack = p.latency_budget_s - elapsed
            if slack <= 0.0:
                return -math.inf
            total += _safe_log(regularized_lower_gamma(w.shape, comp_coef[m - 1] * slack))
        return total

    def grad(tv: np.ndarray) -> np.ndarray:
        g = np.zeros(n_srv)
        elapsed = 0.0
        for m in range(1, n_srv + 1):
            t_m = tv[m - 1]
            elapsed += t_m
            if m not in active_set:
                continue
            x = xc[m - 1] / t_m
            g[m - 1] += _LN2 * x * math.exp(min(x * _LN2, 700.0)) / (y[m - 1] * t_m)
            slack = p.latency_budget_s - elapsed
            r = _dln_lower_gamma(w.shape, comp_coef[m - 1] * slack)
            g[: m] -= r * comp_coef[m - 1]
        return g

    # Start from a strictly interior feasible point.
    t = np.maximum(t, cap * 1e-9)
    if float(t.sum()) > cap:
        t *= cap * (1.0 - 1e-12) / float(t.sum())
    fval = value(t)
    step = 0.25 * cap

    for _ in range(max_iter):
        g = grad(t)
        gp = _project_capped_simplex(t + g, cap) - t
        if float(np.linalg.norm(gp)) <= gtol:
            break
        s = step
        accepted = False
        for _ in range(80):
            trial = _project_capped_simplex(t + s * g, cap)
            diff = trial - t
            tval = value(trial)
            if tval > -math.inf and tval >= fval + 1e-4 * float(g @ diff):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        t, fval = trial, tval
        step = min(s * 2.0, 4.0 * cap)
    return t


# ---------------------------------------------------------------------------
# Block 3, mm2: closed-form split update under quadratic minorants.
# ---------------------------------------------------------------------------


def _argmax_candidates(
    objective: Callable[[float], float], candidates: Sequence[float]
) -> float:
    """Maximizer over candidates; ties go to the smallest share."""
    best_phi = None
    best_val = -math.inf
    for c in sorted(candidates):
        v = objective(c)
        if v == -math.inf:
            continue
        if best_phi is None or v > best_val + 1e-12 * max(1.0, abs(best_val)):
            best_phi, best_val = c, v
    if best_phi is None:
        # Every candidate is impossible under the surrogate; return the
        # midpoint so the caller's monotonicity guard can reject the step.
        best_phi = sorted(candidates)[len(candidates) // 2]
    return best_phi


def solve_p32a(comp: SurrogateCoeffs, mu: float, lo: float, hi: float) -> float:
    """Maximize ln q(phi) + mu*phi over [lo, hi] for one quadratic minorant.

    The stationarity condition is a quadratic in phi (linear when mu = 0,
    with the vertex of q as its root); when no interior stationary point
    lies in range the better endpoint wins, ties toward the smaller share.
    """
    roots = solve_poly_real(
        QuarticCoeffs(
            0.0,
            0.0,
            mu * comp.c2,
            mu * comp.c1 + 2.0 * comp.c2,
            mu * comp.c0 + comp.c1,
        )
    )

    def objective(phi: float) -> float:
        return _safe_log(comp.value(phi)) + mu * phi

    candidates = [lo, hi, 0.5 * (lo + hi)]
    candidates += [r for r in roots if lo < r < hi]
    return _argmax_candidates(objective, candidates)


def solve_p32b(
    tx: SurrogateCoeffs, comp: SurrogateCoeffs, mu: float, lo: float, hi: float
) -> float:
    """Maximize ln q_tx(phi) + ln q_comp(phi) + mu*phi over [lo, hi].

    Clearing denominators in the stationarity condition
    q_tx'/q_tx + q_comp'/q_comp + mu = 0 yields a quartic whose coefficients
    come from expanding mu*q_tx*q_comp + (q_tx*q_comp)'; its real roots in
    range, plus the interval endpoints, are the only candidates.
    """
    r1, r2, r3 = tx.c2, tx.c1, tx.c0
    l1, l2, l3 = comp.c2, comp.c1, comp.c0
    cross_12 = r1 * l2 + r2 * l1
    cross_13 = r1 * l3 + r2 * l2 + r3 * l1
    cross_23 = r2 * l3 + r3 * l2
    quartic = QuarticCoeffs(
        mu * r1 * l1,
        mu * cross_12 + 4.0 * r1 * l1,
        mu * cross_13 + 3.0 * cross_12,
        mu * cross_23 + 2.0 * cross_13,
        mu * r3 * l3 + cross_23,
    )
    roots = solve_poly_real(quartic)

    def objective(phi: float) -> float:
        return _safe_log(tx.value(phi)) + _safe_log(comp.value(phi)) + mu * phi

    candidates = [lo, hi, 0.5 * (lo + hi)]
    candidates += [r for r in roots if lo < r < hi]
    return _argmax_candidates(objective, candidates)


def waterfill_mu(
    solvers: Sequence[Callable[[float], float]],
    intervals: Sequence[tuple[float, float]],
    budget: float = 1.0,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
    mu_cap: float = 1e18,
) -> tuple[float, np.ndarray]:
    """Find the multiplier at which the per-index maximizers spend ``budget``.

    Each solver maps a multiplier mu >= 0 to its share maximizer; the total
    share is non-decreasing in mu, so a geometric bracket plus bisection
    pins the multiplier.  The returned shares are patched (within interval
    slack) so they sum to the budget to machine precision.
    """

    def shares_at(mu: float) -> np.ndarray:
        return np.array([s(mu) for s in solvers])

    phi = shares_at(0.0)
    total = float(phi.sum())
    if total > budget + tol:
        raise WaterfillBracketError(
            f"shares already sum to {total} > budget {budget} at zero multiplier"
        )
    mu_best, phi_best, err_best = 0.0, phi, abs(total - budget)
    if err_best > tol:
        mu_lo, mu_hi = 0.0, 1.0
        while True:
            phi = shares_at(mu_hi)
            total = float(phi.sum())
            if abs(total - budget) < err_best:
                mu_best, phi_best, err_best = mu_hi, phi, abs(total - budget)
            if total >= budget or mu_hi >= mu_cap:
                break
            mu_lo = mu_hi
            mu_hi *= 2.0
        for _ in range(max_iter):
            if err_best <= tol or mu_hi - mu_lo < 1e-12 * max(1.0, mu_hi):
                break
            mu = 0.5 * (mu_lo + mu_hi)
            phi = shares_at(mu)
            total = float(phi.sum())
            if abs(total - budget) < err_best:
                mu_best, phi_best, err_best = mu, phi, abs(total - budget)
            if total < budget:
                mu_lo = mu
            else:
                mu_hi = mu

    # Spend the residual inside interval slack, largest headroom first.
    phi = phi_best.copy()
    diff = budget - float(phi.sum())
    if abs(diff) > 0.0:
        order = np.argsort(
            [-(iv[1] - ph) if diff > 0 else -(ph - iv[0]) for ph, iv in zip(phi, intervals)]
        )
        for i in order:
            lo_i, hi_i = intervals[i]
            move = min(diff, hi_i - phi[i]) if diff > 0 else max(diff, lo_i - phi[i])
            phi[i] += move
            diff -= move
            if abs(diff) <= 1e-15:
                break
    return mu_best, phi


@dataclass
class InnerTrace:
    """Progress of one minorize-maximize split update.

    ``iterations`` counts surrogate rebuilds; ``search_evals`` counts the
    numeric work inside them (one per closed-form per-index solve, one per
    derivative evaluation of a 1-D search), which is the unit that separates
    the closed-form update from the search-based one.
    """

    ln_values: list[float] = field(default_factory=list)
    mu_values: list[float] = field(default_factory=list)
    iterations: int = 0
    pathologies: int = 0
    search_evals: int = 0


class _WorkCounter:
    __slots__ = ("n",)

    def __init__(self) -> None:
        self.n = 0


def _mm_split_loop(
    p: SystemParams,
    phi_start,
    t_shares,
    power_w: float,
    rho: float,
    build,
    *,
    tol: float = 1e-6,
    max_iter: int = 100,
    ftol: float = 1e-9,
) -> tuple[np.ndarray, InnerTrace]:
    """Shared outer loop of both split updates.

    ``build(phi_hat, counter)`` returns (solvers, intervals, indices) for the
    active shares, or None when the surrogates degenerate at the expansion
    point; in that case the previous iterate is kept.  Stops on a small step
    (``tol``, max-norm) or when an iteration improves the objective by less
    than ``ftol`` — near flat optima the curvature-floored surrogates keep
    producing above-``tol`` steps of vanishing value.
    """
    phi = np.asarray(phi_start, dtype=float).copy()
    total = phi.sum()
    if total > 0.0:
        phi /= total
    t = np.asarray(t_shares, dtype=float)
    counter = _WorkCounter()
    trace = InnerTrace(ln_values=[ln_success(p, phi, t, power_w, rho)])

    for _ in range(max_iter):
        built = build(phi, counter)
        if built is None:
            trace.pathologies += 1
            break
        solvers, intervals, indices = built
        try:
            mu, shares = waterfill_mu(solvers, intervals, budget=1.0)
        except WaterfillBracketError:
            trace.pathologies += 1
            break
        phi_new = np.zeros_like(phi)
        phi_new[indices] = shares
        phi_new /= phi_new.sum()
        ln_new = ln_success(p, phi_new, t, power_w, rho)
        if ln_new < trace.ln_values[-1] - 1e-9:
            # Surrogate arithmetic went numerically sour: damp once, then stop.
            trace.pathologies += 1
            phi_try = 0.5 * (phi + phi_new)
            ln_try = ln_success(p, phi_try, t, power_w, rho)
            if ln_try < trace.ln_values[-1] - 1e-9:
                break
            phi_new, ln_new = phi_try, ln_try
        else:
            # Curvature-floored surrogates take geometric baby steps whenever
            # the floor dwarfs the local curvature (flat tails, tiny success
            # factors).  A doubling ray search along the step direction --
            # keeping a candidate only when the true objective improves --
            # collapses that crawl at one objective evaluation per doubling.
            # Candidates are renormalized because rounding in the step can
            # leak off the simplex, where a smaller share total fakes an
            # objective gain that no feasible split provides.
            direction = phi_new - phi
            scale = 2.0
            while scale <= 2.0**30:
                cand = phi + scale * direction
                if float(cand.min()) < 0.0 or cand.sum() <= 0.0:
                    break
                cand /= cand.sum()
                ln_cand = ln_success(p, cand, t, power_w, rho)
                if ln_cand <= ln_new:
                    break
                phi_new, ln_new = cand, ln_cand
                scale *= 2.0
        delta = float(np.max(np.abs(phi_new - phi)))
        gain = ln_new - trace.ln_values[-1]
        phi = phi_new
        trace.ln_values.append(ln_new)
        trace.mu_values.append(mu)
        trace.iterations += 1
        if delta < tol or gain < ftol:
            break
    trace.search_evals = counter.n
    return phi, trace


def _normalized_expansion(phi: np.ndarray, indices: list[int]) -> np.ndarray:
    """Clamp active shares to the floor and rescale them to spend the budget."""
    ph = np.maximum(phi[indices], PHI_FLOOR)
    return ph / ph.sum()


def solve_p3_mm2(
    p: SystemParams,
    phi_start,
    t_shares,
    power_w: float,
    rho: float,
    *,
    offload_only: bool = False,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[np.ndarray, InnerTrace]:
    """Split update with quadratic minorants and closed-form inner solves."""
    t = np.asarray(t_shares, dtype=float)
    indices = list(range(1, p.n_servers + 1)) if offload_only else list(range(p.n_servers + 1))
    slacks = p.latency_budget_s - np.cumsum(t)

    def build(phi: np.ndarray, counter: _WorkCounter):
        ph = _normalized_expansion(phi, indices)
        solvers = []
        intervals = []
        for pos, m in enumerate(indices):
            if m == 0:
                if rho <= 0.0:
                    return None
                comp = surrogate_computation(p, 0, ph[pos], rho / p.local_speed_hz)
                iv = phi_interval(None, comp)
                if iv is None:
                    return None

                def solver(mu: float, q=comp, lo=iv[0], hi=iv[1]) -> float:
                    counter.n += 1
                    return solve_p32a(q, mu, lo, hi)

            else:
                if t[m - 1] <= 0.0 or slacks[m - 1] <= 0.0:
                    return None
                tx = surrogate_transmission(p, m, ph[pos], t[m - 1], power_w)
                comp = surrogate_computation(p, m, ph[pos], slacks[m - 1])
                iv = phi_interval(tx, comp)
                if iv is None:
                    return None

                def solver(mu: float, qt=tx, qc=comp, lo=iv[0], hi=iv[1]) -> float:
                    counter.n += 1
                    return solve_p32b(qt, qc, mu, lo, hi)

            solvers.append(solver)
            intervals.append(iv)
        return solvers, intervals, indices

    return _mm_split_loop(p, phi_start, t, power_w, rho, build, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Block 3, mm1: tangent-composition minorants with a numeric inner search.
# ---------------------------------------------------------------------------


def _decreasing_root_bracketed(
    f: Callable[[float], float],
    a: float,
    b: float,
    fa: float,
    fb: float,
    *,
    xtol: float = 1e-13,
    max_iter: int = 200,
) -> float:
    """Illinois search for f(x) = 0 with f decreasing and f(a) > 0 > f(b)."""
    side = 0
    for _ in range(max_iter):
        if math.isfinite(fa) and math.isfinite(fb) and fb != fa:
            x = (a * fb - b * fa) / (fb - fa)
            if not a < x < b:
                x = 0.5 * (a + b)
        else:
            x = 0.5 * (a + b)
        fx = f(x)
        if fx == 0.0 or b - a < xtol * max(1.0, abs(b)):
            return x
        if fx > 0.0:
            a, fa = x, fx
            if side == -1 and math.isfinite(fb):
                fb *= 0.5
            side = -1
        else:
            b, fb = x, fx
            if side == 1 and math.isfinite(fa):
                fa *= 0.5
            side = 1
    return 0.5 * (a + b)


def _mm1_pieces(
    p: SystemParams, m: int, ph: float, t_m: float, time_slack: float, power_w: float
):
    """Value/derivative of the tangent-composition minorant at index m.

    Each success factor is log-concave in the reciprocal share, so replacing
    the reciprocal with its tangent line at the expansion point gives a
    concave lower bound of the log factor that is exact to first order.  The
    bound degenerates to -inf once the tangent argument crosses zero, which
    happens at twice the expansion share and acts as a natural trust region.
    """
    w = p.workload
    speed = p.local_speed_hz if m == 0 else p.server_speeds_hz[m - 1]
    psi = speed * time_slack / (p.task_bits * w.scale)
    u_hat = psi / ph
    du = -psi / (ph * ph)

    if m == 0:
        tx_terms = None
    else:
        y = power_w * p.mean_gains[m - 1] / p.noise_w
        k = p.bandwidth_hz * t_m / p.task_bits
        tx_terms = (y, k / ph, -k / (ph * ph))

    def value(phi: float) -> float:
        u = u_hat + du * (phi - ph)
        if u <= 0.0:
            return -math.inf
        total = _safe_log(regularized_lower_gamma(w.shape, u))
        if tx_terms is not None:
            y, v_hat, dv = tx_terms
            v = v_hat + dv * (phi - ph)
            if v <= 0.0:
                return -math.inf
            ex = _LN2 / v
            if ex > 700.0:
                return -math.inf
            total += -(math.exp(ex) - 1.0) / y
        return total

    def deriv(phi: float) -> float:
        u = u_hat + du * (phi - ph)
        if u <= 0.0:
            return -math.inf
        total = _dln_lower_gamma(w.shape, u) * du
        if tx_terms is not None:
            y, v_hat, dv = tx_terms
            v = v_hat + dv * (phi - ph)
            if v <= 0.0:
                return -math.inf
            ex = _LN2 / v
            if ex > 700.0:
                return -math.inf
            total += (_LN2 * math.exp(ex) / (y * v * v)) * dv
        return total

    return value, deriv


def solve_p3_mm1(
    p: SystemParams,
    phi_start,
    t_shares,
    power_w: float,
    rho: float,
    *,
    offload_only: bool = False,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[np.ndarray, InnerTrace]:
    """Split update with first-order minorants; same contract as ``mm2``
    but every inner maximization is a safeguarded numeric root search."""
    t = np.asarray(t_shares, dtype=float)
    indices = list(range(1, p.n_servers + 1)) if offload_only else list(range(p.n_servers + 1))
    slacks = p.latency_budget_s - np.cumsum(t)

    def build(phi: np.ndarray, counter: _WorkCounter):
        ph_vec = _normalized_expansion(phi, indices)
        solvers = []
        intervals = []
        for pos, m in enumerate(indices):
            ph = float(ph_vec[pos])
            if m == 0:
                if rho <= 0.0:
                    return None
                slack = rho / p.local_speed_hz
                t_m = 0.0
            else:
                if t[m - 1] <= 0.0 or slacks[m - 1] <= 0.0:
                    return None
                slack = float(slacks[m - 1])
                t_m = float(t[m - 1])
            _, deriv = _mm1_pieces(p, m, ph, t_m, slack, power_w)
            lo = PHI_FLOOR
            hi = min(1.0, 2.0 * ph * (1.0 - 1e-9))
            if hi <= lo:
                return None

            def solver(mu: float, d=deriv, lo=lo, hi=hi) -> float:
                def d_counted(x: float) -> float:
                    counter.n += 1
                    return d(x)

                d_lo = d_counted(lo) + mu
                if d_lo <= 0.0:
                    return lo
                d_hi = d_counted(hi) + mu
                if d_hi >= 0.0:
                    return hi
                return _decreasing_root_bracketed(
                    lambda x: d_counted(x) + mu, lo, hi, d_lo, d_hi
                )

            solvers.append(solver)
            intervals.append((lo, hi))
        return solvers, intervals, indices

    return _mm_split_loop(p, phi_start, t, power_w, rho, build, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Block 3, plain projected gradient (baseline quality/latency reference).
# ---------------------------------------------------------------------------


def solve_p3_pg(
    p: SystemParams,
    phi_start,
    t_shares,
    power_w: float,
    rho: float,
    *,
    offload_only: bool = False,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> tuple[np.ndarray, InnerTrace]:
    """Split update by projected gradient ascent on the true objective.

    ``tol`` bounds the projected-gradient norm at exit.  Kept mainly as a
    like-for-like reference point for the minorize-maximize updates."""
    t = np.asarray(t_shares, dtype=float)
    n = p.n_servers
    w = p.workload
    slacks = p.latency_budget_s - np.cumsum(t)
    lo_idx = 1 if offload_only else 0

    def value(phi: np.ndarray) -> float:
        return ln_success(p, phi, t, power_w, rho)

    def grad(phi: np.ndarray) -> np.ndarray:
        g = np.zeros(n + 1)
        if not offload_only and phi[0] > 0.0 and rho > 0.0:
            psi0 = rho / (p.task_bits * w.scale)
            u = psi0 / phi[0]
            g[0] = -_dln_lower_gamma(w.shape, u) * psi0 / phi[0] ** 2
        for m in range(1, n + 1):
            if t[m - 1] <= 0.0 or slacks[m - 1] <= 0.0:
                continue
            c = p.task_bits / (p.bandwidth_hz * t[m - 1])
            y = power_w * p.mean_gains[m - 1] / p.noise_w
            x = c * max(phi[m], 0.0)
            if x * _LN2 < 700.0:
                g[m] += -_LN2 * c * math.exp(x * _LN2) / y
            psi = p.server_speeds_hz[m - 1] * slacks[m - 1] / (p.task_bits * w.scale)
            ph = max(phi[m], 1e-12)
            u = psi / ph
            r = _dln_lower_gamma(w.shape, u)
            if math.isfinite(r):
                g[m] += -r * psi / ph**2
        return g

    def project(phi: np.ndarray) -> np.ndarray:
        out = np.zeros(n + 1)
        out[lo_idx:] = _project_simplex_eq(phi[lo_idx:], 1.0)
        return out

    phi = project(np.asarray(phi_start, dtype=float).copy())
    trace = InnerTrace(ln_values=[value(phi)])
    fval = trace.ln_values[0]
    step = 0.25

    for _ in range(max_iter):
        g = grad(phi)
        gp = project(phi + g) - phi
        if float(np.linalg.norm(gp)) <= tol:
            break
        s = step
        accepted = False
        for _ in range(60):
            trial = project(phi + s * g)
            diff = trial - phi
            tval = value(trial)
            if tval > -math.inf and tval >= fval + 1e-4 * float(g @ diff):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        phi, fval = trial, tval
        trace.ln_values.append(fval)
        trace.iterations += 1
        trace.search_evals += 1
        step = min(s * 2.0, 4.0)
    return phi, trace


# ---------------------------------------------------------------------------
# Outer loop.
# ---------------------------------------------------------------------------

_P3_VARIANTS = {
    "mm2": solve_p3_mm2,
    "mm1": solve_p3_mm1,
    "pg": solve_p3_pg,
}


@dataclass
class BcdTrace:
    """Objective trajectory of the outer loop (index 0 is the start point).

    ``inner_iterations`` holds per-outer surrogate-rebuild counts of the split
    update; ``inner_search_evals`` holds the per-outer numeric-search work
    (see :class:`InnerTrace`)."""

    ln_p_success: list[float]
    allocations: list[Allocation]
    inner_iterations: list[int]
    inner_search_evals: list[int]
    converged: bool
    variant: str

    @property
    def n_outer(self) -> int:
        return len(self.ln_p_success) - 1

    @property
    def total_inner(self) -> int:
        return int(sum(self.inner_iterations))

    @property
    def total_search_evals(self) -> int:
        return int(sum(self.inner_search_evals))


@dataclass
class BcdResult:
    params: SystemParams
    allocation: Allocation
    breakdown: SuccessBreakdown
    trace: BcdTrace

    @property
    def p_outage(self) -> float:
        return self.breakdown.p_outage

    @property
    def ln_p_success(self) -> float:
        return self.trace.ln_p_success[-1]


def _to_allocation(p: SystemParams, phi, t, power_w: float, rho: float) -> Allocation:
    phi = np.maximum(np.asarray(phi, dtype=float), 0.0)
    phi = phi / phi.sum()
    return Allocation(
        phi=tuple(float(v) for v in phi),
        t_shares=tuple(max(float(v), 0.0) for v in np.asarray(t, dtype=float)),
        power_w=float(power_w),
        rho=max(float(rho), 0.0),
    )


def bcd_solve(
    p: SystemParams,
    variant: str = "mm2",
    init: Allocation | None = None,
    *,
    offload_only: bool = False,
    tol: float = 1e-6,
    max_outer: int = 100,
    inner_tol: float = 1e-6,
) -> BcdResult:
    """Alternate the three block updates until ln P_success stalls.

    Stops when the improvement drops below ``tol`` (default 1e-6) or after
    ``max_outer`` rounds.  Raises :class:`FeasibilityError` when the starting
    allocation violates a constraint.
    """
    if variant not in _P3_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; pick one of {sorted(_P3_VARIANTS)}")
    alloc = init if init is not None else default_allocation(p, offload_only=offload_only)
    if offload_only and alloc.phi[0] != 0.0:
        raise FeasibilityError("offload-only solve requires a zero local share")
    assert_feasible(p, alloc)
    solve_p3 = _P3_VARIANTS[variant]

    phi = np.asarray(alloc.phi, dtype=float)
    t = np.asarray(alloc.t_shares, dtype=float)
    power, rho = alloc.power_w, alloc.rho

    ln_vals = [ln_success(p, phi, t, power, rho)]
    allocs = [alloc]
    inner_counts: list[int] = []
    search_counts: list[int] = []
    converged = False

    for _ in range(max_outer):
        power, rho = solve_p1(p, phi, t)
        t = solve_p2(p, phi, t, power, rho)
        phi, inner = solve_p3(
            p, phi, t, power, rho, offload_only=offload_only, tol=inner_tol
        )
        # Round-trip through the stored form so the recorded objective is the
        # objective of the recorded allocation, not of a drifted work array.
        stored = _to_allocation(p, phi, t, power, rho)
        phi = np.asarray(stored.phi, dtype=float)
        t = np.asarray(stored.t_shares, dtype=float)
        power, rho = stored.power_w, stored.rho
        ln_vals.append(ln_success(p, phi, t, power, rho))
        inner_counts.append(inner.iterations)
        search_counts.append(inner.search_evals)
        allocs.append(stored)
        if abs(ln_vals[-1] - ln_vals[-2]) < tol:
            converged = True
            break

    final = allocs[-1]
    trace = BcdTrace(
        ln_p_success=ln_vals,
        allocations=allocs,
        inner_iterations=inner_counts,
        inner_search_evals=search_counts,
        converged=converged,
        variant=variant,
    )
    return BcdResult(
        params=p,
        allocation=final,
        breakdown=success_breakdown(p, final),
        trace=trace,
    )
