"""Scalar special functions shared by the outage model and the solvers.

The incomplete-gamma evaluation and the closed-form polynomial solvers are
implemented from first principles because the solver loops call them many
thousands of times and the test suite checks them against independent
quadrature / companion-matrix oracles.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

__all__ = [
    "ConvergenceError",
    "DegenerateCoefficientError",
    "GammaWorkload",
    "QuarticCoeffs",
    "regularized_lower_gamma",
    "gamma_pdf",
    "chi",
    "solve_quartic_real",
    "solve_cubic_real",
    "solve_quadratic_real",
    "solve_poly_real",
]

_LN2 = math.log(2.0)
_MAX_ITER = 500
_REL_TOL = 1e-12
_FPMIN = 1e-300

# Residual certificate and root-merging tolerances for the polynomial solvers.
_RESIDUAL_TOL = 1e-9
_ROOT_MERGE_TOL = 1e-8
_DEGENERATE_REL = 1e-14


class ConvergenceError(RuntimeError):
    """An iterative evaluation failed to reach its tolerance."""


class DegenerateCoefficientError(ValueError):
    """Leading coefficient is (numerically) zero for the requested degree."""


@dataclass(frozen=True)
class GammaWorkload:
    """Gamma-distributed per-bit processing demand (cycles per bit).

    ``shape`` and ``scale`` are the usual Gamma parameters; the mean demand
    is ``shape * scale`` cycles per bit.
    """

    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.shape) and self.shape > 0.0):
            raise ValueError(f"workload shape must be finite and > 0, got {self.shape}")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"workload scale must be finite and > 0, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


def _lower_series(shape: float, x: float) -> float:
    # Power series around zero; effective for x < shape + 1.
    term = 1.0 / shape
    total = term
    denom = shape
    for _ in range(_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _REL_TOL:
            return total * math.exp(-x + shape * math.log(x) - math.lgamma(shape))
    raise ConvergenceError(f"lower-gamma series stalled at shape={shape}, x={x}")


def _upper_continued_fraction(shape: float, x: float) -> float:
    # Modified Lentz evaluation of the upper-tail continued fraction.
    b = x + 1.0 - shape
    c = 1.0 / _FPMIN
    d = 1.0 / b if b != 0.0 else 1.0 / _FPMIN
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - shape)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _REL_TOL:
            return h * math.exp(-x + shape * math.log(x) - math.lgamma(shape))
    raise ConvergenceError(f"upper-gamma continued fraction stalled at shape={shape}, x={x}")


def regularized_lower_gamma(shape: float, x: float) -> float:
    """Regularized lower incomplete gamma P(shape, x) in [0, 1].

    Series expansion below ``shape + 1``, continued fraction above; both run
    to a relative tolerance of 1e-12.
    """
    if not (math.isfinite(shape) and shape > 0.0):
        raise ValueError(f"shape must be finite and > 0, got {shape}")
    if math.isnan(x) or x < 0.0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < shape + 1.0:
        return min(1.0, _lower_series(shape, x))
    return min(1.0, max(0.0, 1.0 - _upper_continued_fraction(shape, x)))


def gamma_pdf(x: float, workload: GammaWorkload) -> float:
    """Density of the per-bit processing demand at ``x`` (cycles per bit)."""
    if math.isnan(x) or x < 0.0:
        raise ValueError(f"x must be >= 0, got {x}")
    a, b = workload.shape, workload.scale
    if x == 0.0:
        if a > 1.0:
            return 0.0
        if a == 1.0:
            return 1.0 / b
        return math.inf
    log_pdf = (a - 1.0) * math.log(x / b) - x / b - math.lgamma(a)
    if log_pdf < -745.0:
        return 0.0
    return math.exp(log_pdf) / b


def chi(x: float, y: float) -> float:
    """Success kernel exp(-(2**x - 1) / y) for a unit-mean exponential gain.

    ``x`` is the spectral-efficiency demand (bits/s/Hz) and ``y`` the mean
    receive SNR; the value is the probability that a rate-x transmission
    succeeds within its slot.
    """
    if math.isnan(x) or x < 0.0:
        raise ValueError(f"x must be >= 0, got {x}")
    if not (y > 0.0):
        raise ValueError(f"y must be > 0, got {y}")
    t = x * _LN2
    if t > 700.0:
        return 0.0
    arg = math.expm1(t) / y
    if arg > 745.0:
        return 0.0
    return math.exp(-arg)


# ---------------------------------------------------------------------------
# Closed-form polynomial solvers.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuarticCoeffs:
    """Real coefficients of a*x^4 + b*x^3 + c*x^2 + d*x + e."""

    a: float
    b: float
    c: float
    d: float
    e: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "d", "e"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"coefficient {name} must be finite, got {v}")

    @property
    def norm(self) -> float:
        return max(abs(self.a), abs(self.b), abs(self.c), abs(self.d), abs(self.e))

    def __call__(self, x):
        # Horner evaluation; works for real and complex arguments.
        return (((self.a * x + self.b) * x + self.c) * x + self.d) * x + self.e

    def derivative(self, x):
        return ((4.0 * self.a * x + 3.0 * self.b) * x + 2.0 * self.c) * x + self.d


_OMEGA = complex(-0.5, math.sqrt(3.0) / 2.0)  # primitive cube root of unity


def _quartic_closed_form(a: float, b: float, c: float, d: float, e: float) -> list[complex]:
    """All four roots of a non-degenerate quartic via nested radicals.

    Resolvent-cubic combination: three candidate pairings are formed with the
    cube roots of unity and the one with the largest |M| is kept, which avoids
    catastrophic cancellation in the final square roots.
    """
    p_res = (c * c - 3.0 * b * d + 12.0 * a * e) / 9.0
    u_res = (
        2.0 * c**3 - 9.0 * b * c * d + 27.0 * b * b * e + 27.0 * a * d * d - 72.0 * a * c * e
    ) / 54.0
    disc = complex(u_res * u_res - p_res**3)
    droot = cmath.sqrt(disc)
    # Pick the additive branch of larger magnitude before taking the cube root.
    ucube = u_res + droot if abs(u_res + droot) >= abs(u_res - droot) else u_res - droot
    if ucube == 0:
        u1 = 0j
        v1 = 0j
    else:
        u1 = ucube ** (1.0 / 3.0)
        v1 = p_res / u1

    best_y = 0j
    best_m2 = 0j
    for k in (1, 2, 3):
        y = _OMEGA ** (k - 1) * u1 + _OMEGA ** ((4 - k) % 3) * v1
        m2 = b * b - (8.0 / 3.0) * a * c + 4.0 * a * y
        if abs(m2) >= abs(best_m2):
            best_m2 = m2
            best_y = y

    m_scale = max(b * b, abs(a * c), abs(a) * (abs(u1) + abs(v1)), 1e-30)
    if abs(best_m2) <= 1e-12 * m_scale:
        # All pairings collapse: (near) quadruple/double structure.
        s0 = complex(b * b - (8.0 / 3.0) * a * c)
        sq = cmath.sqrt(s0)
        r1 = (-b + sq) / (4.0 * a)
        r2 = (-b - sq) / (4.0 * a)
        return [r1, r1, r2, r2]

    m = cmath.sqrt(best_m2)
    s = 2.0 * b * b - (16.0 / 3.0) * a * c - 4.0 * a * best_y
    t = (8.0 * a * b * c - 16.0 * a * a * d - 2.0 * b**3) / m
    sq_minus = cmath.sqrt(s - t)
    sq_plus = cmath.sqrt(s + t)
    inv = 1.0 / (4.0 * a)
    return [
        (-b - m + sq_minus) * inv,
        (-b - m - sq_minus) * inv,
        (-b + m + sq_plus) * inv,
        (-b + m - sq_plus) * inv,
    ]


def _polish_complex(q: QuarticCoeffs, z: complex, steps: int = 4) -> complex:
    for _ in range(steps):
        dq = q.derivative(z)
        if dq == 0:
            break
        z_next = z - q(z) / dq
        if not (math.isfinite(z_next.real) and math.isfinite(z_next.imag)):
            break
        z = z_next
    return z


def _polish_real(q: QuarticCoeffs, x: float, steps: int = 8) -> float:
    # Guarded Newton: only accept steps that reduce the residual.
    fx = q(x)
    for _ in range(steps):
        dq = q.derivative(x)
        if dq == 0.0:
            break
        x_next = x - fx / dq
        if not math.isfinite(x_next):
            break
        f_next = q(x_next)
        if abs(f_next) >= abs(fx):
            break
        x, fx = x_next, f_next
    return x


def _merge_sorted_roots(roots: list[float], tol: float) -> list[float]:
    merged: list[float] = []
    for r in sorted(roots):
        if merged and abs(r - merged[-1]) <= tol:
            continue
        merged.append(r)
    return merged


def solve_quartic_real(coeffs: QuarticCoeffs, imag_tol: float = 1e-8) -> list[float]:
    """Real roots of a quartic, ascending, with duplicates merged at 1e-8.

    Every returned root carries a residual certificate
    |q(r)| <= 1e-9 * max(1, ||coeffs||_inf) * max(1, |r|)^4; the root-size
    factor accounts for Horner evaluation noise away from the origin.  A root
    candidate counts as real when its closed-form imaginary part is at most
    ``imag_tol`` in magnitude.
    Raises :class:`DegenerateCoefficientError` when the leading coefficient is
    numerically zero; callers should fall back to :func:`solve_poly_real`.
    """
    norm = coeffs.norm
    if norm == 0.0:
        raise DegenerateCoefficientError("all quartic coefficients are zero")
    if abs(coeffs.a) < _DEGENERATE_REL * norm:
        raise DegenerateCoefficientError(
            f"leading coefficient {coeffs.a} is degenerate relative to ||coeffs||={norm}"
        )

    candidates = _quartic_closed_form(coeffs.a, coeffs.b, coeffs.c, coeffs.d, coeffs.e)
    real_roots: list[float] = []
    for z in candidates:
        z = _polish_complex(coeffs, z)
        if abs(z.imag) <= imag_tol:
            real_roots.append(_polish_real(coeffs, z.real))

    merged = _merge_sorted_roots(real_roots, _ROOT_MERGE_TOL)
    for r in merged:
        bound = _RESIDUAL_TOL * max(1.0, norm) * max(1.0, abs(r)) ** 4
        if abs(coeffs(r)) > bound:
            raise ConvergenceError(
                f"quartic root {r} has residual {coeffs(r):.3e} above bound {bound:.3e}"
            )
    return merged


def solve_cubic_real(b: float, c: float, d: float, e: float, imag_tol: float = 1e-8) -> list[float]:
    """Real roots of b*x^3 + c*x^2 + d*x + e (ascending, merged)."""
    norm = max(abs(b), abs(c), abs(d), abs(e))
    if norm == 0.0:
        raise DegenerateCoefficientError("all cubic coefficients are zero")
    if abs(b) < _DEGENERATE_REL * norm:
        raise DegenerateCoefficientError("cubic leading coefficient is degenerate")

    # Depressed form t^3 + p t + q with x = t - c / (3 b).
    shift = c / (3.0 * b)
    p = d / b - (c * c) / (3.0 * b * b)
    q = 2.0 * shift**3 - shift * (d / b) + e / b

    disc = complex((q / 2.0) ** 2 + (p / 3.0) ** 3)
    droot = cmath.sqrt(disc)
    scube = -q / 2.0 + droot if abs(-q / 2.0 + droot) >= abs(-q / 2.0 - droot) else -q / 2.0 - droot
    if scube == 0:
        ts = [0j, 0j, 0j] if p == 0 else [cmath.sqrt(complex(-p)), -cmath.sqrt(complex(-p)), 0j]
    else:
        s1 = scube ** (1.0 / 3.0)
        ts = [w * s1 - p / (3.0 * (w * s1)) for w in (1, _OMEGA, _OMEGA**2)]

    def f(x: float) -> float:
        return ((b * x + c) * x + d) * x + e

    def df(x: float) -> float:
        return (3.0 * b * x + 2.0 * c) * x + d

    real_roots = []
    for t in ts:
        z = t - shift
        # A couple of complex Newton steps to settle the branch.
        for _ in range(3):
            dv = (3.0 * b * z + 2.0 * c) * z + d
            if dv == 0:
                break
            z = z - (((b * z + c) * z + d) * z + e) / dv
        if abs(z.imag) <= imag_tol:
            x = z.real
            fx = f(x)
            for _ in range(6):
                dv = df(x)
                if dv == 0.0:
                    break
                x_next = x - fx / dv
                if not math.isfinite(x_next):
                    break
                f_next = f(x_next)
                if abs(f_next) >= abs(fx):
                    break
                x, fx = x_next, f_next
            real_roots.append(x)

    merged = _merge_sorted_roots(real_roots, _ROOT_MERGE_TOL)
    for r in merged:
        bound = _RESIDUAL_TOL * max(1.0, norm) * max(1.0, abs(r)) ** 3
        if abs(f(r)) > bound:
            raise ConvergenceError(f"cubic root {r} has residual {f(r):.3e} above bound {bound:.3e}")
    return merged


def solve_quadratic_real(c: float, d: float, e: float) -> list[float]:
    """Real roots of c*x^2 + d*x + e (ascending); stable for small c."""
    norm = max(abs(c), abs(d), abs(e))
    if norm == 0.0:
        raise DegenerateCoefficientError("all quadratic coefficients are zero")
    if abs(c) < _DEGENERATE_REL * norm:
        if abs(d) < _DEGENERATE_REL * norm:
            return []
        return [-e / d]
    disc = d * d - 4.0 * c * e
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    # Citardauq pairing avoids cancellation when d dominates.
    if d >= 0.0:
        q = -0.5 * (d + sq)
    else:
        q = -0.5 * (d - sq)
    roots = []
    if q != 0.0:
        roots.append(e / q)
    if c != 0.0:
        roots.append(q / c)
    if not roots:
        roots = [0.0, 0.0]
    return _merge_sorted_roots(roots, _ROOT_MERGE_TOL)


def solve_poly_real(coeffs: QuarticCoeffs, imag_tol: float = 1e-8) -> list[float]:
    """Real roots of a polynomial of degree <= 4, routing degenerate leading
    coefficients down to the cubic/quadratic/linear solvers."""
    norm = coeffs.norm
    if norm == 0.0:
        raise ValueError("cannot solve the identically zero polynomial")
    if abs(coeffs.a) >= _DEGENERATE_REL * norm:
        return solve_quartic_real(coeffs, imag_tol=imag_tol)
    if abs(coeffs.b) >= _DEGENERATE_REL * norm:
        return solve_cubic_real(coeffs.b, coeffs.c, coeffs.d, coeffs.e, imag_tol=imag_tol)
    if abs(coeffs.c) >= _DEGENERATE_REL * norm or abs(coeffs.d) >= _DEGENERATE_REL * norm:
        return solve_quadratic_real(coeffs.c, coeffs.d, coeffs.e)
    return []
