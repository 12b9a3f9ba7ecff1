"""Closed-form kernels and special functions of the scaled particle system.

Everything here is a pure function of its arguments.  Positions and times are
in diffusively scaled units (space / sqrt(K), time / K).  ``x`` arguments are
vectorized; time arguments are scalars unless noted otherwise.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc, roots_legendre

from .errors import DomainError, QuadratureError

SQRT_PI = float(np.sqrt(np.pi))
FOUR_OVER_SQRT_PI = 4.0 / SQRT_PI

# Quadrature policy: adaptive rule with this absolute tolerance; semi-infinite
# integrals are truncated where the Gaussian factor is below machine noise.
QUAD_ABS_TOL = 1e-9
_TRUNC_SIGMAS = 12.0

_GL_NODES, _GL_WEIGHTS = roots_legendre(96)


def _scalar_or_array(result, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(result)
    return result


def _check_time(t: float, name: str = "t") -> float:
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"{name} must be strictly positive, got {t}")
    return t


def heat_kernel(t, x):
    """Standard heat kernel p(t, x) = (2 pi t)^(-1/2) exp(-x^2 / 2t)."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return _scalar_or_array(out, x)


def heat_kernel_dx(t, x):
    """Space derivative of the heat kernel, d/dx p(t, x) = -(x/t) p(t, x)."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    out = -(x / t) * np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return _scalar_or_array(out, x)


def bm_cdf(t, x):
    """Brownian distribution function Pr(B(t) <= x), via erfc for accuracy."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(-x / np.sqrt(2.0 * t))
    return _scalar_or_array(out, x)


def bm_tail(t, x):
    """Brownian tail Pr(B(t) > x).

    Computed as erfc(x / sqrt(2t)) / 2; relative accuracy holds deep into the
    tail, which matters because absorbed-path probabilities are differences
    of two such tails.
    """
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(x / np.sqrt(2.0 * t))
    return _scalar_or_array(out, x)


def neumann_kernel(t, y, x):
    """Heat kernel reflected at the origin: p(t, y - x) + p(t, y + x)."""
    t = _check_time(t)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    norm = 1.0 / np.sqrt(2.0 * np.pi * t)
    out = norm * (np.exp(-((y - x) ** 2) / (2.0 * t)) + np.exp(-((y + x) ** 2) / (2.0 * t)))
    return _scalar_or_array(out, y, x)


def absorbed_tail(t, y, x):
    """Tail of a Brownian motion started at y >= 0 and absorbed at 0.

    Returns Pr(B_y(t) > x, no hit of 0 by t) = Phi(t, y - x) - Phi_tail(t, y + x),
    which solves the heat equation in (t, y) with absorbing condition at y = 0
    and initial condition 1_{(x, inf)}(y).  ``t = 0`` returns that indicator.
    """
    t = float(t)
    if t < 0.0:
        raise DomainError(f"t must be non-negative, got {t}")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(y < 0.0) or np.any(x < 0.0):
        raise DomainError("absorbed_tail requires y >= 0 and x >= 0")
    if t == 0.0:
        out = np.where(y > x, 1.0, 0.0)
        return _scalar_or_array(out, y, x)
    out = bm_cdf(t, np.asarray(y - x)) - bm_tail(t, np.asarray(y + x))
    # differences of tails can round to tiny negatives
    out = np.maximum(out, 0.0)
    return _scalar_or_array(out, y, x)


def g_term(K, t, x):
    """Absorption contribution sqrt(K) * psi(t, 1/sqrt(K), x).

    Expected scaled tail of K independent absorbed Brownian particles started
    at 1/sqrt(K); converges to 2 p(t, x) as K grows.
    """
    K = int(K)
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    sk = np.sqrt(float(K))
    out = sk * np.asarray(absorbed_tail(t, 1.0 / sk, x))
    return _scalar_or_array(out, np.asarray(x))


def density_u1(t, x):
    """Absorption-phase density u1(t, x) = -2 d/dx p(t, x) + 4 Phi_tail(t, x).

    Solves the heat equation on x > 0 with boundary value u1(t, 0) = 2.
    """
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise DomainError("density_u1 requires x >= 0")
    out = -2.0 * np.asarray(heat_kernel_dx(t, x)) + 4.0 * np.asarray(bm_tail(t, x))
    return _scalar_or_array(out, x)


def heat_kernel_time_integral(T, x):
    """Integral of the heat kernel in time: int_0^T p(u, x) du.

    Closed form 2 T p(T, x) - 2 |x| Phi_tail(T, |x|); vectorized in both
    arguments, with T = 0 mapping to 0.
    """
    T = np.asarray(T, dtype=float)
    x = np.abs(np.asarray(x, dtype=float))
    if np.any(T < 0.0):
        raise DomainError("T must be non-negative")
    Ts = np.where(T > 0.0, T, 1.0)  # placeholder where T == 0
    val = 2.0 * Ts * np.exp(-x * x / (2.0 * Ts)) / np.sqrt(2.0 * np.pi * Ts) \
        - 2.0 * x * 0.5 * erfc(x / np.sqrt(2.0 * Ts))
    out = np.where(T > 0.0, val, 0.0)
    return _scalar_or_array(out, T, x)


def tail_absorption_phase(t, x):
    """Hydrodynamic tail U*(t, x) in the absorption phase, 0 < t <= 1/2.

    U*(t, x) = 2 p(t, x) + int_0^t 2 p(t - s, x) ds, evaluated in closed form:
    2 (1 + 2t) p(t, x) - 4 |x| Phi_tail(t, |x|).  Equals the tail integral of
    ``density_u1``.
    """
    t = float(t)
    if not 0.0 < t <= 0.5:
        raise DomainError(f"absorption phase requires 0 < t <= 1/2, got {t}")
    x = np.abs(np.asarray(x, dtype=float))
    out = 2.0 * (1.0 + 2.0 * t) * np.asarray(heat_kernel(t, x)) \
        - 4.0 * x * np.asarray(bm_tail(t, x))
    return _scalar_or_array(out, x)


def _tail_gap_half(y):
    """U*(1/2, 0) - U*(1/2, y) for y >= 0, the mass between 0 and y."""
    y = np.asarray(y, dtype=float)
    return FOUR_OVER_SQRT_PI - (4.0 * np.asarray(heat_kernel(0.5, y))
                                - 4.0 * np.abs(y) * np.asarray(bm_tail(0.5, np.abs(y))))


def _lambda_window(t, z):
    lo = max(0.0, z - _TRUNC_SIGMAS * np.sqrt(t))
    hi = z + _TRUNC_SIGMAS * np.sqrt(t)
    return lo, hi


def lambda_boundary_lhs_fixed(t, z):
    """Fixed-order Gauss-Legendre evaluation of ``lambda_lhs``.

    Same integral, one 96-node panel over the truncated window.  The
    integrand is a Gaussian times an entire bounded profile, so the panel
    is accurate far below 1e-9; agreement with the adaptive rule is pinned
    by tests.  This is the evaluation the boundary solver uses (it needs
    tens of thousands of calls).
    """
    t = _check_time(t)
    z = float(z)
    lo, hi = _lambda_window(t, z)
    if hi <= lo:
        return 0.0
    half = 0.5 * (hi - lo)
    y = half * _GL_NODES + 0.5 * (hi + lo)
    w = half * _GL_WEIGHTS
    return float(np.sum(w * np.asarray(heat_kernel(t, z - y)) * _tail_gap_half(y)))


def lambda_lhs(t, z):
    """Left-hand side of the moving-boundary equation.

    Lambda(t, z) = int_0^inf p(t, z - y) (U*(1/2, 0) - U*(1/2, y)) dy,
    strictly increasing in z with limits 0 (z -> -inf) and 4/sqrt(pi)
    (z -> +inf).  Adaptive quadrature on the Gaussian-truncated window;
    raises ``QuadratureError`` if the requested tolerance is not reached.
    """
    t = _check_time(t)
    z = float(z)
    lo, hi = _lambda_window(t, z)
    if hi <= lo:
        return 0.0
    val, abserr = quad(
        lambda y: heat_kernel(t, z - y) * float(_tail_gap_half(y)),
        lo, hi, epsabs=QUAD_ABS_TOL * 1e-3, epsrel=1e-12, limit=200,
    )
    if abserr > QUAD_ABS_TOL:
        raise QuadratureError("lambda_lhs quadrature did not converge", abserr)
    return val


def confinement_prob(t, a, b, n_terms: int = 10):
    """Probability that a + B(s) stays in (0, b) for all s <= t.

    Eigenfunction series
        sum_n 4/((2n+1) pi) sin((2n+1) pi a / b) exp(-(2n+1)^2 pi^2 t / 2 b^2),
    truncated at ``n_terms`` terms.  Terms decay super-exponentially in n, so
    the truncation error is below the first omitted term's envelope; the
    default 10 terms covers all t >= 1e-4 * b^2.  ``t = 0`` returns 1 exactly
    (the series converges to the indicator only pointwise).
    """
    t = float(t)
    if t < 0.0:
        raise DomainError(f"t must be non-negative, got {t}")
    a = float(a)
    b = float(b)
    if not 0.0 < a < b:
        raise DomainError(f"need 0 < a < b, got a={a}, b={b}")
    n_terms = int(n_terms)
    if n_terms < 1:
        raise DomainError("n_terms must be >= 1")
    if t == 0.0:
        return 1.0
    n = np.arange(n_terms)
    m = 2 * n + 1
    terms = 4.0 / (m * np.pi) * np.sin(m * np.pi * a / b) \
        * np.exp(-(m * m) * np.pi ** 2 * t / (2.0 * b * b))
    return float(np.sum(terms))
