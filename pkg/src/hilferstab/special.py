"""Special functions used by the expression language and the test oracles."""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy.special import rgamma

_SERIES_MAX_TERMS = 2000


def _ml_double(alpha: float, beta: float, z: float) -> float:
    total = 0.0
    comp = 0.0
    log_abs_z = math.log(abs(z)) if z != 0 else -math.inf
    for k in range(_SERIES_MAX_TERMS):
        arg = beta + alpha * k
        if k == 0:
            term = float(rgamma(arg))
        elif z == 0:
            break
        elif arg <= 0:
            term = z**k * float(rgamma(arg))
        else:
            term = math.exp(k * log_abs_z - math.lgamma(arg))
            if z < 0 and k % 2 == 1:
                term = -term
        # compensated sum: the alternating case otherwise drifts in the last digits
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if k > 2 and arg > 1 and abs(term) < 1e-17 * max(abs(total), 1e-300):
            break
    return total


def _ml_mp(alpha: float, beta: float, z: float) -> float:
    # terms peak near |z|**(k) / Gamma(alpha k) ~ exp(|z|**(1/alpha)); need that many extra digits
    extra = int(abs(z) ** (1.0 / alpha) / math.log(10)) + 20
    if extra > 4000:
        raise ValueError(f"mittag_leffler: argument {z} too large for series evaluation at alpha={alpha}")
    with mpmath.workdps(15 + extra):
        a, b, x = mpmath.mpf(alpha), mpmath.mpf(beta), mpmath.mpf(z)
        total = mpmath.mpf(0)
        k = 0
        while True:
            term = x**k / mpmath.gamma(b + a * k)
            total += term
            k += 1
            if k > 10 and abs(term) < mpmath.mpf(10) ** (-(15 + extra)) * max(abs(total), 1):
                break
        return float(total)


def mittag_leffler(alpha, beta, z):
    """Two-parameter Mittag-Leffler function ``E_{alpha,beta}(z)`` for real ``z``.

    Evaluated from the power series. For ``z > 4``, and for negative ``z`` with
    ``|z|^(1/alpha) > 1``, the sum is carried out in extended precision so that
    the alternating series does not lose its digits to cancellation.
    """
    alpha_a, beta_a, z_a = np.broadcast_arrays(
        np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float), np.asarray(z, dtype=float)
    )
    out = np.empty(z_a.shape, dtype=float)
    for idx in np.ndindex(z_a.shape):
        a, b, x = float(alpha_a[idx]), float(beta_a[idx]), float(z_a[idx])
        if not a > 0:
            raise ValueError(f"mittag_leffler needs alpha > 0, got {a}")
        if not math.isfinite(x):
            out[idx] = math.nan
        elif 0.0 <= x <= 4.0 or (x < 0.0 and abs(x) ** (1.0 / a) <= 1.0):
            out[idx] = _ml_double(a, b, x)
        else:
            out[idx] = _ml_mp(a, b, x)
    if out.ndim == 0:
        return float(out)
    return out
