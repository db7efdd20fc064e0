r"""ψ-Riemann-Liouville integrals and ψ-Hilfer derivatives on graded meshes.

The integral

.. math::

    I^{\alpha;\psi} g(x) = \frac{1}{\Gamma(\alpha)} \int_a^x
        \psi'(s) (\psi(x) - \psi(s))^{\alpha - 1} g(s)\, ds

becomes an Abel integral in ``u = ψ(s) - ψ(a)``. It is discretised by
product integration: the regular part of the integrand is interpolated
piecewise linearly in ``u`` and each panel is integrated exactly against the
kernel ``(U - u)^(α-1)``. Data in weighted form ``w = u^e g`` carry the
factor ``u^(-e)`` into the kernel, so endpoint singularities of the
admissible type cost nothing.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gammaln, roots_jacobi

from .grid import PLAIN, GridFunction, Mesh
from .model import FractionalOrder, PsiMap

# Gauss-Jacobi points per panel for weighted data
_QUAD_POINTS = 30
MIN_DERIVATIVE_NODES = 8


def _ratio_gamma(p: float, alpha: float) -> float:
    """``Γ(1+p) / Γ(1+p+α)``: the scaled integral of ``u^p`` at ``x_0``."""
    return math.exp(gammaln(1.0 + p) - gammaln(1.0 + p + alpha))


def _power_diff(top, bottom, h, k):
    """``top^k - bottom^k`` for ``top = bottom + h`` without cancellation."""
    out = np.empty_like(top)
    pos = bottom > 0
    out[pos] = bottom[pos] ** k * np.expm1(k * np.log1p(h[pos] / bottom[pos]))
    out[~pos] = top[~pos] ** k
    return out


def _plain_row(t_gap, alpha):
    """Hat-function weights of one row for plain data (closed form).

    ``t_gap[j] = (U - u_j)/U`` for ``j = 0..n``; returns (left, right) panel weights.
    """
    A = t_gap[:-1]
    B = t_gap[1:]
    h = A - B
    i0 = _power_diff(A, B, h, alpha) / alpha
    # ∫ s^(α-1) (A - s) ds over [B, A], divided by h, is the right-node weight
    right = (A * i0 - _power_diff(A, B, h, alpha + 1.0) / (alpha + 1.0)) / h
    right = np.clip(right, 0.0, i0)
    return i0 - right, right


@lru_cache(maxsize=8)
def _jacobi(a: float, b: float):
    x, w = roots_jacobi(_QUAD_POINTS, a, b)
    return x, w


def _weighted_row(t, t_gap, alpha, p):
    """Hat-function weights of one row for data carrying the factor ``u^p``."""
    n = t.size - 1
    h = np.diff(t)
    left = np.empty(n)
    right = np.empty(n)
    if n == 1:
        # both kernel ends singular on a single panel: Beta integrals
        right[0] = beta_fn(p + 2.0, alpha)
        left[0] = beta_fn(p + 1.0, alpha + 1.0)
        return left, right

    # first panel: u^p singular at its left end
    x, w = _jacobi(0.0, p)
    s = 0.5 * (x + 1.0)
    tt = t[1] * s
    smooth = (t_gap[0] - tt) ** (alpha - 1.0)
    scale = (0.5 * t[1]) ** (p + 1.0)
    right[0] = scale * np.dot(w, smooth * s)
    left[0] = scale * np.dot(w, smooth * (1.0 - s))

    # last panel: kernel singular at its right end
    x, w = _jacobi(alpha - 1.0, 0.0)
    s = 0.5 * (x + 1.0)
    hl = h[-1]
    tt = t[-2] + hl * s
    smooth = tt**p
    scale = (0.5 * hl) ** alpha
    right[-1] = scale * np.dot(w, smooth * s)
    left[-1] = scale * np.dot(w, smooth * (1.0 - s))

    if n > 2:
        x, w = _jacobi(0.0, 0.0)
        s = 0.5 * (x + 1.0)
        hm = h[1:-1, None]
        tt = t[1:-2, None] + hm * s
        gap = t_gap[1:-2, None] - hm * s
        integrand = gap ** (alpha - 1.0) * tt**p * (0.5 * hm)
        right[1:-1] = integrand * s @ w
        left[1:-1] = integrand * (1.0 - s) @ w
    return left, right


@lru_cache(maxsize=64)
def _weights_cached(u_bytes: bytes, alpha: float, p: float) -> np.ndarray:
    u = np.frombuffer(u_bytes, dtype=float)
    size = u.size
    W = np.zeros((size, size))
    W[0, 0] = _ratio_gamma(p, alpha)
    inv_gamma = math.exp(-gammaln(alpha))
    for n in range(1, size):
        U = u[n]
        t = u[: n + 1] / U
        t_gap = (U - u[: n + 1]) / U
        if p == 0.0:
            left, right = _plain_row(t_gap, alpha)
        else:
            left, right = _weighted_row(t, t_gap, alpha, p)
        W[n, :n] += left * inv_gamma
        W[n, 1 : n + 1] += right * inv_gamma
    W.setflags(write=False)
    return W


def scaled_weights(u: np.ndarray, alpha: float, p: float = 0.0) -> np.ndarray:
    """Lower-triangular matrix ``W`` with ``(W @ w)[n] = U^-(α+p) I^α[u^p w](U)``, ``U = u[n]``.

    Row 0 holds the limit ``w(0) Γ(1+p)/Γ(1+p+α)``. Requires ``p > -1`` and
    ``u[0] == 0 < u[1] < ...``.
    """
    u = np.ascontiguousarray(u, dtype=float)
    if u[0] != 0.0 or np.any(np.diff(u) <= 0):
        raise ValueError("ψ-coordinates must start at 0 and increase strictly")
    if not p > -1.0:
        raise ValueError(f"weight exponent {-p} is not integrable (needs < 1)")
    if not alpha > 0:
        raise ValueError(f"integration order must be positive, got {alpha}")
    return _weights_cached(u.tobytes(), float(alpha), float(p))


def _coordinates(mesh: Mesh, psi: PsiMap) -> np.ndarray:
    tol = 1e-12 * max(1.0, abs(psi.domain_start))
    if abs(mesh.a - psi.domain_start) > tol:
        raise ValueError(f"mesh starts at {mesh.a} but ψ is anchored at {psi.domain_start}")
    if mesh.b > psi.domain_end + tol:
        raise ValueError(f"mesh reaches {mesh.b} beyond the ψ domain end {psi.domain_end}")
    u = psi.shifted(mesh.nodes)
    if not np.all(np.isfinite(u)) or np.any(np.diff(u) <= 0):
        raise ValueError("ψ is not finite and strictly increasing on the mesh")
    return u


def _scaled_integral(g: GridFunction, alpha: float, psi: PsiMap) -> tuple[np.ndarray, np.ndarray]:
    if not alpha > 0:
        raise ValueError(f"integration order must be positive, got {alpha}")
    if not np.all(np.isfinite(g.values)):
        raise ValueError("grid function has non-finite values")
    u = _coordinates(g.mesh, psi)
    W = scaled_weights(u, alpha, -g.exponent)
    return u, W @ g.values


def frac_integral(g: GridFunction, alpha: float, psi: PsiMap, natural: bool = False) -> GridFunction:
    """``I^{α;ψ} g`` at every mesh node.

    The result keeps ``g``'s representation. With ``natural=True`` it is
    returned with the exponent lowered by ``α`` instead, i.e. the values are
    ``(ψ(x)-ψ(a))^-(α-e) I^α g``, which is smooth whenever ``(ψ(x)-ψ(a))^e g`` is.
    """
    u, S = _scaled_integral(g, alpha, psi)
    if natural:
        return GridFunction(g.mesh, S, g.exponent - alpha)
    return GridFunction(g.mesh, u**alpha * S, g.exponent)


def _d_dpsi(values: np.ndarray, mesh: Mesh, psi: PsiMap) -> np.ndarray:
    # second order on the non-uniform mesh, one-sided second order at both ends
    return np.gradient(values, mesh.nodes, edge_order=2) / psi.derivative(mesh.nodes)


def hilfer_derivative(g: GridFunction, order: FractionalOrder, psi: PsiMap) -> GridFunction:
    """``D^{α,β;ψ} g = I^{β(1-α)} (1/ψ' d/dx) I^{(1-β)(1-α)} g``.

    The inner integral is formed in natural representation ``u^s S`` and its
    derivative by the product rule ``u^(s-1) (s S + u S')``, so only the
    smooth factor ``S`` is differenced. The outer integral is again kept in
    natural form, so the result's exponent depends on the input: plain smooth
    ``g`` gives exponent ``α`` when β < 1, since the derivative then behaves
    like ``(ψ(x)-ψ(a))^-α`` near ``a``.
    """
    mesh = g.mesh
    if mesh.n < MIN_DERIVATIVE_NODES:
        raise ValueError(f"mesh too coarse for differentiation: N={mesh.n} < {MIN_DERIVATIVE_NODES}")
    mu, nu = order.inner, order.outer
    if g.exponent > mu + 1e-12:
        raise ValueError(
            f"weighted exponent {g.exponent:g} exceeds 1-γ={mu:g}; the derivative does not exist"
        )
    u = _coordinates(mesh, psi)
    if mu > 0:
        inner = frac_integral(g, mu, psi, natural=True)
        S, s = inner.values, -inner.exponent
    else:
        S, s = g.values, -g.exponent
    dS = _d_dpsi(S, mesh, psi)
    if s > 1e-14:
        first = GridFunction(mesh, s * S + u * dS, 1.0 - s)
    else:
        first = GridFunction(mesh, dS, PLAIN)
    if not np.all(np.isfinite(first.values)):
        raise ValueError("non-finite values while differentiating")
    if nu == 0:
        return first
    return frac_integral(first, nu, psi, natural=True)


def _interior(values: np.ndarray) -> np.ndarray:
    return values[1:-1]


def verify_left_inverse(g: GridFunction, order: FractionalOrder, psi: PsiMap) -> float:
    """Max residual of ``D^{α,β;ψ} I^{α;ψ} g - g`` over interior nodes, in ``g``'s representation."""
    lifted = frac_integral(g, order.alpha, psi, natural=True)
    back = hilfer_derivative(lifted, order, psi).with_exponent(g.exponent, psi)
    return float(np.max(np.abs(_interior(back.values - g.values))))


def start_limit_of_inner_integral(g: GridFunction, order: FractionalOrder, psi: PsiMap) -> float:
    """``lim_{x→a} I^{(1-β)(1-α);ψ} g(x)``, exact for data of the admissible form.

    Non-zero only when ``g`` carries exactly the ``(ψ(x)-ψ(a))^(γ-1)`` singularity
    (or when β = 1 and ``g`` is continuous).
    """
    mu = order.inner
    if mu > 0:
        inner = frac_integral(g, mu, psi, natural=True)
        return float(inner.values[0]) if abs(inner.exponent) < 1e-14 else 0.0
    if g.exponent == PLAIN:
        return float(g.values[0])
    if g.exponent < 0:
        return 0.0
    raise ValueError("the inner integral is unbounded at a for this data")


def verify_composition(g: GridFunction, order: FractionalOrder, psi: PsiMap) -> float:
    """Max interior residual of ``I^α D^{α,β} g = g - (ψ(x)-ψ(a))^(γ-1)/Γ(γ) · I^{(1-β)(1-α)}g(a)``.

    Measured in ``g``'s representation (max-abs for plain data).
    """
    derivative = hilfer_derivative(g, order, psi)
    lhs = frac_integral(derivative, order.alpha, psi, natural=True).with_exponent(g.exponent, psi)
    limit = start_limit_of_inner_integral(g, order, psi)
    gamma = order.gamma
    correction = GridFunction.power(g.mesh, psi, gamma - 1.0, limit / math.gamma(gamma))
    rhs = g - correction.with_exponent(g.exponent, psi)
    return float(np.max(np.abs(_interior(lhs.values - rhs.values))))


def weighted_norm(g: GridFunction, order: FractionalOrder, psi: PsiMap) -> float:
    """``max |(ψ(x)-ψ(a))^(1-γ) g(x)|`` over the mesh."""
    if not np.all(np.isfinite(g.values)):
        raise ValueError("grid function has non-finite values")
    w = g.with_exponent(1.0 - order.gamma, psi).values
    if not np.all(np.isfinite(w)):
        raise ValueError("function is too singular at a for the weighted norm")
    return float(np.max(np.abs(w)))
