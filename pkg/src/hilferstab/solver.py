"""The fixed-point operator, its contraction certificate and Picard iteration.

The solution ``y`` of the delay problem is the fixed point of

    (Ty)(x) = c (ψ(x)-ψ(a))^(γ-1) / Γ(γ)
              + I^{α;ψ}[ f(·, y(·), ∫_a^· K(·, τ, y(τ), y(δ(τ))) dτ) ](x),

which is a contraction in the Bielecki distance ``max |u - v| / σ`` when
``q = M (ξ + L ξ²) < 1``. Iterates are carried in weighted form with exponent
``1 - γ``, so the singular homogeneous term is a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .frac_ops import frac_integral, scaled_weights
from .grid import PLAIN, GridFunction, Mesh
from .model import PsiMap, ProblemSpec, WeightFunction

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
# relative tolerance when checking δ(τ) ∈ [a, τ] at the nodes
_DELAY_RTOL = 1e-12


class CertificateError(ValueError):
    """Raised when iteration is requested on an uncertified instance."""

    def __init__(self, certificate: "ContractionCertificate"):
        self.certificate = certificate
        super().__init__(f"no contraction: {certificate.reason or f'q = {certificate.q:.6g}'}")


class ConvergenceError(RuntimeError):
    """Raised when Picard iteration hits ``max_iter``; carries the trace and last iterate."""

    def __init__(self, trace: "IterationTrace", iterate: GridFunction):
        self.trace = trace
        self.iterate = iterate
        last = trace.records[-1].distance if trace.records else math.nan
        super().__init__(f"no convergence after {trace.iterations} iterations (last distance {last:.3g})")


@dataclass(frozen=True)
class ContractionCertificate:
    """Constants ``(ξ, M, L)`` and the contraction factor ``q = M (ξ + L ξ²)``.

    ``volterra_ratio`` is ``max (∫_a^x σ dτ) / σ(x)``. The factor ``q`` bounds
    the contraction rate only when this does not exceed ``ξ``; ``sound``
    records whether it does.
    """

    xi: float
    M: float
    L: float
    volterra_ratio: float = 0.0
    reason: str = ""

    @property
    def q(self) -> float:
        return self.M * (self.xi + self.L * self.xi**2)

    @property
    def valid(self) -> bool:
        return 0.0 <= self.xi < 1.0 and self.q < 1.0 and not self.reason

    @property
    def sound(self) -> bool:
        return self.volterra_ratio <= self.xi

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "M": self.M,
            "L": self.L,
            "q": self.q,
            "valid": self.valid,
            "sound": self.sound,
            "volterra_ratio": self.volterra_ratio,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContractionCertificate":
        return cls(data["xi"], data["M"], data["L"], data["volterra_ratio"], data["reason"])


@dataclass(frozen=True)
class IterationRecord:
    index: int
    distance: float
    sup_update: float


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    # Bielecki distance d(T y, y) for the returned iterate, when computed
    residual: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def ratios(self) -> np.ndarray:
        """Successive ratios ``d_{k+1} / d_k`` (where ``d_k > 0``)."""
        d = np.array([r.distance for r in self.records])
        if d.size < 2:
            return np.empty(0)
        prev, nxt = d[:-1], d[1:]
        ok = prev > 0
        return nxt[ok] / prev[ok]


def _sigma_values(sigma: WeightFunction, nodes: np.ndarray) -> np.ndarray:
    s = np.asarray(sigma(nodes), dtype=float)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("σ must be finite and positive at every mesh node")
    return s


def xi_ratio(sigma: WeightFunction, alpha: float, psi: PsiMap, mesh: Mesh) -> float:
    """``max_i (I^{α;ψ} σ)(x_i) / σ(x_i)`` without the ``< 1`` cut."""
    s = _sigma_values(sigma, mesh.nodes)
    integral = frac_integral(GridFunction(mesh, s), alpha, psi).values
    return float(np.max(integral / s))


def estimate_xi(sigma: WeightFunction, alpha: float, psi: PsiMap, mesh: Mesh) -> Optional[float]:
    """Smallest ``ξ`` with ``I^{α;ψ} σ ≤ ξ σ`` at all nodes, or ``None`` if that is ``≥ 1``."""
    xi = xi_ratio(sigma, alpha, psi, mesh)
    return xi if xi < 1.0 else None


def bielecki_distance(
    u: GridFunction, v: GridFunction, sigma: WeightFunction, psi: Optional[PsiMap] = None
) -> float:
    """``max |u - v| / σ`` over the nodes where both functions are finite.

    Weighted iterates are unbounded at ``x_0``; that node is skipped for them,
    and ``psi`` (identity if omitted) converts the stored values to plain ones.
    """
    if not u.mesh.same_as(v.mesh):
        raise ValueError("grid functions live on different meshes")
    if u.exponent != v.exponent:
        raise ValueError(f"representation mismatch: {u.representation} vs {v.representation}")
    s = _sigma_values(sigma, u.mesh.nodes)
    diff = u.values - v.values
    if u.exponent == PLAIN:
        return float(np.max(np.abs(diff) / s))
    if u.exponent < 0:
        raise ValueError("distance needs plain or weighted (exponent > 0) values")
    U = u.mesh.nodes - u.mesh.a if psi is None else psi.shifted(u.mesh.nodes)
    plain = diff[1:] / U[1:] ** u.exponent
    return float(np.max(np.abs(plain) / s[1:]))


def _plain_ratio(w: np.ndarray, U: np.ndarray, e: float) -> np.ndarray:
    """Plain values from weighted ones; ``x_0`` becomes nan when ``e > 0``."""
    if e == PLAIN:
        return w.copy()
    out = np.full_like(w, np.nan)
    out[1:] = w[1:] / U[1:] ** e
    return out


def _split_singular(first, second, U1, U2, e):
    """Fit ``v ≈ A + B u^e`` through the values at the first two nodes past ``x_0``.

    For weighted data ``v = u^e h`` this splits ``h = A u^-e + R`` with ``R(0) = B``:
    the singular part is integrated exactly and ``R`` by the plain rule.
    """
    B = (second - first) / (U2**e - U1**e)
    A = first - B * U1**e
    return A, B


class FixedPointOperator:
    """``T`` discretised on one mesh, with every ``y``-independent quantity precomputed."""

    def __init__(self, spec: ProblemSpec, mesh: Mesh):
        tol = 1e-12 * max(1.0, abs(spec.a))
        if abs(mesh.a - spec.a) > tol:
            raise ValueError(f"mesh starts at {mesh.a}, problem at {spec.a}")
        if not spec.half_line and abs(mesh.b - spec.b) > 1e-12 * max(1.0, abs(spec.b)):
            raise ValueError(f"mesh ends at {mesh.b}, problem at {spec.b}")
        self.spec = spec
        self.mesh = mesh
        if mesh.n < 2:
            raise ValueError("the fixed-point operator needs at least two mesh intervals")
        order = spec.order
        self.alpha = order.alpha
        self.gamma = order.gamma
        self.exponent = 1.0 - order.gamma if order.gamma < 1.0 else PLAIN
        x = mesh.nodes
        self.x = x
        self.U = spec.psi.shifted(x)
        self.sigma = _sigma_values(spec.sigma, x)
        self.homogeneous = spec.c / math.gamma(self.gamma)
        self.W_outer = scaled_weights(self.U, self.alpha, 0.0)
        e = self.exponent
        self.singular_gain = math.exp(math.lgamma(1.0 - e) - math.lgamma(1.0 + self.alpha - e))
        dpsi = spec.psi.derivative(x)
        if not np.all(np.isfinite(dpsi[1:])) or np.any(dpsi[1:] <= 0):
            raise ValueError("ψ' must be finite and positive at the mesh nodes")
        self.dpsi = dpsi
        # Volterra integral: trapezoid in u = ψ(τ) - ψ(a), as product weights of order 1
        self.W_inner = np.tril(scaled_weights(self.U, 1.0, 0.0) * self.U[:, None])
        self._setup_delay()
        # node where the distance starts: x_0 is singular in weighted form
        self.first = 1 if self.exponent != PLAIN else 0

    def _setup_delay(self):
        x, a = self.x, self.spec.a
        d = np.asarray(self.spec.delta(x), dtype=float)
        if not np.all(np.isfinite(d)):
            raise ValueError("δ is not finite at the mesh nodes")
        span = max(1.0, abs(x[-1]))
        if np.any(d > x + _DELAY_RTOL * span) or np.any(d < a - _DELAY_RTOL * span):
            bad = int(np.argmax((d > x + _DELAY_RTOL * span) | (d < a - _DELAY_RTOL * span)))
            raise ValueError(f"δ(τ) outside [a, τ] at τ = {x[bad]:.6g} (δ = {d[bad]:.6g})")
        d = np.clip(d, a, x)
        self.delay_at = d
        self.U_delay = self.spec.psi.shifted(d)
        if self.exponent != PLAIN:
            hits = (self.U_delay == 0.0) & (np.arange(x.size) > 0)
            if np.any(hits):
                raise ValueError(
                    "δ(τ) = a for some τ > a, where the weighted solution is unbounded"
                )

    def initial(self) -> GridFunction:
        """The homogeneous term ``c (ψ(x)-ψ(a))^(γ-1) / Γ(γ)``."""
        return GridFunction(self.mesh, np.full(self.x.shape, self.homogeneous), self.exponent)

    def _weighted(self, y: GridFunction) -> np.ndarray:
        if not y.mesh.same_as(self.mesh):
            raise ValueError("iterate lives on a different mesh")
        w = y.with_exponent(self.exponent, self.spec.psi).values
        if not np.all(np.isfinite(w[self.first :])):
            raise ValueError("iterate has non-finite values")
        return w

    def volterra(self, y: GridFunction) -> np.ndarray:
        """``G(x_i) = ∫_a^{x_i} K(x_i, τ, y(τ), y(δ(τ))) dτ`` at every node."""
        w = self._weighted(y)
        e = self.exponent
        y_plain = _plain_ratio(w, self.U, e)
        w_delay = np.interp(self.delay_at, self.x, w)
        if e == PLAIN:
            y_delay = w_delay
        else:
            y_delay = np.full_like(w_delay, np.nan)
            y_delay[1:] = w_delay[1:] / self.U_delay[1:] ** e
        if e != PLAIN:
            # placeholders at the singular node; the column is extrapolated below
            y_plain[0] = y_plain[1]
            y_delay[0] = y_delay[1]
        xi = self.x[:, None]
        tau = self.x[None, :]
        Kmat = self.spec.eval_K(xi, tau, y_plain[None, :], y_delay[None, :])
        h = Kmat / self.dpsi[None, :]
        if e == PLAIN:
            G = np.sum(self.W_inner * h, axis=1)
        else:
            U = self.U
            hw1, hw2 = U[1] ** e * h[:, 1], U[2] ** e * h[:, 2]
            A, B = _split_singular(hw1, hw2, U[1], U[2], e)
            R = np.empty_like(h)
            R[:, 1:] = h[:, 1:] - A[:, None] * U[None, 1:] ** -e
            R[:, 0] = B
            G = A * U ** (1.0 - e) / (1.0 - e) + np.sum(self.W_inner * R, axis=1)
        if not np.all(np.isfinite(G)):
            raise ValueError("kernel K produced non-finite values")
        return G

    def __call__(self, y: GridFunction) -> GridFunction:
        w = self._weighted(y)
        e = self.exponent
        G = self.volterra(y)
        y_plain = _plain_ratio(w, self.U, e)
        U = self.U
        if e == PLAIN:
            F = np.asarray(self.spec.eval_f(self.x, y_plain, G), dtype=float)
            if not np.all(np.isfinite(F)):
                raise ValueError("right-hand side f produced non-finite values")
            out = self.homogeneous + U**self.alpha * (self.W_outer @ F)
        else:
            F = np.asarray(self.spec.eval_f(self.x[1:], y_plain[1:], G[1:]), dtype=float)
            if not np.all(np.isfinite(F)):
                raise ValueError("right-hand side f produced non-finite values")
            A, B = _split_singular(U[1] ** e * F[0], U[2] ** e * F[1], U[1], U[2], e)
            R = np.empty(self.x.size)
            R[1:] = F - A * U[1:] ** -e
            R[0] = B
            out = (
                self.homogeneous
                + A * self.singular_gain * U**self.alpha
                + U ** (self.alpha + e) * (self.W_outer @ R)
            )
        return GridFunction(self.mesh, out, e)

    def difference(self, u: GridFunction, v: GridFunction) -> np.ndarray:
        """Plain ``|u - v|`` at the nodes; nan at ``x_0`` for weighted iterates."""
        diff = self._weighted(u) - self._weighted(v)
        out = np.abs(_plain_ratio(diff, self.U, self.exponent))
        return out

    def distance(self, u: GridFunction, v: GridFunction) -> float:
        """Bielecki distance over the nodes where the plain functions are finite."""
        d = self.difference(u, v)[self.first :] / self.sigma[self.first :]
        return float(np.max(d))


def apply_T(u: GridFunction, spec: ProblemSpec) -> GridFunction:
    """One application of the fixed-point operator, in weighted form ``1 - γ``."""
    return FixedPointOperator(spec, u.mesh)(u)


def volterra_ratio(sigma: WeightFunction, psi: PsiMap, mesh: Mesh) -> float:
    """``max_i (∫_a^{x_i} σ dτ) / σ(x_i)`` with the same trapezoid as the kernel integral."""
    s = _sigma_values(sigma, mesh.nodes)
    U = psi.shifted(mesh.nodes)
    W1 = scaled_weights(U, 1.0, 0.0)
    J = U * (W1 @ (s / psi.derivative(mesh.nodes)))
    return float(np.max(J / s))


def contraction_certificate(
    spec: ProblemSpec, mesh: Mesh, seed: int = 0, M: Optional[float] = None, L: Optional[float] = None
) -> ContractionCertificate:
    """Assemble ``(ξ, M, L)`` for ``spec`` on ``mesh``; explicit ``M``, ``L`` override the spec."""
    ratio = xi_ratio(spec.sigma, spec.order.alpha, spec.psi, mesh)
    if M is None or L is None:
        est_M, est_L = spec.lipschitz(mesh.nodes, seed=seed)
        M = est_M if M is None else M
        L = est_L if L is None else L
    vr = volterra_ratio(spec.sigma, spec.psi, mesh)
    reason = "" if ratio < 1.0 else f"ξ̂ = {ratio:.6g} ≥ 1: no admissible ξ for this σ"
    return ContractionCertificate(ratio, float(M), float(L), vr, reason)


def picard_solve(
    spec: ProblemSpec,
    mesh: Mesh,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    certificate: Optional[ContractionCertificate] = None,
    seed: int = 0,
) -> tuple[GridFunction, IterationTrace, ContractionCertificate]:
    """Iterate ``y_{k+1} = T y_k`` from the homogeneous term.

    Stops once ``q d(y_{k+1}, y_k) ≤ tol (1 - q)``, so the returned iterate is
    within ``tol`` of the discrete fixed point in the Bielecki distance.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    cert = certificate if certificate is not None else contraction_certificate(spec, mesh, seed=seed)
    if not cert.valid:
        raise CertificateError(cert)
    q = cert.q
    T = FixedPointOperator(spec, mesh)
    y = T.initial()
    trace = IterationTrace()
    for k in range(1, max_iter + 1):
        y_next = T(y)
        d = T.distance(y_next, y)
        sup = float(np.max(np.abs(y_next.values - y.values)))
        trace.records.append(IterationRecord(k, d, sup))
        y = y_next
        if not math.isfinite(d):
            raise ValueError(f"iteration diverged at step {k}")
        if d * q <= tol * (1.0 - q):
            trace.converged = True
            break
    trace.residual = T.distance(T(y), y)
    if not trace.converged:
        raise ConvergenceError(trace, y)
    return y, trace, cert


def aposteriori_bound(trace: IterationTrace, q: float) -> float:
    """``d(T y, y) / (1 - q)``: a bound on the distance from ``y`` to the fixed point."""
    if not q < 1.0:
        raise ValueError(f"a-posteriori bound needs q < 1, got {q}")
    if trace.residual is not None:
        d = trace.residual
    elif trace.records:
        d = trace.records[-1].distance
    else:
        raise ValueError("empty iteration trace")
    return d / (1.0 - q)
