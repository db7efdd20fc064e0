"""Problem instances: the ψ map, fractional order, delay, weight and the full spec."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .expr import Expression

ScalarMap = Callable[..., Union[float, np.ndarray]]

ESTIMATE = "estimate"
LIPSCHITZ_SAFETY = 1.1

# tolerance for sampled monotonicity checks, relative to the sampled range
_MONO_RTOL = 1e-12


@dataclass(frozen=True)
class Diagnostic:
    """One violated hypothesis, e.g. ``Diagnostic("delay", "delay exceeds argument ...")``."""

    code: str
    message: str

    def __str__(self) -> str:
        return self.message


@dataclass(frozen=True)
class Family:
    value: str
    derivative: Optional[str]
    defaults: Mapping[str, float]


FAMILIES: dict[str, Family] = {
    "identity": Family("x", "1", {}),
    "power": Family("scale*x^p", "scale*p*x^(p - 1)", {"p": 1.0, "scale": 1.0}),
    "exponential": Family("scale*exp(rate*x)", "scale*rate*exp(rate*x)", {"rate": 1.0, "scale": 1.0}),
    "log1p": Family("ln(1 + x)", "1/(1 + x)", {}),
    "saturating": Family(
        "scale*(1 - exp(-rate*x))", "scale*rate*exp(-rate*x)", {"rate": 1.0, "scale": 1.0}
    ),
    "trigonometric": Family(
        "scale*sin(freq*x + phase)",
        "scale*freq*cos(freq*x + phase)",
        {"freq": 1.0, "phase": 0.0, "scale": 1.0},
    ),
    "mittag_leffler": Family(
        "scale*mittag_leffler(order, 1, rate*x^order)", None, {"order": 0.5, "rate": 1.0, "scale": 1.0}
    ),
}


def family(name: str, **params: float) -> tuple[Expression, Optional[Expression]]:
    """Instantiate a built-in one-variable family as ``(value, derivative)`` expressions in ``x``."""
    if name not in FAMILIES:
        raise KeyError(f"unknown function family {name!r}; known: {sorted(FAMILIES)}")
    fam = FAMILIES[name]
    unknown = set(params) - set(fam.defaults)
    if unknown:
        raise KeyError(f"family {name!r} has no parameter(s) {sorted(unknown)}")
    bound = {**fam.defaults, **params}
    value = Expression.parse(fam.value, ["x"], bound)
    deriv = Expression.parse(fam.derivative, ["x"], bound) if fam.derivative else None
    return value, deriv


def _eval(fn: ScalarMap, *args) -> np.ndarray:
    shape = np.broadcast_shapes(*(np.shape(a) for a in args))
    with np.errstate(all="ignore"):
        out = np.asarray(fn(*args), dtype=float)
    return np.broadcast_to(out, shape)


@dataclass(frozen=True)
class FractionalOrder:
    """Order ``alpha`` in (0, 1) and type ``beta`` in [0, 1] of the Hilfer derivative."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def gamma(self) -> float:
        return self.alpha + self.beta * (1.0 - self.alpha)

    @property
    def inner(self) -> float:
        """Order (1-β)(1-α) of the integral applied before differentiating; equals 1-γ."""
        return (1.0 - self.beta) * (1.0 - self.alpha)

    @property
    def outer(self) -> float:
        """Order β(1-α) of the integral applied after differentiating."""
        return self.beta * (1.0 - self.alpha)


@dataclass(frozen=True)
class PsiMap:
    """Increasing map ψ with its derivative, on ``[domain_start, domain_end]``.

    ``domain_end`` may be ``math.inf`` for half-line problems.
    """

    psi: ScalarMap
    psi_prime: ScalarMap
    domain_start: float
    domain_end: float = math.inf

    def __call__(self, x):
        return _eval(self.psi, np.asarray(x, dtype=float))

    def derivative(self, x):
        return _eval(self.psi_prime, np.asarray(x, dtype=float))

    def shifted(self, x) -> np.ndarray:
        """``ψ(x) - ψ(a)`` without losing digits near ``a``.

        Where the plain difference cancels badly, it is replaced by a
        Gauss-Legendre integral of ψ' over ``[a, x]``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a = self.domain_start
        psi_a = float(self(a))
        u = self(x) - psi_a
        small = (np.abs(u) < 1e-3 * abs(psi_a)) & (x != a)
        if np.any(small):
            nodes, weights = np.polynomial.legendre.leggauss(12)
            xs = x[small]
            half = 0.5 * (xs - a)
            pts = a + half[:, None] * (nodes[None, :] + 1.0)
            u[small] = half * (self.derivative(pts) @ weights)
        u[x == a] = 0.0
        return u

    @classmethod
    def identity(cls, a: float = 0.0, b: float = math.inf) -> "PsiMap":
        return cls(*family("identity"), a, b)


@dataclass(frozen=True)
class DelayFunction:
    delta: ScalarMap

    def __call__(self, t):
        return _eval(self.delta, np.asarray(t, dtype=float))


@dataclass(frozen=True)
class WeightFunction:
    """Positive non-decreasing weight σ with optional declared bounds ``(ε, ω)``."""

    sigma: ScalarMap
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None

    def __call__(self, x):
        return _eval(self.sigma, np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the delay fractional integro-differential problem.

    ``f(x, u, g)`` is the right-hand side, ``K(x, tau, u, w)`` the Volterra
    kernel with ``w`` the delayed value, ``c`` the weighted initial datum.
    Lipschitz constants are numbers or ``"estimate"``; estimation samples the
    box ``bounds`` (keys ``u``, ``g``, ``w``).
    """

    order: FractionalOrder
    psi: PsiMap
    a: float
    b: float
    c: float
    f: ScalarMap
    K: ScalarMap
    delta: DelayFunction
    sigma: WeightFunction
    lipschitz_M: Union[float, str] = ESTIMATE
    lipschitz_L: Union[float, str] = ESTIMATE
    bounds: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"u": (-10.0, 10.0), "g": (-10.0, 10.0), "w": (-10.0, 10.0)}
    )
    name: str = "problem"

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"interval end {self.b} must exceed start {self.a}")
        for label, value in (("M", self.lipschitz_M), ("L", self.lipschitz_L)):
            if isinstance(value, str):
                if value != ESTIMATE:
                    raise ValueError(f"Lipschitz constant {label} must be a number or 'estimate'")
            elif not value >= 0:
                raise ValueError(f"Lipschitz constant {label} must be non-negative, got {value}")

    @property
    def half_line(self) -> bool:
        return math.isinf(self.b)

    def restricted(self, b: float) -> "ProblemSpec":
        """Same problem on ``[a, b]``."""
        psi = PsiMap(self.psi.psi, self.psi.psi_prime, self.a, b)
        return replace(self, b=b, psi=psi)

    def eval_f(self, x, u, g) -> np.ndarray:
        return _eval(self.f, x, u, g)

    def eval_K(self, x, tau, u, w) -> np.ndarray:
        return _eval(self.K, x, tau, u, w)

    def lipschitz(self, mesh_nodes, seed: int = 0) -> tuple[float, float]:
        """Resolve ``(M, L)``, estimating whichever was left as ``"estimate"``."""
        M, L = self.lipschitz_M, self.lipschitz_L
        if M == ESTIMATE or L == ESTIMATE:
            est_M, est_L = estimate_lipschitz(self, mesh_nodes, seed=seed)
            M = est_M if M == ESTIMATE else M
            L = est_L if L == ESTIMATE else L
        return float(M), float(L)


def _sample_pairs(rng, lo, hi, n):
    """Half wide pairs across the box, half narrow pairs for local slopes."""
    v1 = rng.uniform(lo, hi, n)
    wide = rng.uniform(lo, hi, n)
    narrow = v1 + (hi - lo) * 1e-3 * rng.uniform(-1.0, 1.0, n)
    v2 = np.where(np.arange(n) % 2 == 0, wide, narrow)
    return v1, v2


def _quotients(num, den):
    ok = (den > 0) & np.isfinite(num)
    return np.abs(num[ok]) / den[ok] if np.any(ok) else np.zeros(1)


def lipschitz_quotients(spec: ProblemSpec, mesh_nodes, n_samples: int = 4000, seed: int = 0) -> dict:
    """Largest sampled partial difference quotients of ``f`` and ``K``.

    Keys: ``f_u``, ``f_g`` (f in its second and third argument), ``K_u``,
    ``K_w`` (K in its third and fourth argument).
    """
    rng = np.random.default_rng(seed)
    nodes = np.asarray(mesh_nodes, dtype=float)
    box = spec.bounds
    x = rng.choice(nodes, n_samples)
    tau = spec.a + (x - spec.a) * rng.uniform(0.0, 1.0, n_samples)
    out = {}
    u1, u2 = _sample_pairs(rng, *box["u"], n_samples)
    g = rng.uniform(*box["g"], n_samples)
    out["f_u"] = _quotients(spec.eval_f(x, u1, g) - spec.eval_f(x, u2, g), np.abs(u1 - u2)).max()
    g1, g2 = _sample_pairs(rng, *box["g"], n_samples)
    u = rng.uniform(*box["u"], n_samples)
    out["f_g"] = _quotients(spec.eval_f(x, u, g1) - spec.eval_f(x, u, g2), np.abs(g1 - g2)).max()
    w = rng.uniform(*box["w"], n_samples)
    out["K_u"] = _quotients(
        spec.eval_K(x, tau, u1, w) - spec.eval_K(x, tau, u2, w), np.abs(u1 - u2)
    ).max()
    w1, w2 = _sample_pairs(rng, *box["w"], n_samples)
    out["K_w"] = _quotients(
        spec.eval_K(x, tau, u, w1) - spec.eval_K(x, tau, u, w2), np.abs(w1 - w2)
    ).max()
    return {k: float(v) for k, v in out.items()}


def estimate_lipschitz(spec: ProblemSpec, mesh_nodes, seed: int = 0) -> tuple[float, float]:
    """Sampled Lipschitz constants ``(M, L)`` inflated by 10%.

    ``M`` bounds ``|f(x,u,g) - f(x,v,h)| / (|u-v| + |g-h|)`` via the larger
    partial slope. ``L`` adds the kernel's slopes in both state arguments; for
    a kernel that ignores its third argument this is the slope in the delayed one.
    """
    q = lipschitz_quotients(spec, mesh_nodes, seed=seed)
    M = LIPSCHITZ_SAFETY * max(q["f_u"], q["f_g"])
    L = LIPSCHITZ_SAFETY * (q["K_u"] + q["K_w"])
    return M, L


def _finite_or_diag(name: str, fn, args, diags: list[Diagnostic]) -> Optional[np.ndarray]:
    try:
        vals = _eval(fn, *args)
    except Exception as exc:  # any failure of a user map is a diagnostic
        diags.append(Diagnostic("evaluation", f"failed to evaluate {name}: {exc}"))
        return None
    if not np.all(np.isfinite(vals)):
        diags.append(Diagnostic("evaluation", f"{name} non-finite at sampled points"))
        return None
    return vals


def validate_problem(spec: ProblemSpec, mesh) -> list[Diagnostic]:
    """Check the standing hypotheses on the sampled ``mesh``; empty list means admissible."""
    x = np.asarray(getattr(mesh, "nodes", mesh), dtype=float)
    diags: list[Diagnostic] = []
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
        diags.append(Diagnostic("mesh", "mesh must be strictly increasing with at least two nodes"))
        return diags
    if x[0] < spec.a or x[-1] > spec.b:
        diags.append(Diagnostic("mesh", "mesh leaves the problem interval"))

    psi = _finite_or_diag("ψ", spec.psi, (x,), diags)
    dpsi = _finite_or_diag("ψ′", spec.psi.derivative, (x,), diags)
    if dpsi is not None and np.any(dpsi <= 0):
        diags.append(Diagnostic("psi_prime", "ψ′ not positive at sampled points"))
    if psi is not None and np.any(np.diff(psi) <= 0):
        diags.append(Diagnostic("psi_monotone", "ψ not strictly increasing"))
    if psi is not None and dpsi is not None:
        mismatch = psi_derivative_mismatch(spec.psi, x)
        if not mismatch <= 1e-5:
            diags.append(
                Diagnostic("psi_consistency", f"ψ′ inconsistent with ψ (relative mismatch {mismatch:.2e})")
            )

    delta = _finite_or_diag("δ", spec.delta, (x,), diags)
    if delta is not None:
        slack = _MONO_RTOL * max(1.0, float(np.max(np.abs(x))))
        if np.any(delta > x + slack):
            diags.append(Diagnostic("delay", "delay exceeds argument: δ(t) > t at sampled points"))
        if np.any(delta < spec.a - slack):
            diags.append(Diagnostic("delay_domain", "delay leaves the domain: δ(t) < a at sampled points"))

    sigma = _finite_or_diag("σ", spec.sigma, (x,), diags)
    if sigma is not None:
        if np.any(sigma <= 0):
            diags.append(Diagnostic("sigma_positive", "σ non-positive at sampled points"))
        scale = _MONO_RTOL * max(1.0, float(np.max(np.abs(sigma))))
        if np.any(np.diff(sigma) < -scale):
            diags.append(Diagnostic("sigma_monotone", "σ not non-decreasing"))
        lo, hi = spec.sigma.lower_bound, spec.sigma.upper_bound
        if spec.half_line and (lo is None or hi is None):
            diags.append(Diagnostic("sigma_bounds", "half-line problem requires finite σ bounds (ε, ω)"))
        if (lo is not None and np.any(sigma <= lo)) or (hi is not None and np.any(sigma >= hi)):
            diags.append(Diagnostic("sigma_bounds", "σ outside declared bounds (ε, ω)"))

    rng = np.random.default_rng(0)
    box = spec.bounds
    u = rng.uniform(*box["u"], x.size)
    g = rng.uniform(*box["g"], x.size)
    w = rng.uniform(*box["w"], x.size)
    _finite_or_diag("f", spec.f, (x, u, g), diags)
    tau = spec.a + (x - spec.a) * rng.uniform(0.0, 1.0, x.size)
    _finite_or_diag("K", spec.K, (x, tau, u, w), diags)

    if not any(d.code == "evaluation" for d in diags):
        q = lipschitz_quotients(spec, x, n_samples=1000, seed=1)
        if spec.lipschitz_M != ESTIMATE and max(q["f_u"], q["f_g"]) > spec.lipschitz_M * (1 + 1e-9):
            diags.append(
                Diagnostic("lipschitz_M", "f Lipschitz constant M exceeded by a sampled difference quotient")
            )
        if spec.lipschitz_L != ESTIMATE and q["K_u"] + q["K_w"] > spec.lipschitz_L * (1 + 1e-9):
            diags.append(
                Diagnostic("lipschitz_L", "K Lipschitz constant L exceeded by a sampled difference quotient")
            )
    return diags


def psi_derivative_mismatch(psi: PsiMap, x) -> float:
    """Gap between ψ′ and a Richardson-extrapolated central difference of ψ, relative to max |ψ′|."""
    x = np.asarray(x, dtype=float)
    span = float(x[-1] - x[0]) if x.size > 1 else 1.0
    h = 1e-3 * span
    # stay inside the domain: shift the stencil centre inward at the ends
    lo, hi = psi.domain_start + 2 * h, (psi.domain_end - 2 * h) if math.isfinite(psi.domain_end) else np.inf
    xc = np.clip(x, lo, hi)

    def central(step):
        return (psi(xc + step) - psi(xc - step)) / (2 * step)

    approx = (4 * central(h / 2) - central(h)) / 3
    exact = psi.derivative(xc)
    scale = max(float(np.max(np.abs(exact))), 1e-300)
    return float(np.max(np.abs(approx - exact)) / scale)
