"""Perturbed solutions and the Ulam-Hyers type stability checks.

A perturbed function is built as ``y = y0 + I^{α;ψ} r`` with a residual
shape ``r`` that fits under an envelope (σ, or a constant θ). Each check
re-solves for ``y0``, measures the residual of ``y`` in integral form and
compares ``|y - y0|`` with the bound of the corresponding stability
statement.

All residual and bound checks use the Bielecki distance of the solver; the
admissible additive slack at a node is ``2 tol σ(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .expr import Expression
from .frac_ops import frac_integral, hilfer_derivative
from .grid import PLAIN, GridFunction, Mesh, default_grading
from .model import ProblemSpec
from .solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    CertificateError,
    ContractionCertificate,
    FixedPointOperator,
    IterationTrace,
    contraction_certificate,
    picard_solve,
)

_RANDOM_MODES = 6


class PerturbationKind(str, Enum):
    SIGMA_BOUNDED = "SIGMA_BOUNDED"
    THETA_BOUNDED = "THETA_BOUNDED"


class StabilityKind(str, Enum):
    UH = "UH"
    UHR = "UHR"
    SEMI_UHR = "SEMI_UHR"


@dataclass(frozen=True)
class PerturbationSpec:
    """How to generate the residual ``r`` of a perturbed solution.

    ``shape`` is an expression in ``x`` (rescaled so that ``max |shape| = 1``)
    or ``None`` for a seeded random trigonometric sum. ``amplitude`` scales the
    envelope; ``None`` means ``1 - q``, which keeps the integral-form residual
    of the perturbed function inside the allowed envelope.
    """

    kind: PerturbationKind = PerturbationKind.SIGMA_BOUNDED
    theta: Optional[float] = None
    shape: Optional[Expression] = None
    seed: int = 0
    amplitude: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.kind is PerturbationKind.THETA_BOUNDED and not (self.theta is not None and self.theta > 0):
            raise ValueError("a θ-bounded perturbation needs θ > 0")
        if self.amplitude is not None and not 0 <= self.amplitude <= 1:
            raise ValueError("amplitude must lie in [0, 1]")


def _random_shape(t: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    k = np.arange(1, _RANDOM_MODES + 1)
    amp = rng.normal(size=_RANDOM_MODES) / k
    phase = rng.uniform(0.0, 2.0 * math.pi, _RANDOM_MODES)
    return (amp[None, :] * np.sin(math.pi * k[None, :] * t[:, None] + phase[None, :])).sum(axis=1)


def residual_shape(pert: PerturbationSpec, mesh: Mesh) -> np.ndarray:
    """Shape values with ``max |s| ≤ 1`` (all zero if the raw shape vanishes)."""
    x = mesh.nodes
    if pert.shape is None:
        t = (x - mesh.a) / (mesh.b - mesh.a)
        raw = _random_shape(t, pert.seed)
    else:
        raw = np.broadcast_to(np.asarray(pert.shape(x), dtype=float), x.shape)
    if not np.all(np.isfinite(raw)):
        raise ValueError("perturbation shape is not finite on the mesh")
    peak = float(np.max(np.abs(raw)))
    return raw / peak if peak > 0 else np.zeros_like(raw)


def envelope(pert: PerturbationSpec, spec: ProblemSpec, mesh: Mesh) -> np.ndarray:
    if pert.kind is PerturbationKind.SIGMA_BOUNDED:
        env = np.asarray(spec.sigma(mesh.nodes), dtype=float)
    else:
        env = np.full(mesh.nodes.shape, float(pert.theta))
    if not np.all(np.isfinite(env)) or np.any(env <= 0):
        raise ValueError("perturbation envelope must be positive")
    return env


def make_perturbed_solution(
    y0: GridFunction,
    pert: PerturbationSpec,
    spec: ProblemSpec,
    certificate: Optional[ContractionCertificate] = None,
) -> GridFunction:
    """``y0 + I^{α;ψ} r`` with ``|r| ≤ amplitude · envelope`` at every node."""
    mesh = y0.mesh
    amplitude = pert.amplitude
    if amplitude is None:
        cert = certificate if certificate is not None else contraction_certificate(spec, mesh)
        amplitude = max(0.0, 1.0 - cert.q)
    r = amplitude * envelope(pert, spec, mesh) * residual_shape(pert, mesh)
    lift = frac_integral(GridFunction(mesh, r), spec.order.alpha, spec.psi)
    return y0 + lift.with_exponent(y0.exponent, spec.psi)


def residual_integral_form(y: GridFunction, spec: ProblemSpec) -> GridFunction:
    """``|y - T y|`` as plain values; ``x_0`` is nan when solutions are weighted."""
    T = FixedPointOperator(spec, y.mesh)
    return GridFunction(y.mesh, T.difference(y, T(y)), PLAIN)


def residual_differential_form(y: GridFunction, spec: ProblemSpec) -> GridFunction:
    """``|D^{α,β;ψ} y - f(x, y, ∫K)|`` as plain values (noisier than the integral form)."""
    T = FixedPointOperator(spec, y.mesh)
    y_w = y.with_exponent(T.exponent, spec.psi)
    derivative = hilfer_derivative(y_w, spec.order, spec.psi).plain(spec.psi)
    G = T.volterra(y_w)
    y_plain = y_w.plain(spec.psi)
    start = T.first
    out = np.full(y.mesh.nodes.shape, np.nan)
    F = spec.eval_f(T.x[start:], y_plain[start:], G[start:])
    out[start:] = np.abs(derivative[start:] - F)
    return GridFunction(y.mesh, out, PLAIN)


def _jsonable(values: np.ndarray) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(values, dtype=float)]


def _array(values) -> np.ndarray:
    return np.array([math.nan if v is None else v for v in values], dtype=float)


@dataclass
class StabilityReport:
    """Verdict of one stability check.

    ``bound_values`` and ``observed_deviation`` share the mesh; the deviation
    is nan at nodes where it is undefined (``x_0`` for weighted solutions).
    ``pass_`` holds iff the residual precondition holds and
    ``bound - deviation ≥ -slack`` at every node.
    For SEMI_UHR and UH the primary bound is the one implied by the
    derivation; ``bound_printed`` carries the printed variant.
    """

    kind: StabilityKind
    nodes: np.ndarray
    residual_max_ratio: float
    precondition_ok: bool
    bound_values: np.ndarray
    observed_deviation: np.ndarray
    slack: np.ndarray
    margin: float
    pass_: bool
    constants: dict
    bound_printed: Optional[np.ndarray] = None
    margin_printed: Optional[float] = None
    pass_printed: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    @staticmethod
    def evaluate(bound, deviation, slack) -> tuple[float, bool]:
        """``(margin, bound holds)`` from the grids, ignoring nan nodes."""
        ok = np.isfinite(deviation)
        gap = bound[ok] - deviation[ok]
        return float(np.min(gap)), bool(np.all(gap >= -slack[ok]))

    def recompute_pass(self) -> bool:
        _, holds = self.evaluate(self.bound_values, self.observed_deviation, self.slack)
        return self.precondition_ok and holds

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "nodes": _jsonable(self.nodes),
            "residual_max_ratio": self.residual_max_ratio,
            "precondition_ok": self.precondition_ok,
            "bound_values": _jsonable(self.bound_values),
            "observed_deviation": _jsonable(self.observed_deviation),
            "slack": _jsonable(self.slack),
            "margin": self.margin,
            "pass": self.pass_,
            "constants": dict(self.constants),
            "extra": dict(self.extra),
        }
        if self.bound_printed is not None:
            out["bound_printed"] = _jsonable(self.bound_printed)
            out["margin_printed"] = self.margin_printed
            out["pass_printed"] = self.pass_printed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StabilityReport":
        printed = data.get("bound_printed")
        return cls(
            kind=StabilityKind(data["kind"]),
            nodes=_array(data["nodes"]),
            residual_max_ratio=data["residual_max_ratio"],
            precondition_ok=data["precondition_ok"],
            bound_values=_array(data["bound_values"]),
            observed_deviation=_array(data["observed_deviation"]),
            slack=_array(data["slack"]),
            margin=data["margin"],
            pass_=data["pass"],
            constants=dict(data["constants"]),
            bound_printed=None if printed is None else _array(printed),
            margin_printed=data.get("margin_printed"),
            pass_printed=data.get("pass_printed"),
            extra=dict(data.get("extra", {})),
        )


@dataclass
class _Solved:
    operator: FixedPointOperator
    y0: GridFunction
    trace: IterationTrace
    certificate: ContractionCertificate


def _solve(spec, mesh, tol, certificate, y0, seed) -> _Solved:
    cert = certificate if certificate is not None else contraction_certificate(spec, mesh, seed=seed)
    if not cert.valid:
        raise CertificateError(cert)
    T = FixedPointOperator(spec, mesh)
    if y0 is None:
        y0, trace, cert = picard_solve(spec, mesh, tol=tol, certificate=cert)
    else:
        trace = IterationTrace(converged=True, residual=T.distance(T(y0), y0))
    return _Solved(T, y0.with_exponent(T.exponent, spec.psi), trace, cert)


def _deviation(T: FixedPointOperator, y: GridFunction, y0: GridFunction) -> np.ndarray:
    dev = T.difference(y, y0)
    if T.first:
        dev[0] = math.nan
    return dev


def _report(
    kind, solved: _Solved, y, tol, allowed, bound, constants, printed=None
) -> StabilityReport:
    T = solved.operator
    residual = T.distance(T(y), y)
    ratio = residual / allowed if allowed > 0 else (0.0 if residual == 0 else math.inf)
    precondition = residual <= allowed + 2.0 * tol
    deviation = _deviation(T, y, solved.y0)
    slack = 2.0 * tol * T.sigma
    margin, holds = StabilityReport.evaluate(bound, deviation, slack)
    cert = solved.certificate
    consts = {"xi": cert.xi, "M": cert.M, "L": cert.L, "q": cert.q, "sound": cert.sound, **constants}
    report = StabilityReport(
        kind=kind,
        nodes=T.x.copy(),
        residual_max_ratio=float(ratio),
        precondition_ok=bool(precondition),
        bound_values=bound,
        observed_deviation=deviation,
        slack=slack,
        margin=margin,
        pass_=bool(precondition and holds),
        constants=consts,
        extra={"residual_distance": residual, "iterations": solved.trace.iterations},
    )
    if printed is not None:
        m, h = StabilityReport.evaluate(printed, deviation, slack)
        report.bound_printed = printed
        report.margin_printed = m
        report.pass_printed = bool(precondition and h)
    return report


def check_uhr(
    y: GridFunction,
    spec: ProblemSpec,
    mesh: Optional[Mesh] = None,
    tol: float = DEFAULT_TOL,
    certificate: Optional[ContractionCertificate] = None,
    y0: Optional[GridFunction] = None,
    seed: int = 0,
) -> StabilityReport:
    """Check ``|y - y0| ≤ ξ σ(x) / (1 - q)`` at every node.

    The precondition is the integral-form residual ``d(T y, y) ≤ ξ``, which is
    what a differential residual below σ guarantees.
    """
    mesh = y.mesh if mesh is None else mesh
    solved = _solve(spec, mesh, tol, certificate, y0, seed)
    cert = solved.certificate
    sigma = solved.operator.sigma
    bound = cert.xi * sigma / (1.0 - cert.q)
    return _report(StabilityKind.UHR, solved, y, tol, cert.xi, bound, {"sigma_a": float(sigma[0])})


def _theta_constants(spec: ProblemSpec, T: FixedPointOperator, theta: float) -> dict:
    alpha, gamma = spec.order.alpha, spec.order.gamma
    span = float(T.U[-1])
    # sup of I^α θ over the interval
    Theta = theta * span**alpha / math.gamma(alpha + 1.0)
    return {
        "theta": theta,
        "Theta": Theta,
        "span_psi": span,
        "length": float(T.x[-1] - T.x[0]),
        "sigma_a": float(T.sigma[0]),
        "sigma_b": float(T.sigma[-1]),
        "gamma_alpha1": math.gamma(alpha + 1.0),
        "gamma_gamma1": math.gamma(gamma + 1.0),
    }


def check_semi_uhr(
    y: GridFunction,
    spec: ProblemSpec,
    theta: float,
    mesh: Optional[Mesh] = None,
    tol: float = DEFAULT_TOL,
    certificate: Optional[ContractionCertificate] = None,
    y0: Optional[GridFunction] = None,
    seed: int = 0,
) -> StabilityReport:
    """Check both forms of the semi-UHR bound.

    Primary (from the derivation): ``Θ σ(x) / ((1-q) σ(a))`` with
    ``Θ = θ (ψ(b)-ψ(a))^α / Γ(α+1)``. Printed: ``(b-a) θ σ(x) / ((1-q) σ(a))``.
    The precondition is ``d(T y, y) ≤ Θ / σ(a)``.
    """
    if not theta > 0:
        raise ValueError("θ must be positive")
    mesh = y.mesh if mesh is None else mesh
    solved = _solve(spec, mesh, tol, certificate, y0, seed)
    T, q = solved.operator, solved.certificate.q
    c = _theta_constants(spec, T, theta)
    scale = T.sigma / ((1.0 - q) * c["sigma_a"])
    bound = c["Theta"] * scale
    printed = c["length"] * theta * scale
    return _report(
        StabilityKind.SEMI_UHR, solved, y, tol, c["Theta"] / c["sigma_a"], bound, c, printed
    )


def check_uh(
    y: GridFunction,
    spec: ProblemSpec,
    theta: float,
    mesh: Optional[Mesh] = None,
    tol: float = DEFAULT_TOL,
    certificate: Optional[ContractionCertificate] = None,
    y0: Optional[GridFunction] = None,
    seed: int = 0,
) -> StabilityReport:
    """Check the constant UH bound.

    Primary: ``Θ σ(b) / ((1-q) σ(a))``. Printed: the same with ``Γ(α+1)`` in
    ``Θ`` replaced by ``Γ(γ+1)``.
    """
    if not theta > 0:
        raise ValueError("θ must be positive")
    mesh = y.mesh if mesh is None else mesh
    solved = _solve(spec, mesh, tol, certificate, y0, seed)
    T, q = solved.operator, solved.certificate.q
    c = _theta_constants(spec, T, theta)
    ones = np.ones_like(T.sigma)
    ratio = c["sigma_b"] / ((1.0 - q) * c["sigma_a"])
    bound = c["Theta"] * ratio * ones
    printed = theta * c["span_psi"] ** spec.order.alpha / c["gamma_gamma1"] * ratio * ones
    return _report(StabilityKind.UH, solved, y, tol, c["Theta"] / c["sigma_a"], bound, c, printed)


class HalfLineError(ValueError):
    def __init__(self, n: int, certificate: ContractionCertificate):
        self.n = n
        self.certificate = certificate
        reason = certificate.reason or f"q = {certificate.q:.6g}"
        super().__init__(f"no contraction on I_{n} = [a, a+{n}]: {reason}")


@dataclass
class IntervalRecord:
    n: int
    b: float
    nodes: int
    certificate: ContractionCertificate
    iterations: int
    residual: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "b": self.b,
            "nodes": self.nodes,
            "certificate": self.certificate.to_dict(),
            "iterations": self.iterations,
            "residual": self.residual,
        }


@dataclass
class HalfLineReport:
    intervals: list[IntervalRecord]
    mismatches: list[float]
    tolerance: float
    uhr: Optional[StabilityReport] = None

    @property
    def max_mismatch(self) -> float:
        return max(self.mismatches) if self.mismatches else 0.0

    @property
    def consistent(self) -> bool:
        return self.max_mismatch <= self.tolerance

    @property
    def passed(self) -> bool:
        return self.consistent and (self.uhr is None or self.uhr.pass_)

    def to_dict(self) -> dict:
        return {
            "intervals": [r.to_dict() for r in self.intervals],
            "mismatches": list(self.mismatches),
            "max_mismatch": self.max_mismatch,
            "tolerance": self.tolerance,
            "consistent": self.consistent,
            "uhr": None if self.uhr is None else self.uhr.to_dict(),
            "pass": self.passed,
        }


def extend_to_halfline(
    spec: ProblemSpec,
    n_max: int,
    mesh_per_unit: int,
    tol: float = DEFAULT_TOL,
    grading: Optional[float] = None,
    perturbation: Union[PerturbationSpec, None, bool] = True,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[GridFunction, HalfLineReport]:
    """Solve on ``I_n = [a, a+n]`` for ``n = 1..n_max`` and glue the solutions.

    The meshes nest, so the restriction of the ``I_{n+1}`` solution to ``I_n``
    can be compared node by node with the ``I_n`` solution (Bielecki distance).
    The assembled solution is the one on the largest interval. Unless
    ``perturbation`` is ``None`` or ``False``, a σ-bounded perturbation of it is
    checked against the UHR bound with the constants of ``I_{n_max}``.
    """
    if not spec.half_line:
        raise ValueError("extend_to_halfline needs a problem on [a, ∞)")
    if spec.sigma.lower_bound is None or spec.sigma.upper_bound is None:
        raise ValueError("half-line problems need declared σ bounds (ε, ω)")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    r = default_grading(spec.order.gamma) if grading is None else grading
    big = Mesh.halfline(spec.a, n_max, mesh_per_unit, r)
    solutions: list[GridFunction] = []
    records: list[IntervalRecord] = []
    last = None
    for n in range(1, n_max + 1):
        b = spec.a + n
        mesh = big.prefix(b)
        sub = spec.restricted(b)
        cert = contraction_certificate(sub, mesh, seed=seed)
        if not cert.valid:
            raise HalfLineError(n, cert)
        y, trace, cert = picard_solve(sub, mesh, tol=tol, max_iter=max_iter, certificate=cert)
        solutions.append(y)
        records.append(IntervalRecord(n, b, mesh.nodes.size, cert, trace.iterations, trace.residual))
        last = (sub, mesh, cert, y)
    mismatches = []
    for small, large in zip(solutions[:-1], solutions[1:]):
        k = small.mesh.nodes.size
        restricted = GridFunction(small.mesh, large.values[:k], large.exponent)
        T = FixedPointOperator(spec.restricted(small.mesh.b), small.mesh)
        mismatches.append(T.distance(restricted, small))
    report = HalfLineReport(records, mismatches, 5.0 * tol)
    sub, mesh, cert, y0 = last
    if perturbation is not None and perturbation is not False:
        pert = PerturbationSpec(seed=seed) if perturbation is True else perturbation
        y = make_perturbed_solution(y0, pert, sub, certificate=cert)
        report.uhr = check_uhr(y, sub, mesh, tol=tol, certificate=cert, y0=y0)
    return solutions[-1], report
