import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammainc

from conftest import make_spec, ml_series
from hilferstab.frac_ops import frac_integral
from hilferstab.grid import PLAIN, GridFunction, Mesh, default_grading
from hilferstab.model import WeightFunction
from hilferstab.expr import Expression
from hilferstab.solver import (
    CertificateError,
    ContractionCertificate,
    ConvergenceError,
    FixedPointOperator,
    IterationRecord,
    IterationTrace,
    aposteriori_bound,
    apply_T,
    bielecki_distance,
    contraction_certificate,
    estimate_xi,
    picard_solve,
    xi_ratio,
)

# regression baseline: sup_x I^{1/2}[e^{10s}](x) / e^{10x} on [0, 1] is attained at x = 1,
# where it equals gammainc(1/2, 10) / sqrt(10) (regularised lower incomplete gamma)
XI_EXP10 = 0.3162253170805764


def sigma(src):
    return WeightFunction(Expression.parse(src, ["x"]))


def weighted_instance(**kw):
    args = dict(
        alpha=0.5,
        beta=0.3,
        sigma="exp(2*x)",
        delta="0.5*t",
        f="0.3*u + 0.2*g",
        K="0.5*exp(-x)*w + 0.1*sin(u)",
    )
    args.update(kw)
    return make_spec(**args)


def ml_instance(n=512):
    spec = make_spec(alpha=0.5, beta=1.0, b=0.5, f="0.5*u", c=1.0)
    mesh = Mesh.graded(0.0, 0.5, n, default_grading(1.0))
    return spec, mesh


def mesh_for(spec, n=128):
    return Mesh.graded(spec.a, spec.b, n, default_grading(spec.order.gamma))


class TestCertificate:
    def test_arithmetic(self):
        c = ContractionCertificate(0.5, 0.5, 1.0)
        assert c.q == 0.375 and c.valid
        bad = ContractionCertificate(0.9, 1.0, 1.0)
        assert bad.q == pytest.approx(1.71) and not bad.valid
        assert ContractionCertificate(0.7, 0.0, 3.0).q == 0.0
        assert ContractionCertificate(0.7, 0.0, 3.0).valid

    def test_xi_at_least_one_is_invalid(self):
        assert not ContractionCertificate(1.0, 0.0, 0.0).valid

    def test_reason_invalidates(self):
        assert not ContractionCertificate(0.5, 0.1, 0.1, reason="broken").valid

    def test_sound_flag(self):
        assert ContractionCertificate(0.5, 1, 1, volterra_ratio=0.4).sound
        assert not ContractionCertificate(0.5, 1, 1, volterra_ratio=0.6).sound

    def test_round_trip(self):
        c = ContractionCertificate(0.25, 0.5, 0.75, 0.1, "")
        assert ContractionCertificate.from_dict(c.to_dict()) == c
        d = c.to_dict()
        assert d["q"] == c.q and d["valid"] and d["sound"]

    def test_constant_f_gives_zero_q(self):
        spec = make_spec(b=0.5, f="1")
        cert = contraction_certificate(spec, mesh_for(spec))
        assert cert.M == 0.0 and cert.q == 0.0 and cert.valid

    def test_uncertifiable_sigma(self):
        spec = make_spec(b=1.0, f="0.1*u")
        cert = contraction_certificate(spec, mesh_for(spec))
        assert not cert.valid and "≥ 1" in cert.reason
        with pytest.raises(CertificateError, match="no contraction"):
            picard_solve(spec, mesh_for(spec), certificate=cert)


class TestXi:
    def test_constant_sigma_unit_interval(self):
        mesh = Mesh.graded(0.0, 1.0, 64, 2.0)
        psi = make_spec().psi
        assert xi_ratio(sigma("1"), 0.5, psi, mesh) == pytest.approx(1 / math.gamma(1.5), rel=1e-12)
        assert estimate_xi(sigma("1"), 0.5, psi, mesh) is None

    def test_constant_sigma_half_interval(self):
        spec = make_spec(b=0.5)
        xi = estimate_xi(sigma("1"), 0.5, spec.psi, mesh_for(spec, 64))
        assert xi == pytest.approx(math.sqrt(0.5) / math.gamma(1.5), rel=1e-12)

    def test_exponential_weight_baseline(self):
        # the oracle is independent of the package
        assert XI_EXP10 == pytest.approx(gammainc(0.5, 10.0) / math.sqrt(10.0), rel=1e-15)
        spec = make_spec()
        xi = estimate_xi(sigma("exp(10*x)"), 0.5, spec.psi, Mesh.graded(0.0, 1.0, 512, 1.0))
        assert xi is not None
        assert xi == pytest.approx(XI_EXP10, rel=1e-4)

    def test_xi_dominates_ratio_at_every_node(self):
        spec = weighted_instance()
        mesh = mesh_for(spec)
        s = spec.sigma(mesh.nodes)
        xi = estimate_xi(spec.sigma, 0.5, spec.psi, mesh)
        ratio = frac_integral(GridFunction(mesh, s), 0.5, spec.psi).values / s
        assert np.all(ratio <= xi)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            xi_ratio(sigma("x - 0.5"), 0.5, make_spec().psi, Mesh.graded(0.0, 1.0, 8))


class TestBielecki:
    mesh = Mesh.graded(0.0, 1.0, 8)

    def gf(self, v, e=PLAIN):
        return GridFunction(self.mesh, np.broadcast_to(v, (9,)), e)

    def test_examples(self):
        s = sigma("exp(x)")
        u = GridFunction.from_callable(self.mesh, np.exp)
        assert bielecki_distance(u, u, s) == 0.0
        assert bielecki_distance(u, self.gf(0.0), s) == pytest.approx(1.0)
        assert bielecki_distance(self.gf(2.0), self.gf(0.0), sigma("4")) == 0.5

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        u, v = self.gf(rng.normal(size=9)), self.gf(rng.normal(size=9))
        s = sigma("1 + x")
        assert bielecki_distance(u, v, s) == bielecki_distance(v, u, s)

    def test_weighted_skips_start(self):
        u, v = self.gf(1.0, 0.5), self.gf(0.0, 0.5)
        expected = np.max(self.mesh.nodes[1:] ** -0.5)
        assert bielecki_distance(u, v, sigma("1")) == pytest.approx(expected)

    def test_mismatch_errors(self):
        with pytest.raises(ValueError, match="different meshes"):
            bielecki_distance(self.gf(0.0), GridFunction(Mesh.graded(0.0, 1.0, 8, 2.0), np.zeros(9)), sigma("1"))
        with pytest.raises(ValueError, match="representation"):
            bielecki_distance(self.gf(0.0), self.gf(0.0, 0.5), sigma("1"))


class TestApplyT:
    def test_zero_rhs_gives_homogeneous_term(self):
        spec = weighted_instance(f="0", c=2.0)
        mesh = mesh_for(spec)
        u = GridFunction(mesh, np.random.default_rng(1).normal(size=129), 1.0 - spec.order.gamma)
        out = apply_T(u, spec)
        assert out.exponent == pytest.approx(1.0 - spec.order.gamma)
        assert np.allclose(out.values, 2.0 / math.gamma(spec.order.gamma), rtol=1e-15)

    @pytest.mark.parametrize("beta", [0.0, 0.4, 1.0])
    def test_constant_rhs(self, beta):
        spec = make_spec(alpha=0.6, beta=beta, c=0.0, f="1", psi="exponential")
        mesh = mesh_for(spec)
        T = FixedPointOperator(spec, mesh)
        out = T(T.initial()).plain(spec.psi)
        U = spec.psi.shifted(mesh.nodes)
        assert np.allclose(out[1:], U[1:] ** 0.6 / math.gamma(1.6), rtol=1e-12)

    def test_iterates_are_mittag_leffler_partial_sums(self):
        spec, mesh = ml_instance(256)
        T = FixedPointOperator(spec, mesh)
        y = T.initial()
        x = mesh.nodes
        for k in range(1, 6):
            y = T(y)
            partial = ml_series(0.5, 1.0, 0.5 * x**0.5, terms=k + 1)
            assert np.max(np.abs(y.values - partial)) < 1e-3

    @pytest.mark.parametrize("psi, tol", [("identity", 1e-13), ("exponential", 1e-3)])
    def test_volterra_of_constant_kernel(self, psi, tol):
        # the trapezoid runs in ψ(τ), so only ψ(x) = x makes a constant kernel exact
        spec = make_spec(alpha=0.5, beta=0.5, K="2", f="g", psi=psi)
        mesh = mesh_for(spec, 64)
        T = FixedPointOperator(spec, mesh)
        assert np.allclose(T.volterra(T.initial()), 2.0 * mesh.nodes, rtol=tol, atol=1e-15)

    def test_delay_outside_interval(self):
        spec = make_spec(delta="t + 0.1", b=0.5)
        with pytest.raises(ValueError, match="outside"):
            FixedPointOperator(spec, mesh_for(spec, 16))

    def test_delay_to_start_in_weighted_case(self):
        spec = weighted_instance(delta="0")
        with pytest.raises(ValueError, match="unbounded"):
            FixedPointOperator(spec, mesh_for(spec, 16))

    def test_mesh_must_match_problem(self):
        spec = weighted_instance()
        with pytest.raises(ValueError, match="mesh ends"):
            FixedPointOperator(spec, Mesh.graded(0.0, 0.5, 16))

    def test_nonfinite_rhs(self):
        spec = make_spec(b=0.5, f="ln(u - 100)")
        T = FixedPointOperator(spec, mesh_for(spec, 16))
        with pytest.raises(ValueError, match="non-finite"):
            T(T.initial())


class TestPicard:
    def test_zero_rhs_converges_in_one_step(self):
        spec = weighted_instance(f="0", K="0")
        y, trace, cert = picard_solve(spec, mesh_for(spec))
        assert trace.iterations == 1 and trace.converged and trace.residual == 0.0
        assert np.all(y.values == 1.0 / math.gamma(spec.order.gamma))

    def test_mittag_leffler_instance(self):
        spec, mesh = ml_instance(512)
        y, trace, cert = picard_solve(spec, mesh)
        exact = ml_series(0.5, 1.0, 0.5 * mesh.nodes**0.5, terms=30)
        assert np.max(np.abs(y.values - exact)) < 1e-3
        assert np.all(trace.ratios()[1:] <= cert.q + 0.05)

    @pytest.mark.parametrize("beta", [0.0, 0.3, 0.7])
    def test_weighted_mittag_leffler_instances(self, beta):
        # D^{α,β} y = λ y with I^{1-γ} y(0) = 1 has y = x^(γ-1) E_{α,γ}(λ x^α)
        alpha, lam = 0.5, 0.5
        spec = make_spec(alpha=alpha, beta=beta, b=0.5, f=f"{lam}*u", c=1.0)
        gamma = spec.order.gamma
        mesh = mesh_for(spec, 256)
        y, trace, cert = picard_solve(spec, mesh)
        x = mesh.nodes
        exact = ml_series(alpha, gamma, lam * x**alpha, terms=60)
        assert np.max(np.abs(y.values - exact)) < 1e-3

    def test_trace_ratios_on_weighted_instance(self):
        spec = weighted_instance()
        y, trace, cert = picard_solve(spec, mesh_for(spec))
        assert cert.valid and cert.sound
        assert np.all(np.isfinite([r.distance for r in trace.records]))
        assert np.all(trace.ratios()[1:] <= cert.q + 0.05)

    def test_fixed_point_residual(self):
        spec = weighted_instance()
        mesh = mesh_for(spec)
        tol = 1e-8
        y, trace, cert = picard_solve(spec, mesh, tol=tol)
        T = FixedPointOperator(spec, mesh)
        assert T.distance(T(y), y) <= 2 * tol
        diff = T.difference(T(y), y)[1:]
        assert np.all(diff <= tol * T.sigma[1:])
        assert trace.records[-1].distance * cert.q <= tol * (1 - cert.q)

    @pytest.mark.parametrize("beta, c", [(0.3, 1.0), (0.0, -2.0), (0.7, 0.5)])
    def test_initial_condition_recovery(self, beta, c):
        spec = weighted_instance(beta=beta, c=c)
        y, _, _ = picard_solve(spec, mesh_for(spec))
        inner = frac_integral(y, 1.0 - spec.order.gamma, spec.psi, natural=True)
        assert inner.exponent == pytest.approx(0.0, abs=1e-15)
        assert inner.values[0] == pytest.approx(c, rel=0.05)
        assert inner.values[1] == pytest.approx(c, rel=0.05)

    def test_deterministic(self):
        spec = weighted_instance()
        a = picard_solve(spec, mesh_for(spec), seed=4)
        b = picard_solve(spec, mesh_for(spec), seed=4)
        assert np.array_equal(a[0].values, b[0].values)
        assert a[1].records == b[1].records
        assert a[2] == b[2]

    def test_max_iter(self):
        spec = weighted_instance()
        with pytest.raises(ConvergenceError) as info:
            picard_solve(spec, mesh_for(spec), tol=1e-14, max_iter=3)
        assert info.value.trace.iterations == 3 and not info.value.trace.converged

    def test_bad_tol(self):
        spec = weighted_instance()
        with pytest.raises(ValueError):
            picard_solve(spec, mesh_for(spec), tol=0.0)


class TestAposteriori:
    def test_examples(self):
        assert aposteriori_bound(IterationTrace([IterationRecord(1, 0.0, 0.0)], True, 0.0), 0.3) == 0.0
        trace = IterationTrace([IterationRecord(1, 0.01, 0.01)], True)
        assert aposteriori_bound(trace, 0.5) == pytest.approx(0.02)
        with pytest.raises(ValueError):
            aposteriori_bound(trace, 1.0)
        with pytest.raises(ValueError):
            aposteriori_bound(IterationTrace(), 0.5)

    def test_bound_dominates_error_on_mittag_leffler_instance(self):
        spec, mesh = ml_instance(256)
        T = FixedPointOperator(spec, mesh)
        loose, trace, cert = picard_solve(spec, mesh, tol=1e-3)
        fixed, _, _ = picard_solve(spec, mesh, tol=1e-14)
        bound = aposteriori_bound(trace, cert.q)
        assert T.distance(loose, fixed) <= bound
        exact = GridFunction(mesh, ml_series(0.5, 1.0, 0.5 * mesh.nodes**0.5, terms=30))
        assert T.distance(loose, exact) <= bound


def _random_pair(T, rng, scale):
    n = T.x.size
    e = T.exponent
    u = GridFunction(T.mesh, rng.normal(scale=scale, size=n), e)
    v = GridFunction(T.mesh, rng.normal(scale=scale, size=n), e)
    return u, v


def test_contractivity_over_random_pairs():
    spec = weighted_instance()
    mesh = mesh_for(spec, 64)
    cert = contraction_certificate(spec, mesh)
    assert cert.valid and cert.sound
    T = FixedPointOperator(spec, mesh)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        u, v = _random_pair(T, rng, rng.uniform(0.1, 3))
        worst = max(worst, T.distance(T(u), T(v)) / T.distance(u, v))
    assert worst <= cert.q * 1.05


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 3.0), st.floats(0.2, 0.8), st.floats(0.0, 1.0), st.integers(0, 10**6))
def test_contractivity_property(lam, alpha, beta, seed):
    spec = make_spec(
        alpha=alpha,
        beta=beta,
        sigma=f"exp({lam}*x)",
        f="0.2*sin(u) + 0.2*g",
        K="0.3*w",
        delta="0.5*t",
    )
    mesh = mesh_for(spec, 48)
    cert = contraction_certificate(spec, mesh)
    if not (cert.valid and cert.sound):
        return
    T = FixedPointOperator(spec, mesh)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        u, v = _random_pair(T, rng, 1.0)
        assert T.distance(T(u), T(v)) <= cert.q * 1.05 * T.distance(u, v)
