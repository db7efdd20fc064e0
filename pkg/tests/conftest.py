import math

import numpy as np
import pytest

from hilferstab.expr import Expression
from hilferstab.model import (
    ESTIMATE,
    DelayFunction,
    FractionalOrder,
    ProblemSpec,
    PsiMap,
    WeightFunction,
    family,
)


def make_spec(
    alpha=0.5,
    beta=1.0,
    b=1.0,
    f="0",
    K="0",
    c=1.0,
    sigma="1",
    delta="t",
    psi="identity",
    psi_params=None,
    M=ESTIMATE,
    L=ESTIMATE,
    sigma_bounds=(None, None),
    a=0.0,
):
    order = FractionalOrder(alpha, beta)
    value, deriv = family(psi, **(psi_params or {}))
    return ProblemSpec(
        order=order,
        psi=PsiMap(value, deriv, a, b),
        a=a,
        b=b,
        c=c,
        f=Expression.parse(f, ["x", "u", "g"]),
        K=Expression.parse(K, ["x", "tau", "u", "w"]),
        delta=DelayFunction(Expression.parse(delta, ["t"])),
        sigma=WeightFunction(Expression.parse(sigma, ["x"]), *sigma_bounds),
        lipschitz_M=M,
        lipschitz_L=L,
    )


def psi_map(name="identity", a=0.0, b=1.0, **params):
    return PsiMap(*family(name, **params), a, b)


def ml_series(alpha, beta, z, terms=60):
    """Truncated power series of E_{α,β}(z), written independently of the package."""
    z = np.asarray(z, dtype=float)
    return sum(z**k / math.gamma(alpha * k + beta) for k in range(terms))


@pytest.fixture
def spec_factory():
    return make_spec
