"""Meshes and grid functions in plain or weighted representation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import PsiMap


def default_grading(gamma: float) -> float:
    """Grading exponent ``2/γ`` capped at 4."""
    return min(2.0 / gamma, 4.0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Strictly increasing nodes ``x_0 = a < ... < x_N``.

    ``graded`` builds ``x_i = a + (b - a) (i/N)^r``, clustering nodes at ``a``.
    """

    nodes: np.ndarray
    grading: float = 1.0

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def graded(cls, a: float, b: float, n: int, grading: float = 1.0) -> "Mesh":
        if n < 1:
            raise ValueError("need n >= 1 intervals")
        if grading < 1:
            raise ValueError("grading exponent must be >= 1")
        s = np.arange(n + 1) / n
        nodes = a + (b - a) * s**grading
        nodes[-1] = b
        return cls(nodes, grading)

    @classmethod
    def halfline(cls, a: float, units: int, per_unit: int, grading: float = 1.0) -> "Mesh":
        """Graded nodes on ``[a, a+1]`` then uniform nodes on each later unit.

        The mesh of ``[a, a+m]`` is a prefix of the mesh of ``[a, a+n]`` for
        ``m < n``, which is what the nesting check on the half line relies on.
        """
        first = cls.graded(a, a + 1.0, per_unit, grading).nodes
        rest = [a + k + np.arange(1, per_unit + 1) / per_unit for k in range(1, units)]
        return cls(np.concatenate([first, *rest]), grading)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.nodes.size - 1

    def prefix(self, b: float) -> "Mesh":
        """Nodes up to and including ``b`` (which must be a node)."""
        k = int(np.searchsorted(self.nodes, b, side="right"))
        if not math.isclose(self.nodes[k - 1], b, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(b))):
            raise ValueError(f"{b} is not a mesh node")
        return Mesh(self.nodes[:k], self.grading)

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape and bool(np.array_equal(self.nodes, other.nodes))
        )


PLAIN = 0.0


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a function on a mesh.

    With ``exponent == 0`` the values are the function itself (PLAIN). Otherwise
    they are ``(ψ(x) - ψ(a))^exponent * y(x)`` (WEIGHTED); with exponent
    ``1 - γ`` this keeps solutions that blow up like ``(ψ(x) - ψ(a))^(γ-1)``
    finite at ``x_0``.
    """

    mesh: Mesh
    values: np.ndarray
    exponent: float = PLAIN

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.mesh.nodes.shape:
            raise ValueError(f"{values.size} values for {self.mesh.nodes.size} mesh nodes")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "exponent", float(self.exponent))

    @property
    def representation(self) -> str:
        return "PLAIN" if self.exponent == PLAIN else f"WEIGHTED({self.exponent:g})"

    @classmethod
    def from_callable(cls, mesh: Mesh, fn, exponent: float = PLAIN) -> "GridFunction":
        """Sample ``fn`` on the mesh; with a non-zero exponent, ``fn`` is the weighted function."""
        vals = np.broadcast_to(np.asarray(fn(mesh.nodes), dtype=float), mesh.nodes.shape)
        return cls(mesh, vals, exponent)

    @classmethod
    def power(cls, mesh: Mesh, psi: PsiMap, k: float, coef: float = 1.0) -> "GridFunction":
        """``coef * (ψ(x) - ψ(a))^k``; negative ``k`` is stored exactly in weighted form."""
        if k < 0:
            return cls(mesh, np.full(mesh.nodes.shape, coef), -k)
        u = psi.shifted(mesh.nodes)
        return cls(mesh, coef * u**k)

    def shifted_psi(self, psi: PsiMap) -> np.ndarray:
        return psi.shifted(self.mesh.nodes)

    def with_exponent(self, exponent: float, psi: PsiMap) -> "GridFunction":
        """Re-express in another weighted representation.

        The value at ``x_0`` is the limit: 0 when the weight grows, unchanged
        when it is the same, and ±inf (or nan for a zero value) when it shrinks.
        """
        exponent = float(exponent)
        if exponent == self.exponent:
            return self
        u = self.shifted_psi(psi)
        shift = exponent - self.exponent
        out = np.empty_like(self.values)
        out[1:] = self.values[1:] * u[1:] ** shift
        v0 = self.values[0]
        if shift > 0:
            out[0] = 0.0
        elif v0 == 0:
            out[0] = math.nan
        else:
            out[0] = math.copysign(math.inf, v0)
        return GridFunction(self.mesh, out, exponent)

    def plain(self, psi: PsiMap) -> np.ndarray:
        """Plain values ``y(x_i)``; may be infinite at ``x_0`` for weighted data."""
        return self.with_exponent(PLAIN, psi).values

    def _check(self, other: "GridFunction"):
        if not self.mesh.same_as(other.mesh):
            raise ValueError("grid functions live on different meshes")
        if self.exponent != other.exponent:
            raise ValueError(
                f"representation mismatch: {self.representation} vs {other.representation}"
            )

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.mesh, self.values + other.values, self.exponent)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.mesh, self.values - other.values, self.exponent)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.mesh, self.values * float(scalar), self.exponent)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return self * -1.0
