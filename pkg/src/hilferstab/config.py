"""YAML problem and scenario files.

A problem is a mapping such as::

    order: {alpha: 0.5, beta: 1.0}
    interval: {a: 0, b: 0.5}        # b: inf for the half line
    c: 1.0
    psi: x                           # or {family: exponential, rate: 2}
    psi_prime: "1"                   # omitted when psi names a family
    sigma: exp(x)
    sigma_bounds: [0.5, 3]           # (ε, ω), required on the half line
    delta: t
    f: lam*u                         # variables x, u, g
    K: "0"                           # variables x, tau (or τ), u, w
    params: {lam: 0.5}
    M: estimate                      # or a number
    L: estimate
    bounds: {u: [-10, 10], g: [-10, 10], w: [-10, 10]}

Errors carry ``file:line:column`` of the offending entry.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .expr import Expression, ExpressionError
from .model import (
    ESTIMATE,
    DelayFunction,
    FractionalOrder,
    ProblemSpec,
    PsiMap,
    WeightFunction,
    family,
)

SCHEMA_VERSION = 1

F_VARS = ("x", "u", "g")
K_VARS = ("x", "tau", "u", "w")
PROBLEM_KEYS = {
    "name",
    "order",
    "interval",
    "c",
    "psi",
    "psi_prime",
    "sigma",
    "sigma_bounds",
    "delta",
    "f",
    "K",
    "params",
    "M",
    "L",
    "bounds",
}


class ConfigError(ValueError):
    """A configuration problem, optionally located as ``source:line:column``."""

    def __init__(self, message: str, source: str = "", line: Optional[int] = None, column: Optional[int] = None):
        self.source = source
        self.line = line
        self.column = column
        where = source
        if line is not None:
            where = f"{source}:{line}:{column}" if column is not None else f"{source}:{line}"
        super().__init__(f"{where}: {message}" if where else message)


class _Located(dict):
    """A mapping that remembers where each key's value starts (1-based line, column)."""

    marks: dict
    start: tuple


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _Loader, node: yaml.MappingNode) -> _Located:
    loader.flatten_mapping(node)
    out = _Located()
    out.marks = {}
    out.start = (node.start_mark.line + 1, node.start_mark.column + 1)
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            mark = key_node.start_mark
            raise ConfigError(f"duplicate key {key!r}", "", mark.line + 1, mark.column + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        mark = value_node.start_mark
        # quoted scalars start one column before their text
        shift = 1 if getattr(value_node, "style", None) in ("'", '"') else 0
        out.marks[key] = (mark.line + 1, mark.column + 1 + shift)
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(text: str, source: str = "<string>") -> Any:
    """Parse YAML text; syntax errors become ``ConfigError`` with line and column."""
    try:
        return yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], source, exc.line, exc.column) from None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        msg = exc.problem or exc.context or "invalid YAML"
        if mark is None:
            raise ConfigError(msg, source) from None
        raise ConfigError(msg, source, mark.line + 1, mark.column + 1) from None


class _Context:
    """Locates errors for one file."""

    def __init__(self, source: str):
        self.source = source

    def error(self, message: str, where: Any = None, key: Any = None, offset: int = 0) -> ConfigError:
        line = column = None
        if isinstance(where, _Located):
            line, column = where.marks.get(key, where.start) if key is not None else where.start
            column += offset
        return ConfigError(message, self.source, line, column)

    def mapping(self, value: Any, what: str, parent: Any = None, key: Any = None) -> Mapping:
        if not isinstance(value, dict):
            raise self.error(f"{what} must be a mapping", parent, key)
        return value

    def number(self, data: Mapping, key: str, default: Any = None, allow_inf: bool = False) -> float:
        if key not in data:
            if default is None:
                raise self.error(f"missing required field {key!r}", data)
            return default
        value = data[key]
        if isinstance(value, str) and allow_inf and value.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"field {key!r} must be a number, got {value!r}", data, key)
        return float(value)

    def expression(self, data: Mapping, key: str, variables, params, default: Optional[str] = None) -> Expression:
        if key not in data:
            if default is None:
                raise self.error(f"missing required field {key!r}", data)
            return Expression.parse(default, variables, params)
        value = data[key]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = repr(float(value))
        if not isinstance(value, str):
            raise self.error(f"field {key!r} must be an expression string", data, key)
        try:
            return Expression.parse(value, variables, params)
        except ExpressionError as exc:
            offset = exc.pos if exc.pos is not None and "\n" not in value else 0
            message = str(exc).rsplit(" at position", 1)[0]
            raise self.error(f"in {key!r}: {message}", data, key, offset) from None


def _psi_map(ctx: _Context, data: Mapping, params, a: float, b: float) -> PsiMap:
    if "psi" not in data:
        raise ctx.error("missing required field 'psi'", data)
    raw = data["psi"]
    if isinstance(raw, dict):
        fam = dict(raw)
        name = fam.pop("family", None)
        if name is None:
            raise ctx.error("a ψ family mapping needs a 'family' entry", raw)
        try:
            value, deriv = family(str(name), **{k: float(v) for k, v in fam.items()})
        except (KeyError, TypeError, ValueError) as exc:
            raise ctx.error(str(exc).strip("'\""), raw, "family") from None
        if "psi_prime" in data:
            deriv = ctx.expression(data, "psi_prime", ["x"], params)
        if deriv is None:
            raise ctx.error(f"family {name!r} has no closed-form derivative; give 'psi_prime'", raw)
        return PsiMap(value, deriv, a, b)
    value = ctx.expression(data, "psi", ["x"], params)
    deriv = ctx.expression(data, "psi_prime", ["x"], params)
    return PsiMap(value, deriv, a, b)


def _lipschitz(ctx: _Context, data: Mapping, key: str) -> Union[float, str]:
    value = data.get(key, ESTIMATE)
    if value == ESTIMATE:
        return ESTIMATE
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
        raise ctx.error(f"{key} must be a non-negative number or 'estimate'", data, key)
    return float(value)


def problem_from_mapping(data: Any, source: str = "<problem>", name: Optional[str] = None) -> ProblemSpec:
    """Build a ``ProblemSpec`` from a parsed problem mapping."""
    ctx = _Context(source)
    data = ctx.mapping(data, "problem")
    unknown = set(data) - PROBLEM_KEYS
    if unknown:
        key = sorted(unknown, key=str)[0]
        raise ctx.error(f"unknown problem field {key!r}", data, key)
    params_raw = data.get("params", {}) or {}
    params_raw = ctx.mapping(params_raw, "params", data, "params")
    params = {}
    for k in params_raw:
        params[str(k)] = ctx.number(params_raw, k)

    order_data = ctx.mapping(data.get("order"), "order", data, "order")
    try:
        order = FractionalOrder(ctx.number(order_data, "alpha"), ctx.number(order_data, "beta"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ctx.error(str(exc), data, "order") from None

    interval = ctx.mapping(data.get("interval"), "interval", data, "interval")
    a = ctx.number(interval, "a")
    b = ctx.number(interval, "b", allow_inf=True)
    if not b > a:
        raise ctx.error(f"interval end {b} must exceed start {a}", interval, "b")

    psi = _psi_map(ctx, data, params, a, b)
    sigma_expr = ctx.expression(data, "sigma", ["x"], params)
    lo = hi = None
    if "sigma_bounds" in data:
        sb = data["sigma_bounds"]
        if not (isinstance(sb, list) and len(sb) == 2 and all(isinstance(v, (int, float)) for v in sb)):
            raise ctx.error("sigma_bounds must be a list [ε, ω]", data, "sigma_bounds")
        lo, hi = float(sb[0]), float(sb[1])
    bounds = {"u": (-10.0, 10.0), "g": (-10.0, 10.0), "w": (-10.0, 10.0)}
    if "bounds" in data:
        raw = ctx.mapping(data["bounds"], "bounds", data, "bounds")
        for k, v in raw.items():
            if k not in bounds:
                raise ctx.error(f"unknown bounds entry {k!r} (use u, g, w)", raw, k)
            if not (isinstance(v, list) and len(v) == 2 and v[0] < v[1]):
                raise ctx.error(f"bounds.{k} must be [low, high] with low < high", raw, k)
            bounds[k] = (float(v[0]), float(v[1]))
    try:
        return ProblemSpec(
            order=order,
            psi=psi,
            a=a,
            b=b,
            c=ctx.number(data, "c"),
            f=ctx.expression(data, "f", F_VARS, params),
            K=ctx.expression(data, "K", K_VARS, params, default="0"),
            delta=DelayFunction(ctx.expression(data, "delta", ["t"], params, default="t")),
            sigma=WeightFunction(sigma_expr, lo, hi),
            lipschitz_M=_lipschitz(ctx, data, "M"),
            lipschitz_L=_lipschitz(ctx, data, "L"),
            bounds=bounds,
            name=str(name or data.get("name", "problem")),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ctx.error(str(exc), data) from None


def load_problem(path: Union[str, Path]) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read problem file: {exc.strerror}", str(path)) from None
    data = load_yaml(text, str(path))
    if isinstance(data, dict) and "problem" in data and "order" not in data:
        data = data["problem"]
    return problem_from_mapping(data, str(path))
