"""A small arithmetic expression language for problem definitions.

Expressions are parsed into an immutable tree of dataclass nodes and
evaluated with numpy, so every map can be applied to whole grids at once::

    >>> e = Expression.parse("x^2 + 1", ["x"])
    >>> float(e(2.0))
    5.0

Grammar (``^`` and ``**`` are the same right-associative power operator)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy import special as sp

from .special import mittag_leffler


class ExpressionError(ValueError):
    """Raised for malformed expressions; ``pos`` is the 0-based character offset."""

    def __init__(self, message: str, src: str = "", pos: int | None = None):
        self.src = src
        self.pos = pos
        if pos is not None:
            message = f"{message} at position {pos}"
        super().__init__(message)


# name -> (arity, numpy implementation)
BUILTINS: dict[str, tuple[int, Callable]] = {
    "exp": (1, np.exp),
    "ln": (1, np.log),
    "log": (1, np.log),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "gamma": (1, sp.gamma),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "mittag_leffler": (3, mittag_leffler),
}

CONSTANTS = {"pi": math.pi, "e": math.e}

# accepted spellings of the kernel's integration variable
_ALIASES = {"τ": "tau"}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    """A named constant bound at parse time (``pi``, ``e`` or a user parameter)."""

    name: str
    value: float


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Param, Unary, BinOp, Call]

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[^\W\d]\w*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {src[pos]!r}", src, pos)
        kind = m.lastgroup
        if kind != "ws":
            text = m.group(kind)
            if kind == "op" and text == "**":
                text = "^"
            tokens.append((kind, text, pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, allowed_vars: Sequence[str], params: Mapping[str, float]):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.allowed = {_ALIASES.get(v, v) for v in allowed_vars}
        self.params = dict(params)

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, tok, pos = self.advance()
        if tok != text:
            found = "end of input" if kind == "end" else repr(tok)
            raise ExpressionError(f"expected {text!r}, found {found}", self.src, pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {tok!r}", self.src, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, tok, _ = self.peek()
        if kind == "op" and tok in ("-", "+"):
            self.advance()
            return Unary(tok, self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, tok, _ = self.peek()
        if kind == "op" and tok == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, tok, pos = self.advance()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            name = _ALIASES.get(tok, tok)
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(name, pos)
            if name in self.allowed:
                return Var(name)
            if name in self.params:
                return Param(name, float(self.params[name]))
            if name in CONSTANTS:
                return Param(name, CONSTANTS[name])
            if name in BUILTINS:
                raise ExpressionError(f"function {name!r} used without arguments", self.src, pos)
            raise ExpressionError(f"unknown identifier {name!r}", self.src, pos)
        if kind == "op" and tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(tok)
        raise ExpressionError(f"unexpected {found}", self.src, pos)

    def call(self, name: str, pos: int) -> Node:
        if name not in BUILTINS:
            raise ExpressionError(f"unknown function {name!r}", self.src, pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = BUILTINS[name][0]
        if len(args) != arity:
            raise ExpressionError(
                f"function {name!r} takes {arity} argument(s), got {len(args)}", self.src, pos
            )
        return Call(name, tuple(args))


def parse_expression(
    src: str, allowed_vars: Sequence[str], params: Mapping[str, float] | None = None
) -> Node:
    """Parse ``src`` into an expression tree over ``allowed_vars``.

    ``params`` binds extra names to constants; they stay named in the tree so
    that printing reproduces them.
    """
    if not allowed_vars:
        raise ValueError("allowed_vars must not be empty")
    return _Parser(src, allowed_vars, params or {}).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "unary": 3, "^": 4}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _PREC["unary"]
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _PREC["unary"]
    return 5


def _wrap(text: str, cond: bool) -> str:
    return f"({text})" if cond else text


def to_source(node: Node) -> str:
    """Print a tree back to source text with the minimal parentheses."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, (Var, Param)):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Unary):
        return node.op + _wrap(to_source(node.operand), _prec(node.operand) < _PREC["unary"])
    prec = _PREC[node.op]
    if node.op == "^":
        left = _wrap(to_source(node.left), _prec(node.left) <= prec)
        right = _wrap(to_source(node.right), _prec(node.right) < _PREC["unary"])
        return f"{left}^{right}"
    left = _wrap(to_source(node.left), _prec(node.left) < prec)
    right = _wrap(to_source(node.right), _prec(node.right) <= prec)
    return f"{left} {node.op} {right}"


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


def _compile(node: Node, index: Mapping[str, int]) -> Callable:
    if isinstance(node, Num):
        v = node.value
        return lambda args: v
    if isinstance(node, Param):
        v = node.value
        return lambda args: v
    if isinstance(node, Var):
        k = index[node.name]
        return lambda args: args[k]
    if isinstance(node, Unary):
        inner = _compile(node.operand, index)
        if node.op == "-":
            return lambda args: np.negative(inner(args))
        return inner
    if isinstance(node, BinOp):
        lf, rf, fn = _compile(node.left, index), _compile(node.right, index), _BINARY[node.op]
        if node.op == "^":
            # float power so that negative integer exponents work on integer-valued inputs
            return lambda args: np.float_power(lf(args), rf(args))
        return lambda args: fn(lf(args), rf(args))
    fn = BUILTINS[node.name][1]
    argf = [_compile(a, index) for a in node.args]
    return lambda args: fn(*(f(args) for f in argf))


class Expression:
    """A parsed expression bound to an ordered list of variable names.

    Calling it with positional arrays (one per variable, broadcast together)
    returns a float array of the broadcast shape.
    """

    def __init__(self, tree: Node, variables: Sequence[str], source: str | None = None):
        self.tree = tree
        self.variables = tuple(_ALIASES.get(v, v) for v in variables)
        self.source = source if source is not None else to_source(tree)
        self._fn = _compile(tree, {v: i for i, v in enumerate(self.variables)})

    @classmethod
    def parse(
        cls, src: str, variables: Sequence[str], params: Mapping[str, float] | None = None
    ) -> "Expression":
        return cls(parse_expression(src, variables, params), variables, src)

    def __call__(self, *args) -> np.ndarray | float:
        if len(args) != len(self.variables):
            raise TypeError(f"expected {len(self.variables)} arguments, got {len(args)}")
        arrays = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        with np.errstate(all="ignore"):
            out = np.asarray(self._fn(arrays), dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out if out.ndim else float(out)

    def uses(self, name: str) -> bool:
        """True if the variable ``name`` occurs in the tree."""
        return _uses(self.tree, _ALIASES.get(name, name))

    def __repr__(self) -> str:
        return f"Expression({self.source!r}, {list(self.variables)!r})"

    def __getstate__(self):
        return {"tree": self.tree, "variables": self.variables, "source": self.source}

    def __setstate__(self, state):
        self.__init__(state["tree"], state["variables"], state["source"])


def _uses(node: Node, name: str) -> bool:
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Unary):
        return _uses(node.operand, name)
    if isinstance(node, BinOp):
        return _uses(node.left, name) or _uses(node.right, name)
    if isinstance(node, Call):
        return any(_uses(a, name) for a in node.args)
    return False
