"""Tiny arithmetic expression language for coefficient functions.

Grammar (EBNF):

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;                (right associative)
    atom    = NUMBER | VAR | FUNC "(" expr { "," expr } ")" | "(" expr ")" ;
    VAR     = "u" | "v" | "xi" | "eta" | "x" ;
    FUNC    = "sin" | "cos" | "tanh" | "exp" | "abs" | "min" | "max" | "clamp" ;

Precedence: ^  >  unary -  >  * /  >  + -.  Evaluation is numpy-based so the
same compiled expression runs on scalars and on grids; domain failures
(division by zero, fractional power of a negative) surface as non-finite
values and are raised as EvalError by the callers that check them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np

VARIABLES = ("u", "v", "xi", "eta", "x")

FUNCTION_ARITY = {
    "sin": 1,
    "cos": 1,
    "tanh": 1,
    "exp": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "clamp": 3,
}

_FUNCTION_IMPL = {
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "exp": np.exp,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "clamp": lambda a, lo, hi: np.clip(a, lo, hi),
}


class ParseError(ValueError):
    """Syntax or validation failure; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(ValueError):
    """Evaluation failure: unbound variable or numeric domain error."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    lhs: "ExprAst"
    rhs: "ExprAst"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


ExprAst = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            bad = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[bad]!r}", bad)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        elif m.group("op") is not None:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)
        return self.advance()

    def parse(self) -> ExprAst:
        ast = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {val!r}", off)
        return ast

    def expr(self) -> ExprAst:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> ExprAst:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self) -> ExprAst:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            arg = self.unary()
            # fold literal negation so pretty-printed "-3" round-trips
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self) -> ExprAst:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> ExprAst:
        kind, val, off = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTION_ARITY:
                self.expect_op("(")
                args = [self.expr()]
                while True:
                    k, v, o = self.peek()
                    if k == "op" and v == ",":
                        self.advance()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                want = FUNCTION_ARITY[val]
                if len(args) != want:
                    raise ParseError(
                        f"{val} takes {want} argument(s), got {len(args)}", off
                    )
                return Call(val, tuple(args))
            if val in VARIABLES:
                return Var(val)
            raise ParseError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError("expected a value", off)


def parse_expr(text: str) -> ExprAst:
    """Parse source text into an AST, or raise ParseError with an offset."""
    return _Parser(text).parse()


def variables_of(ast: ExprAst) -> frozenset:
    if isinstance(ast, Num):
        return frozenset()
    if isinstance(ast, Var):
        return frozenset((ast.name,))
    if isinstance(ast, Neg):
        return variables_of(ast.arg)
    if isinstance(ast, BinOp):
        return variables_of(ast.lhs) | variables_of(ast.rhs)
    if isinstance(ast, Call):
        out = frozenset()
        for a in ast.args:
            out |= variables_of(a)
        return out
    raise TypeError(f"not an AST node: {ast!r}")


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(ast: ExprAst) -> str:
    """Pretty-print with minimal parentheses; reparses to an equal AST."""

    def render(node, parent_prec, is_right=False):
        if isinstance(node, Num):
            text = repr(node.value)
            # sign test via the rendered text so -0.0 parenthesizes too
            if text.startswith("-") and parent_prec > _PRECEDENCE["neg"]:
                return f"({text})"
            return text
        if isinstance(node, Var):
            return node.name
        if isinstance(node, Neg):
            inner = render(node.arg, _PRECEDENCE["neg"])
            text = f"-{inner}"
            return f"({text})" if parent_prec > _PRECEDENCE["neg"] else text
        if isinstance(node, Call):
            args = ", ".join(render(a, 0) for a in node.args)
            return f"{node.fn}({args})"
        if isinstance(node, BinOp):
            prec = _PRECEDENCE[node.op]
            # left-assoc ops need parens around an equal-precedence right child;
            # right-assoc ^ is the mirror case
            if node.op == "^":
                lhs = render(node.lhs, prec + 1)
                rhs = render(node.rhs, prec)
            else:
                lhs = render(node.lhs, prec)
                rhs = render(node.rhs, prec + 1)
            text = f"{lhs} {node.op} {rhs}" if node.op in "+-" else f"{lhs}{node.op}{rhs}"
            if prec < parent_prec:
                return f"({text})"
            return text
        raise TypeError(f"not an AST node: {node!r}")

    return render(ast, 0)


@lru_cache(maxsize=None)
def compile_expr(ast: ExprAst) -> Callable[[Mapping[str, object]], object]:
    """Compile an AST to a closure evaluating against an environment dict.

    The closure does not validate finiteness; callers decide whether a
    non-finite result is an error (eval_expr does, the steppers treat it
    as blow-up).
    """
    if isinstance(ast, Num):
        value = np.float64(ast.value)
        return lambda env: value
    if isinstance(ast, Var):
        name = ast.name
        def lookup(env):
            try:
                return env[name]
            except KeyError:
                raise EvalError(f"unbound variable {name!r}") from None
        return lookup
    if isinstance(ast, Neg):
        arg = compile_expr(ast.arg)
        return lambda env: -arg(env)
    if isinstance(ast, BinOp):
        lhs = compile_expr(ast.lhs)
        rhs = compile_expr(ast.rhs)
        if ast.op == "+":
            return lambda env: lhs(env) + rhs(env)
        if ast.op == "-":
            return lambda env: lhs(env) - rhs(env)
        if ast.op == "*":
            return lambda env: lhs(env) * rhs(env)
        if ast.op == "/":
            return lambda env: lhs(env) / rhs(env)
        if ast.op == "^":
            return lambda env: np.power(lhs(env), rhs(env))
        raise ValueError(f"unknown operator {ast.op!r}")
    if isinstance(ast, Call):
        impl = _FUNCTION_IMPL[ast.fn]
        args = tuple(compile_expr(a) for a in ast.args)
        if len(args) == 1:
            a0 = args[0]
            return lambda env: impl(a0(env))
        if len(args) == 2:
            a0, a1 = args
            return lambda env: impl(a0(env), a1(env))
        a0, a1, a2 = args
        return lambda env: impl(a0(env), a1(env), a2(env))
    raise TypeError(f"not an AST node: {ast!r}")


def eval_expr(ast: ExprAst, env: Mapping[str, float]) -> float:
    """Evaluate at a scalar binding.  Raises EvalError on unbound variables
    and on domain errors (the result must be finite)."""
    with np.errstate(all="ignore"):
        value = compile_expr(ast)({k: np.float64(v) for k, v in env.items()})
    value = float(value)
    if not np.isfinite(value):
        raise EvalError(f"domain error evaluating {to_string(ast)!r} at {dict(env)!r}")
    return value


def eval_on_grid(ast: ExprAst, env: Mapping[str, object]) -> np.ndarray:
    """Evaluate with array-valued bindings; non-finite entries are allowed
    here and checked by the caller (Nemytskii reports the grid location)."""
    with np.errstate(all="ignore"):
        return np.asarray(compile_expr(ast)(env), dtype=np.float64)
