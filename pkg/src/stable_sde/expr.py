"""Expression language for matrix-field entries.

Grammar (standard precedence, left-associative binary operators)::

    expr   := term (('+' | '-') term)*
    term   := unary ('*' unary)*
    unary  := '-' unary | '+' unary | atom
    atom   := NUMBER | VAR | FUNC '(' expr (',' expr)* ')' | '(' expr ')'
    VAR    := 'x' DIGITS            (x1, x2, ...; 1-based)
    FUNC   := sin | cos | exp | abs | min | max

Division and powers are rejected: every expression is a composition of
continuous primitives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "abs": 1, "min": 2, "max": 2}


class ExpressionError(ValueError):
    """Raised for malformed entry expressions; carries the character offset."""

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at position {position}"
            if text is not None:
                message += f"\n  {text}\n  {' ' * position}^"
        super().__init__(message)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*'
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, dimension: int | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.dimension = dimension

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, tok, pos = self.take()
        if tok != value:
            found = "end of input" if kind == "end" else repr(tok)
            raise ExpressionError(f"expected {value!r}, found {found}", pos, self.text)

    def fail_on_forbidden(self, tok, pos):
        if tok == "/":
            raise ExpressionError("division is not permitted in entry expressions", pos, self.text)
        if tok == "^":
            raise ExpressionError("powers are not permitted in entry expressions", pos, self.text)

    def parse(self) -> Node:
        node = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            self.fail_on_forbidden(tok, pos)
            raise ExpressionError(f"unexpected token {tok!r}", pos, self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            _, tok, pos = self.peek()
            if tok == "*":
                self.take()
                node = BinOp("*", node, self.unary())
            else:
                self.fail_on_forbidden(tok, pos)
                return node

    def unary(self) -> Node:
        tok = self.peek()[1]
        if tok == "-":
            self.take()
            return Neg(self.unary())
        if tok == "+":
            self.take()
            return self.unary()
        return self.atom()

    def atom(self) -> Node:
        kind, tok, pos = self.take()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok]:
                    raise ExpressionError(
                        f"{tok} takes {FUNCTIONS[tok]} argument(s), got {len(args)}", pos, self.text)
                return Call(tok, tuple(args))
            m = re.fullmatch(r"x([1-9]\d*)", tok)
            if m:
                index = int(m.group(1))
                if self.dimension is not None and index > self.dimension:
                    raise ExpressionError(
                        f"variable {tok} exceeds dimension {self.dimension}", pos, self.text)
                return Var(index)
            raise ExpressionError(f"unknown identifier {tok!r}", pos, self.text)
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", pos, self.text)
        self.fail_on_forbidden(tok, pos)
        raise ExpressionError(f"unexpected token {tok!r}", pos, self.text)


def parse_entry_expression(text: str, dimension: int | None = None) -> Node:
    """Parse one matrix entry. ``dimension`` bounds the admissible variables."""
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text, dimension).parse()


def to_text(node: Node) -> str:
    """Fully parenthesized rendering; parsing it gives back an equal tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


_NP_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs,
             "min": np.minimum, "max": np.maximum}


def evaluate(node: Node, x) -> np.ndarray | float:
    """Evaluate at ``x``; the last axis of ``x`` indexes the variables."""
    x = np.asarray(x, dtype=float)
    if isinstance(node, Num):
        return node.value if x.ndim <= 1 else np.full(x.shape[:-1], node.value)
    if isinstance(node, Var):
        return x[..., node.index - 1]
    if isinstance(node, Neg):
        return -evaluate(node.operand, x)
    if isinstance(node, BinOp):
        a, b = evaluate(node.left, x), evaluate(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        return a * b
    if isinstance(node, Call):
        return _NP_FUNCS[node.name](*(evaluate(a, x) for a in node.args))
    raise TypeError(f"not an expression node: {node!r}")


def variables(node: Node) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    return set().union(*(variables(a) for a in node.args))


def substitute_scaled(node: Node, factor: float) -> Node:
    """Replace every ``xi`` by ``xi * factor``."""
    if isinstance(node, Var):
        return BinOp("*", node, Num(factor))
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return Neg(substitute_scaled(node.operand, factor))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute_scaled(node.left, factor),
                     substitute_scaled(node.right, factor))
    return Call(node.name, tuple(substitute_scaled(a, factor) for a in node.args))


# --- postfix bytecode for the numba evaluator --------------------------------

OP_CONST, OP_VAR, OP_NEG, OP_ADD, OP_SUB, OP_MUL = 0, 1, 2, 3, 4, 5
OP_SIN, OP_COS, OP_EXP, OP_ABS, OP_MIN, OP_MAX = 6, 7, 8, 9, 10, 11

_BIN_CODES = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL}
_CALL_CODES = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "abs": OP_ABS,
               "min": OP_MIN, "max": OP_MAX}


def compile_postfix(node: Node) -> tuple[list[int], list[float], int]:
    """Opcodes, operands and the stack depth needed to evaluate ``node``."""
    ops: list[int] = []
    args: list[float] = []

    def emit(n: Node) -> int:
        if isinstance(n, Num):
            ops.append(OP_CONST)
            args.append(n.value)
            return 1
        if isinstance(n, Var):
            ops.append(OP_VAR)
            args.append(float(n.index - 1))
            return 1
        if isinstance(n, Neg):
            depth = emit(n.operand)
            ops.append(OP_NEG)
            args.append(0.0)
            return depth
        if isinstance(n, BinOp):
            depth = max(emit(n.left), 1 + emit(n.right))
            ops.append(_BIN_CODES[n.op])
            args.append(0.0)
            return depth
        depth = 0
        for k, a in enumerate(n.args):
            depth = max(depth, k + emit(a))
        ops.append(_CALL_CODES[n.name])
        args.append(0.0)
        return depth

    depth = emit(node)
    return ops, args, depth
