"""Arithmetic drift expressions over state variables ``x1 .. xd``.

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``^`` binds tighter than unary minus (``-2^2 == -4``) and is right
associative.  Expressions evaluate elementwise on numpy arrays.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..errors import ArityError, ExpressionError, ExpressionSyntaxError, UnknownIdentifier

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            offset = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[offset]!r}", offset)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, d: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.d = d

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            raise ExpressionSyntaxError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.unary())
        return node

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise UnknownIdentifier(f"unknown function {text!r} at offset {pos}")
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(f"{text} takes 1 argument, got {len(args)} (offset {pos})")
                return Call(text, args[0])
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m and int(m.group(1)) <= self.d:
                return Var(int(m.group(1)) - 1)
            if text in FUNCTIONS:
                raise ArityError(f"function {text!r} used without arguments at offset {pos}")
            raise UnknownIdentifier(f"unknown identifier {text!r} at offset {pos}")
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionSyntaxError(f"unexpected {text or 'end of input'!r}", pos)


def parse_tree(text: str, d: int) -> Node:
    return _Parser(text, d).parse()


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    return s if s[0] != "-" else f"({s})"


def to_text(node: Node) -> str:
    """Fully parenthesized rendering that parses back to the same tree."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def evaluate_tree(node: Node, X: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return X[:, node.index]
    if isinstance(node, Neg):
        return -evaluate_tree(node.operand, X)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate_tree(node.arg, X))
    a = evaluate_tree(node.left, X)
    b = evaluate_tree(node.right, X)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise ExpressionError("division by zero")
        return a / b
    base, expo = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any((base < 0) & (expo != np.round(expo))):
        raise ExpressionError("negative base raised to a non-integer power")
    if np.any((base == 0) & (expo < 0)):
        raise ExpressionError("zero raised to a negative power")
    return base ** expo


class DriftExpression:
    """A drift given by one expression per output dimension."""

    def __init__(self, texts: Sequence[str] | str, d: int | None = None):
        if isinstance(texts, str):
            texts = [texts]
        self.texts = tuple(texts)
        self.d = len(self.texts) if d is None else int(d)
        if len(self.texts) != self.d:
            raise ArityError(f"{self.d}-dimensional drift needs {self.d} expressions, got {len(self.texts)}")
        self.trees = tuple(parse_tree(t, self.d) for t in self.texts)

    def __call__(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        cols = [np.broadcast_to(np.asarray(evaluate_tree(t, X), dtype=float), (X.shape[0],))
                for t in self.trees]
        return np.stack(cols, axis=1)

    def __repr__(self):
        return f"DriftExpression({list(self.texts)!r})"


class ScalarExpression:
    """A single expression used as a scalar function of state (e.g. a variance)."""

    def __init__(self, text: str, d: int):
        self.text = text
        self.d = d
        self.tree = parse_tree(text, d)

    def __call__(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        return np.broadcast_to(np.asarray(evaluate_tree(self.tree, X), dtype=float), (X.shape[0],))


def parse_expression(text: str | Sequence[str], d: int) -> DriftExpression:
    return DriftExpression(text, d)
