"""A small arithmetic grammar for inline field definitions.

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Functions: sqrt, exp, log, sin, cos.  Compiled expressions take ``w`` indexed
by coordinate and so work on floats, sample arrays and dual numbers alike.
"""

from dataclasses import dataclass
import re

import numpy as np

from .fields import ScalarField

__all__ = ["ExpressionError", "parse", "compile_expression", "field_from_expression"]

_FUNCS = {"sqrt": np.sqrt, "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


class ExpressionError(ValueError):
    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src):
    toks = []
    line, col0 = 1, 0
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            break
        start = m.start(m.lastindex) if m.lastindex else m.end()
        # track line breaks in skipped whitespace
        for i in range(pos, start):
            if src[i] == "\n":
                line, col0 = line + 1, i + 1
        pos = m.end()
        if m.lastindex is None:
            continue
        col = start - col0 + 1
        num, name, other = m.groups()
        if num is not None:
            toks.append(_Tok("num", num, line, col))
        elif name is not None:
            toks.append(_Tok("name", name, line, col))
        elif other in "+-*/^()":
            toks.append(_Tok(other, other, line, col))
        else:
            raise ExpressionError(f"unexpected character {other!r}", line, col)
    end_col = len(src) - col0 + 1
    toks.append(_Tok("end", "", line, end_col))
    return toks


class _Parser:
    def __init__(self, src, names):
        self.toks = _tokenize(src)
        self.i = 0
        self.names = names

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        t = self.toks[self.i]
        if kind is not None and t.kind != kind:
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ExpressionError(f"expected {kind!r}, found {what}", t.line, t.col)
        self.i += 1
        return t

    def parse(self):
        node = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ExpressionError(f"unexpected {t.text!r}", t.line, t.col)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.take().kind
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek().kind == "-":
            self.take()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        t = self.peek()
        if t.kind == "num":
            self.take()
            return ("num", float(t.text))
        if t.kind == "name":
            self.take()
            if t.text in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return ("call", t.text, arg)
            if t.text not in self.names:
                raise ExpressionError(f"unknown name {t.text!r}", t.line, t.col)
            return ("var", self.names[t.text])
        if t.kind == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ExpressionError(f"unexpected {what}", t.line, t.col)


def parse(src, names):
    """Parse ``src`` into a tree; ``names`` maps variable names to indices."""
    if isinstance(names, (list, tuple)):
        names = {n: i for i, n in enumerate(names)}
    return _Parser(src, dict(names)).parse()


def _build(node):
    kind = node[0]
    if kind == "num":
        v = node[1]
        return lambda w: v
    if kind == "var":
        j = node[1]
        return lambda w: w[j]
    if kind == "neg":
        f = _build(node[1])
        return lambda w: -f(w)
    if kind == "call":
        fn, f = _FUNCS[node[1]], _build(node[2])
        return lambda w: fn(f(w))
    a, b = _build(node[1]), _build(node[2])
    if kind == "+":
        return lambda w: a(w) + b(w)
    if kind == "-":
        return lambda w: a(w) - b(w)
    if kind == "*":
        return lambda w: a(w) * b(w)
    if kind == "/":
        return lambda w: a(w) / b(w)
    if node[2][0] == "num":
        e = node[2][1]
        return lambda w: a(w) ** e
    return lambda w: a(w) ** b(w)


def compile_expression(src, names):
    return _build(parse(src, names))


def field_from_expression(src, names):
    """A :class:`ScalarField` with exact gradients from an expression string."""
    names = list(names)
    f = compile_expression(src, names)
    dim = len(names)
    # constants still need to broadcast over sample arrays
    func = lambda w: f(w) + 0.0 * w[0]
    return ScalarField.autodiff(dim, func, src)
