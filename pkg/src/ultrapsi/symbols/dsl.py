"""Recursive-descent parser for the symbol DSL.

Grammar (EBNF)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("-" | "+") , unary | power ;
    power   = atom , [ "^" , unary ] ;            (* right associative *)
    atom    = number | "i" | ident
            | func , "(" , expr , ")"
            | bracket , "(" , ")"
            | "(" , expr , ")" ;
    func    = "exp" | "log" | "recip" ;
    bracket = "angle" | "anglex" | "anglek" ;
    ident   = ("x" | "k") , digit , { digit } ;   (* x1..xd, k1..kd *)
    number  = digit , { digit } , [ "." , { digit } ] , [ ("e"|"E") , ["+"|"-"] , digit , {digit} ] ;

``k`` stands for the covariable xi.  Exponents must fold to constants.
Integer division of literals is kept exact (``1/3`` is a Fraction).
"""
from __future__ import annotations

import re
from fractions import Fraction

from . import expr as E

__all__ = ["parse_symbol", "DSLSyntaxError", "GRAMMAR"]

GRAMMAR = __doc__

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class DSLSyntaxError(ValueError):
    """Parse failure; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        pointer = f"\n  {text}\n  {' ' * position}^" if text else ""
        super().__init__(f"{message} at position {position}{pointer}")


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise DSLSyntaxError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


def _literal(tok: str):
    if re.fullmatch(r"\d+", tok):
        return int(tok)
    return float(tok)


class _Parser:
    def __init__(self, text: str, d: int):
        self.text = text
        self.d = d
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            got = "end of input" if kind == "end" else repr(val)
            raise DSLSyntaxError(f"expected {value!r}, got {got}", pos, self.text)

    def parse(self) -> E.Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise DSLSyntaxError(f"unexpected {val!r}", pos, self.text)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = E.add(e, rhs) if op == "+" else E.add(e, E.mul(-1, rhs))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op, pos = self.take()[1], self.toks[self.i - 1][2]
            rhs = self.unary()
            if op == "*":
                e = E.mul(e, rhs)
            else:
                if E.is_zero(rhs):
                    raise DSLSyntaxError("division by zero", pos, self.text)
                if isinstance(e, E.Const) and isinstance(rhs, E.Const) and all(
                        isinstance(v.value, (int, Fraction)) for v in (e, rhs)):
                    e = E.Const(Fraction(e.value) / Fraction(rhs.value))
                else:
                    e = E.mul(e, E.power(rhs, -1))
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return E.mul(-1, self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            pos = self.take()[2]
            ex = self.unary()
            if not isinstance(ex, E.Const):
                raise DSLSyntaxError("exponent must be a constant expression", pos, self.text)
            try:
                return E.power(base, ex)
            except (ValueError, ZeroDivisionError) as err:
                raise DSLSyntaxError(str(err), pos, self.text) from None
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return E.Const(_literal(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if val == "i":
                return E.I
            if val in ("exp", "log", "recip"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if val == "recip" and E.is_zero(arg):
                    raise DSLSyntaxError("recip of zero", pos, self.text)
                return {"exp": E.exp, "log": E.log, "recip": E.recip}[val](arg)
            if val in ("angle", "anglex", "anglek"):
                self.expect("(")
                self.expect(")")
                return E.Bracket({"angle": "w", "anglex": "x", "anglek": "k"}[val])
            m = re.fullmatch(r"([xk])(\d+)", val)
            if m:
                idx = int(m.group(2))
                if idx < 1 or idx > self.d:
                    raise DSLSyntaxError(
                        f"variable {val} out of range for dimension d={self.d}", pos, self.text)
                return E.Var(m.group(1), idx - 1)
            raise DSLSyntaxError(f"unknown identifier {val!r}", pos, self.text)
        got = "end of input" if kind == "end" else repr(val)
        raise DSLSyntaxError(f"unexpected {got}", pos, self.text)


def parse_symbol(text: str, d: int = 1) -> E.Expr:
    """Parse DSL text into a normalized expression in dimension ``d``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(text, d).parse()
