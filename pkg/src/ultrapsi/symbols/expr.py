"""Immutable, hash-consed expression trees for phase-space symbols a(x, xi).

Nodes are interned: structurally equal expressions are the *same* object,
so ``==`` is identity and subexpressions are shared automatically.  The
constructors (:func:`add`, :func:`mul`, :func:`power`, ...) apply only
constant folding and flat sum/product normalization; there is no expansion.

Variables are ``x1..xd`` (kind ``"x"``) and ``k1..kd`` (kind ``"k"``, the
covariable xi).  Brackets are ``<(x,xi)> = (1 + |x|^2 + |xi|^2)^(1/2)``,
``<x>`` and ``<xi>``.
"""
from __future__ import annotations

import hashlib
import math
import struct
import weakref
from fractions import Fraction
from numbers import Number
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "Exp", "Log", "Bracket",
    "const", "var", "xvar", "kvar", "add", "mul", "power", "recip", "exp", "log",
    "bracket", "ZERO", "ONE", "I", "diff", "differentiate", "evaluate",
    "evaluate_many", "node_count", "dimension", "SymbolEvaluationError",
    "OrderCapExceeded", "to_text", "is_zero",
]

DEFAULT_ORDER_CAP = 12


class SymbolEvaluationError(ArithmeticError):
    """Non-finite value while evaluating a symbol; carries the offending point."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class OrderCapExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# numbers


def _num(v):
    """Normalize a numeric constant: exact types where possible."""
    if isinstance(v, bool):
        v = int(v)
    if isinstance(v, complex) or isinstance(v, np.complexfloating):
        v = complex(v)
        if v.imag == 0:
            v = v.real
        else:
            if math.isnan(v.real) or math.isnan(v.imag) or math.isinf(v.real) or math.isinf(v.imag):
                raise ValueError(f"non-finite constant {v}")
            return v
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"non-finite constant {v}")
    if v.is_integer() and abs(v) < 2 ** 53:
        return int(v)
    return v


def _is_int(v) -> bool:
    return isinstance(v, int)


def _cpow(base, e):
    if isinstance(base, (int, Fraction)) and _is_int(e):
        if base == 0 and e < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return Fraction(base) ** e
    if isinstance(base, complex) or (isinstance(base, (int, float, Fraction)) and base < 0 and not _is_int(e)):
        return complex(base) ** e
    return float(base) ** float(e) if not _is_int(e) else float(base) ** e


# ---------------------------------------------------------------------------
# nodes

_INTERN: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()

_RANK = {"Const": 0, "Var": 1, "Bracket": 2, "Pow": 3, "Exp": 4, "Log": 5, "Mul": 6, "Add": 7}


def _digest(*parts: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p)
        h.update(b"|")
    return h.digest()


def _num_bytes(v) -> bytes:
    if isinstance(v, complex):
        return b"c" + struct.pack("<dd", v.real, v.imag)
    if isinstance(v, Fraction):
        return b"f" + f"{v.numerator}/{v.denominator}".encode()
    if isinstance(v, int):
        # ints and equal floats intern to one node; digest must agree
        return b"r" + struct.pack("<d", float(v)) if abs(v) < 2 ** 53 else b"i" + str(v).encode()
    return b"r" + struct.pack("<d", v)


class Expr:
    """Base class of all expression nodes (never instantiate directly)."""

    __slots__ = ("_digest", "_hash", "_dcache", "__weakref__")

    def _init(self, digest: bytes):
        self._digest = digest
        self._hash = int.from_bytes(digest, "little", signed=True)
        self._dcache = {}

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    @property
    def sort_key(self):
        return (_RANK[type(self).__name__], self._digest)

    def children(self) -> tuple["Expr", ...]:
        return ()

    # operator sugar -------------------------------------------------------
    def __add__(self, o):
        return add(self, _wrap(o))

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, mul(-1, _wrap(o)))

    def __rsub__(self, o):
        return add(_wrap(o), mul(-1, self))

    def __mul__(self, o):
        return mul(self, _wrap(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, power(_wrap(o), -1))

    def __rtruediv__(self, o):
        return mul(_wrap(o), power(self, -1))

    def __neg__(self):
        return mul(-1, self)

    def __pow__(self, e):
        return power(self, e)

    def __repr__(self):
        text = to_text(self)
        if len(text) > 200:
            text = text[:197] + "..."
        return f"<{type(self).__name__} {text}>"

    def __str__(self):
        return to_text(self)

    def __reduce__(self):
        from .dsl import parse_symbol
        return (parse_symbol, (to_text(self), max(dimension(self), 1)))


def _intern(cls, key: tuple, digest: bytes, init):
    full = (cls.__name__,) + key
    node = _INTERN.get(full)
    if node is None:
        node = object.__new__(cls)
        node._init(digest)
        init(node)
        _INTERN[full] = node
    return node


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value):
        v = _num(value)

        def init(n):
            n.value = v
        return _intern(cls, (v,), _digest(b"C", _num_bytes(v)), init)


class Var(Expr):
    __slots__ = ("kind", "index")

    def __new__(cls, kind: str, index: int):
        if kind not in ("x", "k"):
            raise ValueError("variable kind must be 'x' or 'k'")

        def init(n):
            n.kind = kind
            n.index = int(index)
        return _intern(cls, (kind, int(index)), _digest(b"V", kind.encode(), str(index).encode()), init)

    @property
    def sort_key(self):
        return (1, self.kind != "x", self.index)


class Bracket(Expr):
    """Japanese bracket; kind ``"w"`` joint, ``"x"`` spatial, ``"k"`` covariable."""

    __slots__ = ("kind",)

    def __new__(cls, kind: str = "w"):
        if kind not in ("w", "x", "k"):
            raise ValueError("bracket kind must be 'w', 'x' or 'k'")

        def init(n):
            n.kind = kind
        return _intern(cls, (kind,), _digest(b"B", kind.encode()), init)

    @property
    def sort_key(self):
        return (2, "wxk".index(self.kind))


class Add(Expr):
    __slots__ = ("terms",)

    def __new__(cls, terms: tuple):
        def init(n):
            n.terms = terms
        return _intern(cls, terms, _digest(b"A", *(t._digest for t in terms)), init)

    def children(self):
        return self.terms


class Mul(Expr):
    """coeff * prod(factors); factors are non-constant, non-Mul nodes."""

    __slots__ = ("coeff", "factors")

    def __new__(cls, coeff, factors: tuple):
        c = _num(coeff)

        def init(n):
            n.coeff = c
            n.factors = factors
        return _intern(cls, (c,) + factors,
                       _digest(b"M", _num_bytes(c), *(f._digest for f in factors)), init)

    def children(self):
        return self.factors


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __new__(cls, base: Expr, exponent):
        e = _num(exponent)

        def init(n):
            n.base = base
            n.exponent = e
        return _intern(cls, (base, e), _digest(b"P", base._digest, _num_bytes(e)), init)

    def children(self):
        return (self.base,)


class Exp(Expr):
    __slots__ = ("arg",)

    def __new__(cls, arg: Expr):
        def init(n):
            n.arg = arg
        return _intern(cls, (arg,), _digest(b"E", arg._digest), init)

    def children(self):
        return (self.arg,)


class Log(Expr):
    __slots__ = ("arg",)

    def __new__(cls, arg: Expr):
        def init(n):
            n.arg = arg
        return _intern(cls, (arg,), _digest(b"L", arg._digest), init)

    def children(self):
        return (self.arg,)


# ---------------------------------------------------------------------------
# constructors with normalization


def _wrap(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (Number, Fraction)):
        return Const(v)
    raise TypeError(f"cannot use {type(v).__name__} in a symbol expression")


def const(v) -> Const:
    return Const(v)


def var(kind: str, index: int) -> Var:
    return Var(kind, index)


def xvar(index: int) -> Var:
    return Var("x", index)


def kvar(index: int) -> Var:
    return Var("k", index)


def bracket(kind: str = "w") -> Bracket:
    return Bracket(kind)


ZERO = Const(0)
ONE = Const(1)
I = Const(1j)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0


def _split_coeff(e: Expr):
    """term -> (coefficient, rest) with rest None for a pure constant."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Mul):
        if len(e.factors) == 1:
            return e.coeff, e.factors[0]
        return e.coeff, Mul(1, e.factors)
    return 1, e


def add(*terms) -> Expr:
    const_sum = 0
    coeffs: dict[Expr, object] = {}
    order: list[Expr] = []
    stack = [_wrap(t) for t in terms]
    flat: list[Expr] = []
    while stack:
        t = stack.pop()
        if isinstance(t, Add):
            stack.extend(t.terms)
        else:
            flat.append(t)
    for t in flat:
        c, rest = _split_coeff(t)
        if rest is None:
            const_sum = _num(const_sum + c)
            continue
        if rest in coeffs:
            coeffs[rest] = _num(coeffs[rest] + c)
        else:
            coeffs[rest] = c
            order.append(rest)
    out = []
    for rest in order:
        c = coeffs[rest]
        if c == 0:
            continue
        out.append(mul(c, rest))
    if const_sum != 0:
        out.append(Const(const_sum))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    out.sort(key=lambda e: e.sort_key)
    return Add(tuple(out))


def _base_exp(f: Expr):
    if isinstance(f, Pow):
        return f.base, f.exponent
    return f, 1


def mul(*factors) -> Expr:
    coeff = 1
    exps: dict[Expr, object] = {}
    order: list[Expr] = []
    stack = [_wrap(f) for f in factors]
    while stack:
        f = stack.pop()
        if isinstance(f, Const):
            coeff = _num(coeff * f.value)
            continue
        if isinstance(f, Mul):
            coeff = _num(coeff * f.coeff)
            stack.extend(f.factors)
            continue
        b, e = _base_exp(f)
        if b in exps:
            exps[b] = _num(exps[b] + e)
        else:
            exps[b] = e
            order.append(b)
    if coeff == 0:
        return ZERO
    out = []
    for b in order:
        e = exps[b]
        if e == 0:
            continue
        f = power(b, e)
        if isinstance(f, Const):
            coeff = _num(coeff * f.value)
        elif isinstance(f, Mul):
            coeff = _num(coeff * f.coeff)
            out.extend(f.factors)
        else:
            out.append(f)
    if not out:
        return Const(coeff)
    if coeff == 1 and len(out) == 1:
        return out[0]
    out.sort(key=lambda e: e.sort_key)
    return Mul(coeff, tuple(out))


def power(base, exponent) -> Expr:
    base = _wrap(base)
    if isinstance(exponent, Expr):
        if not isinstance(exponent, Const):
            raise ValueError("exponents must be constant; use exp(log(u) * v)")
        exponent = exponent.value
    e = _num(exponent)
    if isinstance(e, complex):
        raise ValueError("complex exponents are not supported")
    if e == 0:
        return ONE
    if e == 1:
        return base
    if isinstance(base, Const):
        return Const(_cpow(base.value, e))
    if isinstance(base, Pow) and _is_int(e):
        return power(base.base, _num(base.exponent * e))
    if isinstance(base, Mul) and _is_int(e):
        return mul(Const(_cpow(base.coeff, e)), *(power(f, e) for f in base.factors))
    return Pow(base, e)


def recip(e) -> Expr:
    return power(e, -1)


def exp(e) -> Expr:
    e = _wrap(e)
    if isinstance(e, Const):
        return Const(np.exp(complex(e.value)) if isinstance(e.value, complex) else math.exp(e.value))
    if isinstance(e, Log):
        return e.arg
    return Exp(e)


def log(e) -> Expr:
    e = _wrap(e)
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, complex) or v <= 0:
            return Const(np.log(complex(v)))
        return Const(math.log(v))
    return Log(e)


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, v: Var) -> Expr:
    """Exact partial derivative with respect to one variable (cached)."""
    cached = e._dcache.get(v)
    if cached is not None:
        return cached
    out = _diff(e, v)
    e._dcache[v] = out
    return out


def _diff(e: Expr, v: Var) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e is v else ZERO
    if isinstance(e, Bracket):
        if e.kind == "w" or e.kind == v.kind:
            return mul(v, power(e, -1))
        return ZERO
    if isinstance(e, Add):
        return add(*(diff(t, v) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = diff(f, v)
            if is_zero(df):
                continue
            parts.append(mul(e.coeff, df, *fs[:i], *fs[i + 1:]))
        return add(*parts)
    if isinstance(e, Pow):
        db = diff(e.base, v)
        if is_zero(db):
            return ZERO
        return mul(e.exponent, power(e.base, _num(e.exponent - 1)), db)
    if isinstance(e, Exp):
        du = diff(e.arg, v)
        return ZERO if is_zero(du) else mul(e, du)
    if isinstance(e, Log):
        du = diff(e.arg, v)
        return ZERO if is_zero(du) else mul(du, power(e.arg, -1))
    raise TypeError(f"unknown node {type(e).__name__}")


def differentiate(a: Expr, alpha: Sequence[int] = (), beta: Sequence[int] = (),
                  convention: str = "partial", order_cap: int = DEFAULT_ORDER_CAP) -> Expr:
    """D_xi^alpha D_x^beta a (``convention="D"``) or the plain partials.

    ``alpha`` acts on the covariables k1..kd, ``beta`` on x1..xd.  With the
    D convention the factor (-i)^(|alpha|+|beta|) is applied here, once.
    """
    n = sum(alpha) + sum(beta)
    if n > order_cap:
        raise OrderCapExceeded(f"derivative order {n} exceeds the cap {order_cap}")
    if convention not in ("partial", "D"):
        raise ValueError("convention must be 'partial' or 'D'")
    out = a
    for i, k in enumerate(alpha):
        for _ in range(k):
            out = diff(out, Var("k", i))
    for i, k in enumerate(beta):
        for _ in range(k):
            out = diff(out, Var("x", i))
    if convention == "D" and n:
        out = mul(Const((-1j) ** n), out)
    return out


# ---------------------------------------------------------------------------
# traversal and evaluation


def _postorder(roots: Iterable[Expr]) -> list[Expr]:
    seen: set[int] = set()
    order: list[Expr] = []
    for r in roots:
        if id(r) in seen:
            continue
        stack = [(r, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for c in node.children():
                if id(c) not in seen:
                    stack.append((c, False))
    return order


def node_count(*roots: Expr) -> int:
    """Number of distinct nodes in the DAG spanned by ``roots``."""
    return len(_postorder(roots))


def dimension(e: Expr) -> int:
    """Smallest d compatible with the variables occurring in ``e``."""
    d = 0
    for n in _postorder([e]):
        if isinstance(n, Var):
            d = max(d, n.index + 1)
    return d


def _as_points(x, k):
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
        k = k.reshape(1)
    if x.shape != k.shape:
        raise ValueError(f"x and k must have the same shape, got {x.shape} and {k.shape}")
    return x, k


def evaluate_many(roots: Sequence[Expr], x, k, check: bool = True) -> list[np.ndarray]:
    """Evaluate several expressions on shared points, reusing common nodes.

    ``x`` and ``k`` have shape ``(d, ...)``; the result arrays have shape
    ``(...)``.  A 1-d input of length d is a single point.
    """
    x, k = _as_points(x, k)
    shape = x.shape[1:]
    d = x.shape[0]
    vals: dict[int, np.ndarray] = {}
    sq_x = sq_k = None
    for n in _postorder(roots):
        if isinstance(n, Const):
            v = np.full(shape, complex(n.value))
        elif isinstance(n, Var):
            if n.index >= d:
                raise ValueError(f"variable {to_text(n)} needs dimension > {d}")
            v = (x if n.kind == "x" else k)[n.index].astype(complex)
        elif isinstance(n, Bracket):
            if sq_x is None:
                sq_x = np.sum(x * x, axis=0)
                sq_k = np.sum(k * k, axis=0)
            r = 1.0 + (sq_x + sq_k if n.kind == "w" else sq_x if n.kind == "x" else sq_k)
            v = np.sqrt(r).astype(complex)
        elif isinstance(n, Add):
            v = vals[id(n.terms[0])].copy()
            for t in n.terms[1:]:
                v += vals[id(t)]
        elif isinstance(n, Mul):
            v = complex(n.coeff) * vals[id(n.factors[0])]
            for f in n.factors[1:]:
                v = v * vals[id(f)]
        elif isinstance(n, Pow):
            b = vals[id(n.base)]
            e = n.exponent
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                if _is_int(e):
                    v = b ** e if e > 0 else 1.0 / (b ** (-e))
                elif isinstance(n.base, Bracket):
                    v = (b.real ** float(e)).astype(complex)
                else:
                    v = np.power(b, float(e))
        elif isinstance(n, Exp):
            with np.errstate(over="ignore", invalid="ignore"):
                v = np.exp(vals[id(n.arg)])
        elif isinstance(n, Log):
            with np.errstate(divide="ignore", invalid="ignore"):
                v = np.log(vals[id(n.arg)])
        else:
            raise TypeError(type(n).__name__)
        vals[id(n)] = v
    out = [vals[id(r)] for r in roots]
    if check:
        for r, v in zip(roots, out):
            bad = ~np.isfinite(v)
            if np.any(bad):
                idx = np.unravel_index(np.argmax(bad), bad.shape) if bad.ndim else ()
                pt = {"x": x[(slice(None),) + idx].tolist(), "k": k[(slice(None),) + idx].tolist()}
                raise SymbolEvaluationError(
                    f"non-finite value of {to_text(r)[:80]} at x={pt['x']}, k={pt['k']}", pt)
    return out


def evaluate(e: Expr, x, k, check: bool = True) -> np.ndarray:
    """Evaluate ``e`` at points; see :func:`evaluate_many`."""
    return evaluate_many([e], x, k, check=check)[0]


# ---------------------------------------------------------------------------
# printing (the DSL's canonical form; parse(to_text(e)) is e)

_P_ADD, _P_MUL, _P_NEG, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


def _fmt_real(v) -> tuple[str, int]:
    if isinstance(v, Fraction):
        return f"({v.numerator}/{v.denominator})", _P_ATOM
    if isinstance(v, int):
        return (str(v), _P_ATOM) if v >= 0 else (str(v), _P_NEG)
    s = repr(float(v))
    return (s, _P_ATOM) if v >= 0 else (s, _P_NEG)


def _fmt_const(v) -> tuple[str, int]:
    if isinstance(v, complex):
        re_, im = _num(v.real), _num(v.imag)
        ims = "i" if im == 1 else "-i" if im == -1 else f"{_fmt_real(im)[0]}*i"
        if re_ == 0:
            return ims, (_P_NEG if ims.startswith("-") else _P_MUL if "*" in ims else _P_ATOM)
        sign = " - " if ims.startswith("-") else " + "
        return f"({_fmt_real(re_)[0]}{sign}{ims.lstrip('-')})", _P_ATOM
    return _fmt_real(v)


def _paren(s: tuple[str, int], need: int) -> str:
    return s[0] if s[1] >= need else f"({s[0]})"


def to_text(e: Expr) -> str:
    """Print an expression in the DSL grammar."""
    memo: dict[int, tuple[str, int]] = {}
    for n in _postorder([e]):
        memo[id(n)] = _fmt_node(n, memo)
    return memo[id(e)][0]


def _is_negative_real(c) -> bool:
    return not isinstance(c, complex) and c < 0


def _fmt_node(n: Expr, memo) -> tuple[str, int]:
    if isinstance(n, Const):
        return _fmt_const(n.value)
    if isinstance(n, Var):
        return f"{n.kind}{n.index + 1}", _P_ATOM
    if isinstance(n, Bracket):
        return {"w": "angle()", "x": "anglex()", "k": "anglek()"}[n.kind], _P_ATOM
    if isinstance(n, Exp):
        return f"exp({memo[id(n.arg)][0]})", _P_ATOM
    if isinstance(n, Log):
        return f"log({memo[id(n.arg)][0]})", _P_ATOM
    if isinstance(n, Pow):
        b = memo[id(n.base)]
        if n.exponent == -1:
            return f"recip({b[0]})", _P_ATOM
        ex = _fmt_real(n.exponent)
        return f"{_paren(b, _P_ATOM)}^{_paren(ex, _P_ATOM)}", _P_POW
    if isinstance(n, Mul):
        body = "*".join(_paren(memo[id(f)], _P_POW) for f in n.factors)
        c = n.coeff
        if c == 1:
            return body, _P_MUL
        if c == -1:
            return f"-{body}", _P_NEG
        if _is_negative_real(c):
            return f"-{_paren(_fmt_const(-c), _P_POW)}*{body}", _P_NEG
        return f"{_paren(_fmt_const(c), _P_POW)}*{body}", _P_MUL
    if isinstance(n, Add):
        parts = []
        for i, t in enumerate(n.terms):
            c, rest = _split_coeff(t)
            if i > 0 and _is_negative_real(c):
                neg = mul(-c, rest) if rest is not None else Const(-c)
                s = memo.get(id(neg)) or _fmt_tree(neg)
                parts.append(" - " + _paren(s, _P_MUL))
            else:
                s = memo[id(t)]
                parts.append((" + " if i else "") + _paren(s, _P_NEG if i == 0 else _P_MUL))
        return "".join(parts), _P_ADD
    raise TypeError(type(n).__name__)


def _fmt_tree(e: Expr) -> tuple[str, int]:
    memo: dict[int, tuple[str, int]] = {}
    for n in _postorder([e]):
        memo[id(n)] = _fmt_node(n, memo)
    return memo[id(e)]
