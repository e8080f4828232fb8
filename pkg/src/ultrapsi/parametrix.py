"""Left-parametrix terms, the composition expansion, formal sums and their
finite truncation with smooth excision cutoffs.

The terms are

    p_0 = 1 / a,
    p_j = -p_0 * sum_{0 < |nu| <= j} (1/nu!) d_xi^nu p_{j-|nu|} * D_x^nu a,

and the composition of a left symbol b ~ sum p_s with a has the terms

    c_j = sum_{s + l = j} sum_{|nu| = l} (1/nu!) d_xi^nu p_s * D_x^nu a,

so c_0 = 1 and c_j = 0 (j >= 1) wherever a does not vanish.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .reports import FitReport
from .symbols import expr as E
from .symbols.classes import (BoxGrid, derivative_pairs, log_weight, q_region,
                              radial_slopes, RADIAL_SLOPE_TOL, _log_abs, _log_bracket)
from .symbols.dsl import parse_symbol
from .weights import WeightSequence, parse_sequence

__all__ = [
    "FormalSymbolSum", "CutoffSpec", "TruncatedSymbol", "ExpressionBudgetExceeded",
    "parametrix_terms", "composition_expansion", "composition_terms",
    "truncate_with_cutoffs", "check_fs_membership", "check_equivalence",
    "remainder_ray_slopes", "optimal_truncation", "multi_indices",
]

DEFAULT_BUDGET = 500_000
# log-log slope allowed for |D p_j| <w>^{rho(n+2j)} / |p_0| before a term is
# flagged as carrying more growth than its order permits
POLY_SLOPE_TOL = 0.5


class ExpressionBudgetExceeded(RuntimeError):
    def __init__(self, message: str, reached: int):
        super().__init__(message)
        self.reached = reached


def multi_indices(d: int, order: int):
    """Multi-indices nu in N^d with |nu| = order."""
    for nu in itertools.product(range(order + 1), repeat=d):
        if sum(nu) == order:
            yield nu


def _inv_factorial(nu: Sequence[int]) -> Fraction:
    return Fraction(1, math.prod(math.factorial(v) for v in nu))


@dataclass
class FormalSymbolSum:
    """Ordered terms p_0..p_J, term j trusted on Q^c_{B m_j}.

    ``M`` supplies m_j = M_j / M_{j-1} (m_0 = 0) for the domain radii, ``A``
    and ``rho`` the weights of the formal-sum seminorm.
    """

    terms: list[E.Expr]
    d: int = 1
    B: float = 1.0
    M: WeightSequence | None = None
    A: WeightSequence | None = None
    rho: float = 1.0
    symbol: E.Expr | None = None
    meta: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return len(self.terms) - 1

    def radius(self, j: int) -> float:
        """Domain radius B m_j of term j."""
        if self.M is None:
            return 0.0 if j == 0 else self.B
        return self.B * (0.0 if j == 0 else self.M.ratio(j))

    def trusted(self, j: int, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        return q_region(x, k, self.radius(j))

    def to_json(self) -> dict:
        return {
            "d": self.d, "J": self.J, "B": self.B, "rho": self.rho,
            "M": self.meta.get("M"), "A": self.meta.get("A"),
            "symbol": E.to_text(self.symbol) if self.symbol is not None else None,
            "terms": [E.to_text(t) for t in self.terms],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FormalSymbolSum":
        d = int(data["d"])
        M = parse_sequence(data["M"]) if data.get("M") else None
        A = parse_sequence(data["A"]) if data.get("A") else None
        symbol = parse_symbol(data["symbol"], d) if data.get("symbol") else None
        return cls(terms=[parse_symbol(t, d) for t in data["terms"]], d=d,
                   B=float(data.get("B", 1.0)), M=M, A=A, rho=float(data.get("rho", 1.0)),
                   symbol=symbol, meta={"M": data.get("M"), "A": data.get("A")})

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "FormalSymbolSum":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def parametrix_terms(a: E.Expr, J: int, d: int | None = None, B: float = 1.0,
                     M: WeightSequence | None = None, A: WeightSequence | None = None,
                     rho: float = 1.0, budget: int = DEFAULT_BUDGET,
                     meta: dict | None = None) -> FormalSymbolSum:
    """Build p_0..p_J for the symbol ``a`` (left parametrix recursion)."""
    if J < 0:
        raise ValueError("J must be >= 0")
    d = max(E.dimension(a), 1) if d is None else d
    p = [E.recip(a)]
    # D_x^nu a is reused by every p_j
    dxa: dict[tuple, E.Expr] = {}
    for j in range(1, J + 1):
        parts = []
        for order in range(1, j + 1):
            for nu in multi_indices(d, order):
                if nu not in dxa:
                    dxa[nu] = E.differentiate(a, (), nu, "D", order_cap=max(J, 1) + 8)
                if E.is_zero(dxa[nu]):
                    continue
                dk = E.differentiate(p[j - order], nu, (), "partial", order_cap=J + 8)
                if E.is_zero(dk):
                    continue
                parts.append(E.mul(E.Const(_inv_factorial(nu)), dk, dxa[nu]))
        pj = E.mul(-1, p[0], E.add(*parts))
        p.append(pj)
        size = E.node_count(*p)
        if size > budget:
            raise ExpressionBudgetExceeded(
                f"expression budget {budget} exceeded while building p_{j} ({size} nodes)", j - 1)
    return FormalSymbolSum(terms=p, d=d, B=B, M=M, A=A, rho=rho, symbol=a, meta=meta or {})


def composition_expansion(left: Sequence[E.Expr], right: Sequence[E.Expr], J: int,
                          d: int) -> list[E.Expr]:
    """Terms c_0..c_J of the symbol of a(x,D) b(x,D) for a ~ sum left_s and
    b ~ sum right_k:  c_j = sum_{s+k+l=j} sum_{|alpha|=l} (1/alpha!)
    d_xi^alpha left_s D_x^alpha right_k (missing terms count as zero)."""
    out = []
    for j in range(J + 1):
        parts = []
        for s in range(min(j, len(left) - 1) + 1):
            for kk in range(min(j - s, len(right) - 1) + 1):
                l = j - s - kk
                for al in multi_indices(d, l):
                    dx = E.differentiate(right[kk], (), al, "D", order_cap=J + 8)
                    if E.is_zero(dx):
                        continue
                    dk = E.differentiate(left[s], al, (), "partial", order_cap=J + 8)
                    parts.append(E.mul(E.Const(_inv_factorial(al)), dk, dx))
        out.append(E.add(*parts))
    return out


def composition_terms(p: FormalSymbolSum, a: E.Expr, J: int) -> list[E.Expr]:
    """c_0..c_J for b(x,D) a(x,D) with b ~ sum p_s."""
    if len(p.terms) < J + 1:
        raise ValueError(f"need {J + 1} parametrix terms, have {len(p.terms)}")
    return composition_expansion(p.terms[: J + 1], [a], J, p.d)


# ---------------------------------------------------------------------------
# cutoffs and truncation


def _smooth_step(t: np.ndarray, q: float = 1.0) -> np.ndarray:
    """C^infinity monotone step built from exp(-1/t^q): 0 for t <= 0, 1 for
    t >= 1.  The profile is Gevrey of order 1 + 1/q."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / t ** q), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / (1.0 - t) ** q), 0.0)
        out = f / (f + g)
    return np.where(t >= 1, 1.0, np.where(t <= 0, 0.0, out))


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff chi_j of <(x,xi)>: 0 below ``radii[j]``, 1 above ``ratio * radii[j]``.

    ``sharpness`` is the exponent q of the exp(-1/t^q) transition profile.
    """

    radii: tuple[float, ...]
    ratio: float = 2.0
    sharpness: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if self.sharpness <= 0:
            raise ValueError("profile sharpness must be positive")
        if self.ratio <= 1:
            raise ValueError("outer/inner ratio must exceed 1")
        if any(r <= 0 for r in self.radii):
            raise ValueError("cutoff radii must be positive")

    @classmethod
    def default(cls, p: FormalSymbolSum, N: int | None = None, safety: float = 2.0,
                ratio: float = 2.0, sharpness: float = 1.0) -> "CutoffSpec":
        N = len(p.terms) if N is None else N
        ms = [1.0 if (j == 0 or p.M is None) else max(p.M.ratio(j), 1.0) for j in range(N)]
        return cls(tuple(max(p.B, 1.0) * m * safety for m in ms), ratio, sharpness)

    @classmethod
    def scaled(cls, p: FormalSymbolSum, N: int | None = None, r0: float = 0.5,
               ratio: float = 2.0, sharpness: float = 1.0) -> "CutoffSpec":
        """Radii r_0 = ``r0`` and r_j = max(B m_j, r0): each term switched on
        exactly at its own domain radius."""
        N = len(p.terms) if N is None else N
        return cls(tuple([r0] + [max(p.radius(j), r0) for j in range(1, N)])[:max(N, 1)],
                   ratio, sharpness)

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "ratio": self.ratio, "sharpness": self.sharpness}

    def inner(self, j: int) -> float:
        return self.radii[j]

    def outer(self, j: int) -> float:
        return self.ratio * self.radii[j]

    def chi(self, j: int, bracket: np.ndarray) -> np.ndarray:
        return _smooth_step((bracket - self.inner(j)) / (self.outer(j) - self.inner(j)), self.sharpness)


@dataclass
class TruncatedSymbol:
    """b_N = sum_{j<N} chi_j p_j, evaluable on all of R^{2d}."""

    p: FormalSymbolSum
    N: int
    cut: CutoffSpec

    @property
    def far_radius(self) -> float:
        """On <w> >= far_radius every chi_j (j < N) is identically one."""
        return max((self.cut.outer(j) for j in range(self.N)), default=0.0)

    def partial_sum(self) -> E.Expr:
        return E.add(*self.p.terms[: self.N]) if self.N else E.ZERO

    def evaluate(self, x, k) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.asarray(k, dtype=float)
        br = np.sqrt(1.0 + np.sum(x * x, axis=0) + np.sum(k * k, axis=0))
        out = np.zeros(br.shape, dtype=complex)
        for j in range(self.N):
            chi = self.cut.chi(j, br)
            live = chi > 0
            if not live.any():
                continue
            v = E.evaluate(self.p.terms[j], x[:, live], k[:, live])
            out[live] += chi[live] * v
        return out

    __call__ = evaluate


def truncate_with_cutoffs(p: FormalSymbolSum, N: int, cut: CutoffSpec | None = None) -> TruncatedSymbol:
    """Finite truncation b_N of the formal sum with excision cutoffs."""
    if not 0 <= N <= len(p.terms):
        raise ValueError(f"N must lie in [0, {len(p.terms)}]")
    cut = CutoffSpec.default(p, N) if cut is None else cut
    if len(cut.radii) < N:
        raise ValueError("cutoff spec has fewer radii than truncation order")
    for j in range(N):
        if cut.inner(j) < p.radius(j):
            raise ValueError(f"cutoff radius {cut.inner(j)} below the domain radius "
                             f"B m_{j} = {p.radius(j)}")
    return TruncatedSymbol(p, N, cut)


def optimal_truncation(p: FormalSymbolSum, x, k) -> np.ndarray:
    """argmin_j |p_j(w)| per point (diagnostic for choosing N)."""
    vals = np.abs(np.stack(E.evaluate_many(p.terms, x, k)))
    return np.argmin(vals, axis=0)


# ---------------------------------------------------------------------------
# seminorm checks


def _require_class(p: FormalSymbolSum):
    if p.M is None or p.A is None:
        raise ValueError("formal sum needs class metadata (M, A) for seminorm checks")


def _weighted_sup(expr_: E.Expr, A: WeightSequence, rho: float, h: float, shift: int,
                  K: int, x, k, lw, lb, extra_log: float) -> tuple[list[float], np.ndarray]:
    """Per-order sups of |D^alpha D^beta e| <w>^{rho(n+shift)} e^{-W}
    / (h^{n+shift} A_alpha A_beta) * exp(-extra_log), and the pointwise
    max over orders (log)."""
    d = x.shape[0]
    per, pointwise = [], np.full(lb.shape, -np.inf)
    for n in range(K + 1):
        pairs = list(derivative_pairs(d, n))
        vals = E.evaluate_many([E.differentiate(expr_, al, be, "D", order_cap=64) for al, be in pairs], x, k)
        best = -np.inf
        for (al, be), v in zip(pairs, vals):
            li = (_log_abs(v) + rho * (n + shift) * lb - lw - (n + shift) * math.log(h)
                  - A.log_values[sum(al)] - A.log_values[sum(be)] - extra_log)
            pointwise = np.maximum(pointwise, li)
            best = max(best, float(li.max()) if li.size else -np.inf)
        per.append(best)
    return per, pointwise


def check_fs_membership(p: FormalSymbolSum, h: float, m: float, K: int, grid: BoxGrid,
                        J: int | None = None, joint_weight: bool = False) -> FitReport:
    """Sup over j <= J, |alpha+beta| <= K and the trusted part of the grid of
    |D^alpha D^beta p_j| <w>^{rho(n+2j)} e^{-W} / (h^{n+2j} A_alpha A_beta A_j^2)."""
    _require_class(p)
    J = p.J if J is None else J
    if J > p.J:
        raise ValueError(f"only {p.J + 1} terms available")
    x0, k0 = grid.points()
    per_j, slopes, poly_slopes, excluded, arg = [], [], [], [], {}
    best = -np.inf
    for j in range(J + 1):
        mask = p.trusted(j, x0, k0)
        excluded.append(int((~mask).sum()))
        x, k = x0[:, mask], k0[:, mask]
        if x.shape[1] == 0:
            raise ValueError(f"grid misses the trusted region of p_{j}")
        lw = log_weight(p.M, m, x, k, joint_weight)
        lb = _log_bracket(x, k)
        per, pointwise = _weighted_sup(p.terms[j], p.A, p.rho, h, 2 * j, K, x, k, lw, lb,
                                       2 * p.A.log_values[j])
        sj = max(per)
        per_j.append(float(np.exp(sj)))
        slopes.append(radial_slopes(pointwise, x, k, grid.L))
        # weight-free quotient by |p_0|: polynomial growth the e^{-W} factor would hide
        lp0 = _log_abs(E.evaluate(p.terms[0], x, k))
        poly = np.where(np.isfinite(lp0), pointwise + lw - lp0, -np.inf)
        poly_slopes.append(radial_slopes(poly, x, k, grid.L) if j else float("nan"))
        if sj > best:
            best = sj
            i = int(np.argmax(pointwise))
            arg = {"j": j, "x": x[:, i].tolist(), "k": k[:, i].tolist()}
    flags = []
    pj = np.asarray(per_j)
    if pj.size > 1 and np.argmax(pj) == pj.size - 1 and pj[-1] > pj[0] * (1 + 1e-9):
        flags.append("j_growth")
    growing = [j for j, s in enumerate(slopes) if np.isfinite(s) and s > RADIAL_SLOPE_TOL]
    if growing:
        flags.append("radial_growth")
    poly_growing = [j for j, s in enumerate(poly_slopes) if np.isfinite(s) and s > POLY_SLOPE_TOL]
    if poly_growing:
        flags.append("term_order_growth")
    return FitReport(
        name="fs_membership", verdict=bool(np.isfinite(best) and not flags), sup=float(np.exp(best)),
        constants={"h": h, "m": m, "K": K, "J": J, "rho": p.rho},
        per_order=per_j, argmax=arg, flags=flags,
        diagnostics={"radial_log_slopes": slopes, "growing_terms": growing,
                     "p0_quotient_slopes": poly_slopes, "order_growing_terms": poly_growing,
                     "excluded_points": excluded, "grid": grid.to_dict()},
    )


def check_equivalence(family: TruncatedSymbol, p: FormalSymbolSum, K: int, grid: BoxGrid,
                      h: float = 1.0, m: float = 1.0, Ns: Sequence[int] | None = None,
                      joint_weight: bool = False) -> FitReport:
    """Remainder integrand of b_J - sum_{j<N} p_j for each tested N <= J.

    On the far region (all cutoffs identically one) the remainder is exactly
    sum_{N <= j < J} p_j; the reported value per N is the sup of
    |D^alpha D^beta R_N| e^{-W} <w>^{rho(n+2N)} / (h^{n+2N} A_alpha A_beta A_N^2).
    """
    _require_class(p)
    Jf = family.N
    if Jf > len(p.terms):
        raise ValueError("family uses more terms than the formal sum provides")
    Ns = list(range(1, Jf + 1)) if Ns is None else list(Ns)
    if any(N > Jf or N < 0 for N in Ns):
        raise ValueError(f"N must lie in [0, {Jf}]")
    x0, k0 = grid.points()
    br = np.sqrt(1 + np.sum(x0 ** 2, axis=0) + np.sum(k0 ** 2, axis=0))
    per_N, rows = [], {}
    for N in Ns:
        mask = (br >= family.far_radius) & p.trusted(N, x0, k0)
        if not mask.any():
            raise ValueError(f"no grid points where b_{Jf} equals the plain sum and "
                             f"Q^c_(B m_{N}) holds; enlarge the box")
        x, k = x0[:, mask], k0[:, mask]
        R = E.add(*p.terms[N:Jf]) if N < Jf else E.ZERO
        if E.is_zero(R):
            per_N.append(0.0)
            rows[N] = 0.0
            continue
        lw = log_weight(p.M, m, x, k, joint_weight)
        lb = _log_bracket(x, k)
        per, _ = _weighted_sup(R, p.A, p.rho, h, 2 * N, K, x, k, lw, lb, 2 * p.A.log_values[N])
        v = float(np.exp(max(per)))
        per_N.append(v)
        rows[N] = v
    sup = max(per_N) if per_N else 0.0
    return FitReport(name="equivalence", verdict=bool(np.isfinite(sup)), sup=sup,
                     constants={"h": h, "m": m, "K": K, "J": Jf, "rho": p.rho},
                     per_order=per_N, diagnostics={"N": Ns, "far_radius": family.far_radius,
                                                   "grid": grid.to_dict()})


def remainder_ray_slopes(p: FormalSymbolSum, J: int, Ns: Sequence[int],
                         t: np.ndarray) -> dict[int, dict]:
    """Log-log slope of |sum_{N<=j<J} p_j| / |p_0| against <w> along x = xi = t.

    The weighted remainder in :func:`check_equivalence` carries the factor
    <w>^{2 rho N} that compensates exactly this decay; the slope of the bare
    ratio is therefore the quantity expected to approach -2 rho N.
    """
    d = p.d
    t = np.asarray(t, dtype=float)
    x = np.tile(t, (d, 1)) / math.sqrt(d)
    lb = _log_bracket(x, x)
    vals = E.evaluate_many(p.terms[:J], x, x)
    out = {}
    for N in Ns:
        R = np.sum(vals[N:J], axis=0)
        y = _log_abs(R) - _log_abs(vals[0])
        slope, icpt = np.polyfit(lb, y, 1)
        out[int(N)] = {"slope": float(slope), "expected": -2.0 * p.rho * N,
                       "rel_error": float(abs(slope + 2 * p.rho * N) / (2 * p.rho * N)) if N else 0.0}
    return out
