"""Grid-based estimation of symbol-class seminorms and hypoellipticity.

Every constant here is a sup/inf over a finite box [-L, L]^{2d}; the
honest surrogate for the unbounded region is the trend across boxes
(:func:`box_sweep`) and the radial trend inside one box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from ..reports import FitReport, HypoellipticityReport
from ..weights import WeightSequence, associated_function
from . import expr as E

__all__ = [
    "BoxGrid", "derivative_pairs", "geometric_scan", "log_weight",
    "estimate_class_membership", "check_hypoelliptic", "check_quotient_bound_p0",
    "box_sweep", "radial_slopes", "q_region",
]

ZERO_TOL = 1e-12
# bounded quotients approaching their sup from below show slopes ~2/L^2;
# genuine growth in the test families sits above 0.3
RADIAL_SLOPE_TOL = 0.1


def geometric_scan(lo: float, hi: float, per_decade: int = 8) -> np.ndarray:
    """Geometric grid with ``per_decade`` points per decade, endpoints included."""
    n = int(round(math.log10(hi / lo) * per_decade))
    return lo * 10.0 ** (np.arange(n + 1) / per_decade)


@dataclass(frozen=True)
class BoxGrid:
    """Tensor grid with ``n`` points per axis on [-L, L]^{2d}.

    ``n`` odd keeps the origin and both axes on the grid, and refinement
    ``n -> 2n - 1`` produces a superset of the points.
    """

    L: float
    n: int
    d: int = 1

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 points per axis")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @classmethod
    def from_step(cls, L: float, step: float, d: int = 1) -> "BoxGrid":
        return cls(L=L, n=int(round(2 * L / step)) + 1, d=d)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        ax = self.axis
        mesh = np.meshgrid(*([ax] * (2 * self.d)), indexing="ij")
        flat = np.stack([m.ravel() for m in mesh])
        return flat[: self.d], flat[self.d:]

    def refine(self) -> "BoxGrid":
        return BoxGrid(self.L, 2 * self.n - 1, self.d)

    def to_dict(self) -> dict:
        return {"L": self.L, "n": self.n, "d": self.d, "step": 2 * self.L / (self.n - 1)}


def derivative_pairs(d: int, order: int) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All (alpha, beta) in N^d x N^d with |alpha| + |beta| = order."""
    for combo in itertools.product(range(order + 1), repeat=2 * d):
        if sum(combo) == order:
            yield tuple(combo[:d]), tuple(combo[d:])


def q_region(x: np.ndarray, k: np.ndarray, B: float) -> np.ndarray:
    """Mask of Q_B^c: <x> >= B or <xi> >= B."""
    bx = np.sqrt(1 + np.sum(x * x, axis=0))
    bk = np.sqrt(1 + np.sum(k * k, axis=0))
    return (bx >= B) | (bk >= B)


def log_weight(M: WeightSequence, m: float, x: np.ndarray, k: np.ndarray,
               joint: bool = False) -> np.ndarray:
    """M(m|x|) + M(m|xi|), or M(m(|x| + |xi|)) with ``joint``."""
    nx = np.sqrt(np.sum(x * x, axis=0))
    nk = np.sqrt(np.sum(k * k, axis=0))
    if joint:
        return associated_function(M, m * (nx + nk))
    return associated_function(M, m * nx) + associated_function(M, m * nk)


def _log_abs(v: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(v))


def _log_bracket(x, k):
    return 0.5 * np.log1p(np.sum(x * x, axis=0) + np.sum(k * k, axis=0))


def radial_slopes(logq: np.ndarray, x: np.ndarray, k: np.ndarray, L: float,
                  shells: int = 8) -> float:
    """Log-log slope of the per-shell maximum of ``exp(logq)`` against |w|
    over complete shells L/4 <= |w| <= L."""
    r = np.sqrt(np.sum(x * x, axis=0) + np.sum(k * k, axis=0))
    edges = np.linspace(L / 4, L, shells + 1)
    rs, ms = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi) & np.isfinite(logq)
        if sel.any():
            rs.append(0.5 * (lo + hi))
            ms.append(logq[sel].max())
    if len(rs) < 3:
        return float("nan")
    return float(np.polyfit(np.log(rs), ms, 1)[0])


def _point(x, k, i) -> dict:
    return {"x": [float(v) for v in x[:, i]], "k": [float(v) for v in k[:, i]]}


def _order_trend(per_order: Sequence[float]) -> str:
    po = np.asarray(per_order)
    if po.size <= 1 or np.all(np.diff(po) <= 1e-12 * (1 + np.abs(po[:-1]))):
        return "nonincreasing"
    if np.argmax(po) == po.size - 1 and po[-1] > po[0] * (1 + 1e-9):
        return "growing"
    return "bounded"


def estimate_class_membership(a: E.Expr, M: WeightSequence, A: WeightSequence,
                              rho: float, h: float, m: float, K: int, grid: BoxGrid,
                              joint_weight: bool = False) -> FitReport:
    """Sup of the symbol seminorm integrand over |alpha|+|beta| <= K and the grid.

    The integrand is |D_xi^alpha D_x^beta a| <w>^{rho n} e^{-(M(m|x|)+M(m|xi|))}
    / (h^n A_alpha A_beta) with n = |alpha| + |beta|.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    d = grid.d
    x, k = grid.points()
    lw = log_weight(M, m, x, k, joint_weight)
    lb = _log_bracket(x, k)
    per_order, best, arg = [], -np.inf, {}
    ray_t = np.linspace(1.0, grid.L, 64)
    ray_x = np.tile(ray_t, (d, 1)) / math.sqrt(d)
    ray_lw = log_weight(M, m, ray_x, ray_x, joint_weight)
    ray_lb = _log_bracket(ray_x, ray_x)
    ray_max = np.full(ray_t.shape, -np.inf)
    for n in range(K + 1):
        pairs = list(derivative_pairs(d, n))
        ders = [E.differentiate(a, al, be, "D") for al, be in pairs]
        vals = E.evaluate_many(ders, x, k)
        rvals = E.evaluate_many(ders, ray_x, ray_x)
        order_best = -np.inf
        for (al, be), v, rv in zip(pairs, vals, rvals):
            denom = n * math.log(h) + A.log_values[sum(al)] + A.log_values[sum(be)]
            li = _log_abs(v) + rho * n * lb - lw - denom
            ray_max = np.maximum(ray_max, _log_abs(rv) + rho * n * ray_lb - ray_lw - denom)
            i = int(np.argmax(li))
            if li[i] > order_best:
                order_best = li[i]
            if li[i] > best:
                best = li[i]
                arg = {"alpha": al, "beta": be, **_point(x, k, i)}
        per_order.append(float(np.exp(order_best)))
    flags = []
    trend = _order_trend(per_order)
    if trend == "growing":
        flags.append("order_growth")
    tail = ray_t >= grid.L / 2
    fin = np.isfinite(ray_max) & tail
    ray_slope = float(np.polyfit(np.log(ray_t[fin]), ray_max[fin], 1)[0]) if fin.sum() > 3 else 0.0
    if ray_slope > RADIAL_SLOPE_TOL:
        flags.append("radial_growth")
    sup = float(np.exp(best))
    return FitReport(
        name="class_membership", verdict=bool(np.isfinite(sup) and not flags), sup=sup,
        constants={"rho": rho, "h": h, "m": m, "K": K},
        per_order=per_order, argmax=arg, flags=flags,
        diagnostics={"order_trend": trend, "diagonal_ray_log_slope": ray_slope,
                     "grid": grid.to_dict(), "joint_weight": joint_weight},
    )


def _quotients(a: E.Expr, A: WeightSequence, rho: float, K: int,
               x: np.ndarray, k: np.ndarray, weights: str) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-order pointwise log-quotients and log|a|.

    ``weights="product"`` divides by A_alpha A_beta, ``"joint"`` by A_{alpha+beta}.
    """
    d = x.shape[0]
    la = _log_abs(E.evaluate(a, x, k))
    lb = _log_bracket(x, k)
    out = [np.zeros_like(la)]
    for n in range(1, K + 1):
        pairs = list(derivative_pairs(d, n))
        vals = E.evaluate_many([E.differentiate(a, al, be, "D") for al, be in pairs], x, k)
        q = np.full(la.shape, -np.inf)
        for (al, be), v in zip(pairs, vals):
            if weights == "product":
                lA = A.log_values[sum(al)] + A.log_values[sum(be)]
            else:
                lA = A.log_values[n]
            q = np.maximum(q, _log_abs(v) + rho * n * lb - la - lA)
        out.append(q)
    return out, la


def _fit_C_of_h(q_sup: Sequence[float], h_grid: np.ndarray) -> dict:
    """C(h) = max_n q_n h^{-n}; minimal feasible h is the least grid value
    with C(h) <= 10 x the large-h asymptote q_0."""
    lq = _log_abs(np.asarray(q_sup))
    n = np.arange(lq.size)
    lC = np.max(lq[None, :] - n[None, :] * np.log(h_grid)[:, None], axis=1)
    C = np.exp(lC)
    asym = float(np.exp(lq[0]))
    feas = np.nonzero(C <= 10 * asym)[0]
    h_min = float(h_grid[feas[0]]) if feas.size else float("inf")
    return {"h": h_grid.tolist(), "C": C.tolist(), "h_min": h_min, "asymptote": asym}


def _interp_C(h_ref: float, q_sup: Sequence[float]) -> float:
    lq = _log_abs(np.asarray(q_sup))
    n = np.arange(lq.size)
    return float(np.exp(np.max(lq - n * math.log(h_ref))))


def _witness(x, k, mask, absa):
    idx = np.nonzero(mask)[0]
    r = np.sum(x[:, idx] ** 2, axis=0) + np.sum(k[:, idx] ** 2, axis=0)
    # smallest |a|, then the point nearest the origin, then positive coordinates
    key = np.lexsort((-np.sum(x[:, idx], axis=0) - np.sum(k[:, idx], axis=0), r, absa[idx]))
    i = int(idx[key[0]])
    return i


def check_hypoelliptic(a: E.Expr, M: WeightSequence, A: WeightSequence, rho: float,
                       B: float, K: int, grid: BoxGrid, mode: str = "beurling",
                       m_ref: float = 1.0, h_ref: float = 1.0,
                       m_grid: np.ndarray | None = None, h_grid: np.ndarray | None = None,
                       weights: str = "product", joint_weight: bool = False) -> HypoellipticityReport:
    """Test the lower bound (i) and the derivative-quotient bound (ii) on Q_B^c.

    ``mode="beurling"``: (i) some m admits c > 0, (ii) every h admits C.
    ``mode="roumieu"``: (i) every m admits c, (ii) some h admits C.
    Both quantifiers are realized as loops over geometric scans.
    """
    if mode not in ("beurling", "roumieu"):
        raise ValueError("mode must be 'beurling' or 'roumieu'")
    if K < 1:
        raise ValueError("K must be >= 1")
    m_grid = geometric_scan(1e-2, 1e2) if m_grid is None else np.asarray(m_grid)
    h_grid = geometric_scan(1e-2, 1e2) if h_grid is None else np.asarray(h_grid)
    x, k = grid.points()
    mask = q_region(x, k, B)
    x, k = x[:, mask], k[:, mask]
    if x.shape[1] == 0:
        raise ValueError("grid does not meet Q_B^c; enlarge the box or lower B")
    aval = E.evaluate(a, x, k)
    absa = np.abs(aval)
    scale = max(1.0, float(absa.max()))
    zero = absa <= ZERO_TOL * scale
    gdesc = {**grid.to_dict(), "B": B, "points_in_region": int(x.shape[1])}
    if zero.any():
        i = _witness(x, k, zero, absa)
        wit = {**_point(x, k, i), "value": complex(aval[i])}
        fail = {"reason": "symbol vanishes on Q_B^c", "witness": wit}
        return HypoellipticityReport(B=B, mode=mode, K=K, grid=gdesc, lower_bound=fail,
                                     quotient_bound={"reason": "not evaluable where a = 0"},
                                     verdict_lower=False, verdict_quotient=False, witness=wit)
    la = np.log(absa)
    c_of_m = []
    for m in m_grid:
        c_of_m.append(float(np.exp(np.min(la + log_weight(M, m, x, k, joint_weight)))))
    c_of_m = np.array(c_of_m)
    c_ref = float(np.exp(np.min(la + log_weight(M, m_ref, x, k, joint_weight))))
    ok_i = bool(np.any(c_of_m > 0)) if mode == "beurling" else bool(np.all(c_of_m > 0))
    i_min = int(np.argmin(la + log_weight(M, m_ref, x, k, joint_weight)))
    lower = {"m": m_ref, "c": c_ref, "argmin": _point(x, k, i_min),
             "c_of_m": {"m": m_grid.tolist(), "c": c_of_m.tolist()},
             "radial_log_slope": radial_slopes(la + log_weight(M, m_ref, x, k, joint_weight),
                                               x, k, grid.L)}

    logq, _ = _quotients(a, A, rho, K, x, k, weights)
    q_sup = [float(np.exp(q.max())) for q in logq]
    slopes = [radial_slopes(q, x, k, grid.L) for q in logq[1:]]
    growing = [n + 1 for n, s in enumerate(slopes) if np.isfinite(s) and s > RADIAL_SLOPE_TOL]
    curve = _fit_C_of_h(q_sup, h_grid)
    finite = np.isfinite(curve["C"])
    ok_ii = (bool(np.all(finite)) if mode == "beurling" else bool(np.any(finite))) and not growing
    quot = {"weights": weights, "q_per_order": q_sup, "h_ref": h_ref,
            "C": _interp_C(h_ref, q_sup), "h_min": curve["h_min"],
            "C_of_h": {"h": curve["h"], "C": curve["C"]},
            "radial_log_slopes": slopes, "growing_orders": growing}
    return HypoellipticityReport(B=B, mode=mode, K=K, grid=gdesc, lower_bound=lower,
                                 quotient_bound=quot, verdict_lower=ok_i, verdict_quotient=ok_ii)


def check_quotient_bound_p0(a: E.Expr, A: WeightSequence, rho: float, B: float, K: int,
                            grid: BoxGrid, h_grid: np.ndarray | None = None) -> FitReport:
    """Fit C(h) in |D_xi^alpha D_x^beta p0| <= C h^n |p0| A_{alpha+beta} <w>^{-rho n}
    for p0 = 1/a on Q_B^c."""
    h_grid = geometric_scan(1e-2, 1e2) if h_grid is None else np.asarray(h_grid)
    x, k = grid.points()
    mask = q_region(x, k, B)
    x, k = x[:, mask], k[:, mask]
    aval = E.evaluate(a, x, k, check=False)
    if np.any(np.abs(aval) <= ZERO_TOL * max(1.0, float(np.abs(aval).max()))):
        i = int(np.argmin(np.abs(aval)))
        raise ZeroDivisionError(f"a vanishes on the grid at {_point(x, k, i)}; p0 = 1/a undefined")
    p0 = E.recip(a)
    logq, _ = _quotients(p0, A, rho, K, x, k, "joint")
    q_sup = [float(np.exp(q.max())) for q in logq]
    curve = _fit_C_of_h(q_sup, h_grid)
    slopes = [radial_slopes(q, x, k, grid.L) for q in logq[1:]]
    growing = [n + 1 for n, s in enumerate(slopes) if np.isfinite(s) and s > RADIAL_SLOPE_TOL]
    C = np.asarray(curve["C"])
    decreasing = bool(np.all(np.diff(C) <= 1e-12 * C[:-1]))
    flags = [] if not growing else ["radial_growth"]
    return FitReport(
        name="quotient_bound_p0",
        verdict=bool(np.all(np.isfinite(C)) and decreasing and not growing),
        sup=float(max(q_sup)),
        constants={"h_min": curve["h_min"], "C_at_h1": _interp_C(1.0, q_sup), "rho": rho, "B": B},
        per_order=q_sup, flags=flags,
        diagnostics={"C_of_h": {"h": curve["h"], "C": curve["C"]}, "radial_log_slopes": slopes,
                     "grid": grid.to_dict()},
    )


def box_sweep(run: Callable[[BoxGrid], dict[str, float]], Ls: Sequence[float], step: float,
              d: int = 1, factor: float = 2.0) -> dict:
    """Run a fit on boxes of growing half-width at fixed spacing and report
    whether every named constant stays within ``factor`` across the sweep."""
    rows = {float(L): run(BoxGrid.from_step(L, step, d)) for L in Ls}
    names = sorted(set().union(*(r.keys() for r in rows.values())))
    spread = {}
    for nm in names:
        vals = np.array([rows[L][nm] for L in rows if nm in rows[L]], dtype=float)
        pos = vals[np.isfinite(vals) & (vals > 0)]
        spread[nm] = float(pos.max() / pos.min()) if pos.size == vals.size and pos.size else float("inf")
    return {"rows": rows, "spread": spread, "stable": all(s <= factor for s in spread.values())}
