"""Weight sequences M_p, the classical conditions (M.1)-(M.4), associated
functions and the two combinatorial sequence lemmas used by the parametrix
bounds.

Sequences are stored as ``log M_p``; p!^s overflows a double around p = 170
already for s = 1, and every check here is a comparison of sums of logs.
"""
from __future__ import annotations

import itertools
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .reports import ConditionReport

__all__ = [
    "WeightSequence",
    "SaturationWarning",
    "make_gevrey",
    "from_values",
    "from_log_values",
    "from_rule",
    "parse_sequence",
    "check_condition",
    "check_index",
    "associated_function",
    "associated_function_details",
    "check_lemma_tec",
    "check_lemma_zkk",
    "estimate_rho0",
    "Rho0Estimate",
    "CONDITIONS",
]

# Slack for log-domain comparisons; equality cases (gevrey(1) under (M.4),
# boundary cases of the zkk lemma) must not be reported as violations.
LOG_TOL = 1e-10

CONDITIONS = ("M1", "M2", "M3", "M3'", "M4", "AsubM")
_ALIASES = {
    "(M.1)": "M1", "M.1": "M1", "M1": "M1",
    "(M.2)": "M2", "M.2": "M2", "M2": "M2",
    "(M.3)": "M3", "M.3": "M3", "M3": "M3",
    "(M.3)'": "M3'", "(M.3)′": "M3'", "M.3'": "M3'", "M3'": "M3'", "M3p": "M3'",
    "(M.4)": "M4", "M.4": "M4", "M4": "M4",
    "AsubM": "AsubM", "A<M": "AsubM", "A⊂M": "AsubM", "subset": "AsubM",
}

# geometric search grid 2^{k/4}, k = 0..64
_GEOM_GRID = 2.0 ** (np.arange(0, 65) / 4.0)


class SaturationWarning(UserWarning):
    """The sup defining M(rho) was attained at the last tabulated index."""


@dataclass(frozen=True, eq=False)
class WeightSequence:
    """Positive sequence M_0..M_P kept in log-domain.

    Parameters
    ----------
    log_values : array of float
        ``log M_p`` for ``p = 0..P``.
    generator : str
        Human-readable tag such as ``"gevrey(2)"`` or ``"tabulated"``.
    """

    log_values: np.ndarray
    generator: str = "tabulated"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=float)
        if lv.ndim != 1 or lv.size < 3:
            raise ValueError("a weight sequence needs at least M_0, M_1, M_2")
        if not np.all(np.isfinite(lv)):
            raise ValueError("all entries must be positive and finite")
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)

    @property
    def P(self) -> int:
        return self.log_values.size - 1

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @cached_property
    def log_ratios(self) -> np.ndarray:
        """``log m_p`` for p = 0..P, with ``m_0 = 0`` stored as ``-inf``."""
        out = np.empty_like(self.log_values)
        out[0] = -np.inf
        out[1:] = np.diff(self.log_values)
        return out

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_ratios)

    @cached_property
    def log_factorial(self) -> np.ndarray:
        return gammaln(np.arange(self.P + 1) + 1.0)

    @property
    def is_normalized(self) -> bool:
        return abs(self.log_values[0]) < 1e-12 and abs(self.log_values[1]) < 1e-12

    @cached_property
    def is_log_convex(self) -> bool:
        lr = self.log_ratios[1:]
        return bool(np.all(np.diff(lr) >= -LOG_TOL * (1 + np.abs(lr[1:]))))

    def ratio(self, p: int) -> float:
        """m_p = M_p / M_{p-1} (m_0 = 0)."""
        return float(np.exp(self.log_ratios[p]))

    def __len__(self) -> int:
        return self.log_values.size

    def __repr__(self) -> str:
        return f"WeightSequence({self.generator}, P={self.P})"


def make_gevrey(s: float, P: int) -> WeightSequence:
    """Gevrey sequence M_p = p!^s for p = 0..P."""
    if not s > 0:
        raise ValueError(f"Gevrey exponent must be positive, got {s}")
    if P < 2:
        raise ValueError(f"need P >= 2, got {P}")
    lv = s * gammaln(np.arange(P + 1) + 1.0)
    return WeightSequence(lv, generator=f"gevrey({s:g})", params={"s": float(s)})


def from_values(values: Sequence[float], generator: str = "tabulated") -> WeightSequence:
    vals = np.asarray(values, dtype=float)
    if np.any(vals <= 0):
        raise ValueError("weight sequence entries must be strictly positive")
    return WeightSequence(np.log(vals), generator=generator)


def from_log_values(log_values: Sequence[float], generator: str = "tabulated") -> WeightSequence:
    return WeightSequence(np.asarray(log_values, dtype=float), generator=generator)


def from_rule(log_rule: Callable[[int], float], P: int, generator: str = "custom") -> WeightSequence:
    """Tabulate ``log M_p = log_rule(p)`` for p = 0..P."""
    return WeightSequence(np.array([log_rule(p) for p in range(P + 1)], dtype=float),
                          generator=generator)


_SPEC_RE = re.compile(r"^\s*(gevrey|const|one)\s*(?::\s*([0-9.eE+-]+))?\s*$")


def parse_sequence(text: str, P: int = 200) -> WeightSequence:
    """Parse a short sequence spec: ``gevrey:2``, ``gevrey:1.5``, ``one``."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"unrecognized sequence spec {text!r} (expected e.g. 'gevrey:2')")
    kind, arg = m.groups()
    if kind == "gevrey":
        if arg is None:
            raise ValueError("gevrey needs an exponent, e.g. 'gevrey:2'")
        return make_gevrey(float(arg), P)
    return WeightSequence(np.zeros(P + 1), generator="one")


def _normalize_cond(cond: str) -> str:
    try:
        return _ALIASES[cond.strip()]
    except KeyError:
        raise ValueError(f"unknown condition {cond!r}; choose from {CONDITIONS}") from None


def _require_normalized(seq: WeightSequence, what: str = "sequence") -> None:
    if not seq.is_normalized:
        raise ValueError(f"{what} is not normalized (M_0 = M_1 = 1 expected)")


# ---------------------------------------------------------------------------
# (M.1)-(M.4)


def _log_convexity_defect(lv: np.ndarray, p: np.ndarray) -> np.ndarray:
    """2 log M_p - log M_{p-1} - log M_{p+1}; <= 0 means the inequality holds."""
    return 2 * lv[p] - lv[p - 1] - lv[p + 1]


def _tol(scale) -> np.ndarray:
    return LOG_TOL * (1.0 + np.abs(scale))


# slope of log-increments against log p beyond which growth is not geometric
SUPERGEOMETRIC_SLOPE = 0.25


def _split_excess(seq_max: np.ndarray, prefactor: np.ndarray, grid: np.ndarray):
    """For each constant K on ``grid`` compute e_K(p) = seq_max(p) - p log K and
    decide whether e_K stops growing (tail max <= head max)."""
    n = seq_max.size
    p = np.arange(n)
    split = max(1, n // 2)
    rows = []
    for K in grid:
        e = seq_max - p * math.log(K) + prefactor
        head = e[:split + 1].max()
        tail = e[split + 1:].max() if n > split + 1 else -np.inf
        rows.append((K, e, head, tail))
    return rows, split


def _max_split_excess(seq: WeightSequence, upto: int) -> np.ndarray:
    """D(p) = max_q [log M_p - log M_{p-q} - log M_q] for p = 0..upto."""
    lv = seq.log_values
    out = np.empty(upto + 1)
    for p in range(upto + 1):
        q = np.arange(p + 1)
        out[p] = np.max(lv[p] - lv[p - q] - lv[q])
    return out


def _fit_geometric_constant(excess0: np.ndarray, name: str, cond: str) -> ConditionReport:
    """Least K on the 2^{k/4} grid for which c_0 K^p dominates exp(excess0(p))
    without the required constant still growing at the end of the range."""
    rows, split = _split_excess(excess0, np.zeros_like(excess0), _GEOM_GRID)
    # a huge K absorbs any growth on a finite range; increments rising in
    # log p mean no geometric constant exists at all
    n = excess0.size
    growth = 0.0
    if n > 8:
        p = np.arange(max(2, n // 2), n)
        growth = float(np.polyfit(np.log(p), np.diff(excess0)[p - 1], 1)[0])
    if growth > SUPERGEOMETRIC_SLOPE:
        return ConditionReport(
            condition=cond, holds=False,
            constants={"c0": math.nan, name: math.inf},
            violating_index=n - 1,
            caveats=[f"log-increments grow like {growth:.3g} log p: no finite {name}"],
            extremal={"increment_slope": growth},
        )
    for K, e, head, tail in rows:
        if tail <= head + _tol(head):
            c0 = float(np.exp(max(0.0, e.max())))
            return ConditionReport(
                condition=cond, holds=True,
                constants={"c0": c0, name: float(K)},
                caveats=["constants are feasible on the tested range only; "
                         f"{name} is the least value on the grid 2^(k/4)"],
                extremal={"margin_log": float(e.max())},
            )
    K, e, head, tail = rows[-1]
    idx = split + 1 + int(np.argmax(e[split + 1:] > head + _tol(head)))
    return ConditionReport(
        condition=cond, holds=False,
        constants={"c0": float(np.exp(max(0.0, head))), name: float(K)},
        violating_index=idx,
        caveats=[f"required constant keeps growing even for {name} = {K:g}"],
    )


def _tail_model(terms: np.ndarray, first: int = 1) -> dict:
    """Classify the tail of positive terms t_p (p = first..) as geometric or
    power-law and bound the neglected tail sum when convergent."""
    p = np.arange(first, first + terms.size, dtype=float)
    n = terms.size
    w = slice(max(0, n - max(4, n // 4)), n)
    lt = np.log(terms[w])
    pp = p[w]
    geo = np.polyfit(pp, lt, 1)
    pw = np.polyfit(np.log(pp), lt, 1)
    res_geo = float(np.sum((np.polyval(geo, pp) - lt) ** 2))
    res_pw = float(np.sum((np.polyval(pw, np.log(pp)) - lt) ** 2))
    t_last, P = float(terms[-1]), float(p[-1])
    if res_geo < 0.1 * res_pw and geo[0] < -1e-3:
        r = math.exp(geo[0])
        return {"model": "geometric", "ratio": r, "convergent": True,
                "tail_bound": t_last * r / (1 - r)}
    if pw[0] < -1.0 - 1e-2:
        return {"model": "power", "exponent": float(pw[0]), "convergent": True,
                "tail_bound": t_last * P / (-pw[0] - 1.0)}
    return {"model": "power" if res_pw <= res_geo else "geometric",
            "exponent": float(pw[0]), "convergent": False, "tail_bound": math.inf}


def check_condition(seq: WeightSequence, cond: str, range_: int | None = None,
                    other: WeightSequence | None = None) -> ConditionReport:
    """Test one of the weight-sequence conditions on indices up to ``range_``.

    Parameters
    ----------
    seq : WeightSequence
        The sequence under test (``A_p`` for the embedding ``AsubM``).
    cond : {"M1", "M2", "M3", "M3'", "M4", "AsubM"}
        Condition id; the parenthesised forms ``"(M.1)"`` are accepted too.
    range_ : int, optional
        Largest tested index. Defaults to ``P - 1``.
    other : WeightSequence, optional
        The dominating sequence ``M_p`` for ``AsubM``.
    """
    cond = _normalize_cond(cond)
    P = seq.P
    if range_ is None:
        range_ = P - 1
    if range_ < 1:
        raise ValueError("range must be at least 1")
    if cond in ("M1", "M4", "M3") and range_ > P - 1:
        raise ValueError(f"range {range_} exceeds P - 1 = {P - 1} for {cond}")
    if range_ > P:
        raise ValueError(f"range {range_} exceeds P = {P}")
    if cond != "AsubM":
        _require_normalized(seq)
    lv = seq.log_values

    if cond in ("M1", "M4"):
        base = lv if cond == "M1" else lv - seq.log_factorial
        p = np.arange(1, range_ + 1)
        defect = _log_convexity_defect(base, p)
        bad = defect > _tol(base[p])
        worst = int(p[np.argmax(defect)])
        rep = ConditionReport(condition=cond, holds=not bool(bad.any()),
                              extremal={"max_defect_log": float(defect.max()), "at": worst})
        if bad.any():
            rep.violating_index = int(p[bad][0])
        return rep

    if cond == "M2":
        return _fit_geometric_constant(_max_split_excess(seq, range_), "H", "M2")

    if cond == "AsubM":
        if other is None:
            raise ValueError("AsubM needs the dominating sequence via other=")
        n = min(range_, other.P)
        excess = lv[: n + 1] - other.log_values[: n + 1]
        return _fit_geometric_constant(excess, "L", "AsubM")

    # (M.3) and (M.3)' work with t_p = M_{p-1}/M_p, p = 1..P
    terms = np.exp(-seq.log_ratios[1:])
    tail = _tail_model(terms)
    caveat = (f"infinite sums truncated at P={P}; tail modelled as {tail['model']}"
              + (f", neglected tail <= {tail['tail_bound']:.3g}" if tail["convergent"]
                 else ", divergent or inconclusive beyond P"))
    if cond == "M3'":
        partial = float(terms.sum())
        if not tail["convergent"]:
            return ConditionReport(condition=cond, holds=False,
                                   constants={"partial_sum": partial},
                                   violating_index=P,
                                   caveats=[caveat, "divergent partial sums"],
                                   extremal={"tail": tail})
        return ConditionReport(condition=cond, holds=True,
                               constants={"sum_estimate": partial + tail["tail_bound"],
                                          "partial_sum": partial},
                               caveats=[caveat], extremal={"tail": tail})

    # M3: sum_{p>q} t_p <= c0 q t_{q+1}
    suffix = np.cumsum(terms[::-1])[::-1]  # suffix[i] = sum_{p >= i+1} t_p
    q = np.arange(1, range_ + 1)
    lhs = suffix[q] + (tail["tail_bound"] if tail["convergent"] else 0.0)
    rhs = q * terms[q]
    c = lhs / rhs
    if not tail["convergent"]:
        return ConditionReport(condition=cond, holds=False,
                               constants={"c0": float(c.max())}, violating_index=P,
                               caveats=[caveat, "divergent partial sums"],
                               extremal={"tail": tail})
    return ConditionReport(condition=cond, holds=True,
                           constants={"c0": float(c.max())},
                           caveats=[caveat],
                           extremal={"argmax_q": int(q[np.argmax(c)]), "tail": tail})


def check_index(seq: WeightSequence, cond: str, index: int,
                constants: dict | None = None,
                other: WeightSequence | None = None) -> bool:
    """Re-evaluate a single index of a condition; True when it is satisfied."""
    cond = _normalize_cond(cond)
    lv = seq.log_values
    constants = constants or {}
    if cond in ("M1", "M4"):
        base = lv if cond == "M1" else lv - seq.log_factorial
        d = _log_convexity_defect(base, np.array([index]))[0]
        return bool(d <= _tol(base[index]))
    if cond == "M2":
        D = _max_split_excess(seq, index)[index]
        return bool(D - index * math.log(constants["H"]) <= math.log(constants["c0"]) + _tol(D))
    if cond == "AsubM":
        e = lv[index] - other.log_values[index]
        return bool(e - index * math.log(constants["L"]) <= math.log(constants["c0"]) + _tol(e))
    terms = np.exp(-seq.log_ratios[1:index + 1])
    return bool(_tail_model(terms)["convergent"])


# ---------------------------------------------------------------------------
# associated function


def associated_function_details(seq: WeightSequence, rho: float) -> tuple[float, int, bool]:
    """Return ``(M(rho), argmax p, saturated)``.

    Under (M.1) the terms ``p log rho - log M_p`` are concave in p, so the
    scan stops at the first decrease.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    lr = math.log(rho)
    lv = seq.log_values
    if seq.is_log_convex:
        best, arg = 0.0, 0
        for p in range(1, seq.P + 1):
            t = p * lr - lv[p]
            if t > best:
                best, arg = t, p
            elif p > arg + 1 and t < best:
                break
    else:
        t = np.arange(seq.P + 1) * lr - lv
        arg = int(np.argmax(t))
        best = max(0.0, float(t[arg]))
        if best == 0.0:
            arg = 0
    return best, arg, arg == seq.P


def associated_function(seq: WeightSequence, rho, warn: bool = True):
    """M(rho) = sup_p log_+ (rho^p / M_p).

    Accepts a scalar or an array; ``rho = 0`` is allowed for arrays (value 0).
    Emits :class:`SaturationWarning` if the sup sits at the last tabulated
    index, since then the true value may be larger.
    """
    if np.isscalar(rho):
        val, _, sat = associated_function_details(seq, float(rho))
        if sat and warn:
            warnings.warn(f"M(rho) saturated at p = P = {seq.P} for rho = {rho:g}",
                          SaturationWarning, stacklevel=2)
        return val
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise ValueError("rho must be non-negative")
    out = np.zeros(r.shape)
    pos = r > 0
    lr = np.log(r[pos])
    if seq.is_log_convex:
        # argmax = #{p >= 1 : log m_p <= log rho}
        p = np.searchsorted(seq.log_ratios[1:], lr, side="right")
        vals = p * lr - seq.log_values[p]
        sat = p == seq.P
    else:
        t = np.arange(seq.P + 1)[None, :] * lr[:, None] - seq.log_values[None, :]
        p = np.argmax(t, axis=1)
        vals = t[np.arange(lr.size), p]
        sat = p == seq.P
    out[pos] = np.maximum(vals, 0.0)
    if warn and np.any(sat):
        warnings.warn(f"M(rho) saturated at p = P = {seq.P} for {int(sat.sum())} points",
                      SaturationWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# lemmas


def check_lemma_tec(seq: WeightSequence, P: int | None = None) -> ConditionReport:
    """(M_q/q!)^{1/(q-1)} <= (M_p/p!)^{1/(p-1)} for all 2 <= q <= p <= P."""
    _require_normalized(seq)
    P = seq.P if P is None else P
    if P > seq.P:
        raise ValueError(f"P = {P} exceeds the tabulated range {seq.P}")
    idx = np.arange(2, P + 1)
    f = (seq.log_values[idx] - seq.log_factorial[idx]) / (idx - 1)
    diff = f[:, None] - f[None, :]  # diff[q, p] = f_q - f_p
    mask = np.triu(np.ones_like(diff, dtype=bool))
    viol = mask & (diff > _tol(np.maximum(np.abs(f[:, None]), np.abs(f[None, :]))))
    worst = np.where(mask, diff, -np.inf)
    qi, pi = np.unravel_index(np.argmax(worst), worst.shape)
    rep = ConditionReport(condition="lemma_tec", holds=not bool(viol.any()),
                          extremal={"max_log_gap": float(worst[qi, pi]),
                                    "at": (int(idx[qi]), int(idx[pi]))})
    if viol.any():
        q0, p0 = np.argwhere(viol)[0]
        rep.violating_index = (int(idx[q0]), int(idx[p0]))
    return rep


def tec_sides(seq: WeightSequence, q: int, p: int) -> tuple[float, float]:
    """Both sides of the tec inequality for one (q, p)."""
    lq = (seq.log_values[q] - seq.log_factorial[q]) / (q - 1)
    lp = (seq.log_values[p] - seq.log_factorial[p]) / (p - 1)
    return math.exp(lq), math.exp(lp)


def _multi_indices(d: int, order: int):
    for a in itertools.product(range(order + 1), repeat=d):
        if sum(a) <= order:
            yield a


def zkk_sides(seq: WeightSequence, alpha: Sequence[int], beta: Sequence[int]) -> tuple[float, float]:
    """log of binom(alpha, beta) M_{alpha-beta} M_beta and of |alpha| M_{|alpha|-1}."""
    lv = seq.log_values
    n, k = sum(alpha), sum(beta)
    lb = sum(math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)
             for a, b in zip(alpha, beta))
    return lb + lv[n - k] + lv[k], math.log(n) + lv[n - 1]


def check_lemma_zkk(seq: WeightSequence, d: int, max_order: int,
                    cap: int = 2_000_000) -> ConditionReport:
    """binom(alpha,beta) M_{alpha-beta} M_beta <= |alpha| M_{|alpha|-1} for
    beta <= alpha, 1 <= |beta| <= |alpha| - 1, |alpha| <= max_order."""
    _require_normalized(seq)
    if max_order > seq.P:
        raise ValueError(f"max_order {max_order} exceeds P = {seq.P}")
    alphas = [a for a in _multi_indices(d, max_order) if sum(a) >= 2]
    total = sum(math.prod(x + 1 for x in a) for a in alphas)
    if total > cap:
        raise ValueError(f"zkk scan would visit {total} pairs (cap {cap}); "
                         "reduce d or max_order")
    worst, worst_at, viol, pairs = -math.inf, None, None, 0
    for a in alphas:
        n = sum(a)
        for b in itertools.product(*(range(x + 1) for x in a)):
            k = sum(b)
            if k < 1 or k > n - 1:
                continue
            pairs += 1
            lhs, rhs = zkk_sides(seq, a, b)
            gap = lhs - rhs
            if gap > worst:
                worst, worst_at = gap, (a, b)
            if viol is None and gap > _tol(rhs):
                viol = (a, b)
    rep = ConditionReport(condition="lemma_zkk", holds=viol is None,
                          extremal={"tightest_ratio": math.exp(worst) if pairs else None,
                                    "at": worst_at, "pairs": pairs})
    if viol is not None:
        rep.violating_index = tuple(viol[0]) + tuple(viol[1])
    return rep


# ---------------------------------------------------------------------------
# rho_0


@dataclass
class Rho0Estimate:
    rho: float
    history: dict[int, float]
    extrapolated: float
    tail_slope: float
    attained_heuristic: bool
    caveats: list[str]

    def to_dict(self) -> dict:
        from .reports import jsonable
        return jsonable(self.__dict__)


def _rho_feasible_slope(A: WeightSequence, M: WeightSequence, rho: float, P: int) -> float:
    """Slope of the increments log(a_p) - rho log(m_p) against log p over
    p in [P/2, P]; bounded increments make A_p <= c0 L^p M_p^rho feasible."""
    p = np.arange(max(2, P // 2), P + 1)
    inc = A.log_ratios[p] - rho * M.log_ratios[p]
    return float(np.polyfit(np.log(p), inc, 1)[0])


def estimate_rho0(A: WeightSequence, M: WeightSequence, P: int | None = None,
                  step: float = 0.005, slope_tol: float = 1e-3) -> Rho0Estimate:
    """Least rho on a grid of the given step with A_p controlled by
    c0 L^p M_p^rho; for Gevrey pairs p!^t, p!^s this is t/s."""
    P = min(A.P, M.P) if P is None else P
    if P > min(A.P, M.P):
        raise ValueError("P exceeds the tabulated range")
    emb = check_condition(A, "AsubM", range_=P, other=M)
    if not emb.holds:
        raise ValueError("A is not contained in M (embedding infeasible at rho = 1)")
    grid = np.round(np.arange(1, int(round(1 / step)) + 1) * step, 12)

    def least(Pk: int) -> tuple[float, float]:
        for r in grid:
            s = _rho_feasible_slope(A, M, r, Pk)
            if s <= slope_tol:
                return float(r), s
        return 1.0, _rho_feasible_slope(A, M, 1.0, Pk)

    history = {}
    for Pk in sorted({max(8, P // 4), max(8, P // 2), P}):
        history[Pk] = least(Pk)[0]
    rho, slope = least(P)
    half = history[max(8, P // 2)]
    extrap = float(min(1.0, max(step, 2 * rho - half)))
    return Rho0Estimate(
        rho=rho, history=history, extrapolated=extrap, tail_slope=slope,
        attained_heuristic=abs(slope) <= slope_tol,
        caveats=[f"infimum approximated on a rho grid of step {step}",
                 "attainment of the infimum is a heuristic flag from finitely many terms"],
    )
