"""Grid quantization a(x,D), Gelfand-Shilov norm estimates, the Hermite
spectral oracle for 1 + x^2 + xi^2, and decay fits.

Grid: x_j = -L + j 2L/N (j = 0..N-1) per axis, dual grid
xi_k = (k - N/2) pi/L.  The transform is the rectangle rule for
f^(xi) = int f(x) e^{-i<x,xi>} dx, evaluated with an FFT.
"""
from __future__ import annotations

import base64
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .reports import FitReport
from .symbols import expr as E
from .weights import WeightSequence, associated_function

__all__ = [
    "GridFunction", "HermiteBasis", "AliasingError", "SymbolOverflowError",
    "RepresentationError", "InsufficientDynamicRange", "NormEstimate",
    "apply_operator", "fourier_multiplier", "depends_on_x", "gs_norm_estimate",
    "spectral_solve", "hermite_coefficients", "decay_fit", "gaussian", "gaussian_mixture",
    "ALIAS_TOL", "SYMBOL_MAX", "NOISE_FLOOR",
]

ALIAS_TOL = 1e-10
SYMBOL_MAX = 1e12
NOISE_FLOOR = 1e-13
# fraction of the dual half-width treated as the aliasing band
_BAND = 0.9


class AliasingError(ValueError):
    pass


class SymbolOverflowError(OverflowError):
    pass


class RepresentationError(ValueError):
    def __init__(self, message: str, captured: float):
        super().__init__(message)
        self.captured = captured


class InsufficientDynamicRange(ValueError):
    pass


def _axis(L: float, N: int) -> np.ndarray:
    return -L + np.arange(N) * (2.0 * L / N)


def _dual_axis(L: float, N: int) -> np.ndarray:
    return (np.arange(N) - N // 2) * (math.pi / L)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples on the uniform grid [-L, L)^d with N points per axis."""

    d: int
    L: float
    N: int
    samples: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or 2 is supported")
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two")
        if self.L <= 0:
            raise ValueError("L must be positive")
        s = np.array(self.samples, dtype=complex)
        if s.shape != (self.N,) * self.d:
            raise ValueError(f"samples must have shape {(self.N,) * self.d}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_function(cls, fn: Callable, d: int = 1, L: float = 12.0, N: int = 256) -> "GridFunction":
        """Sample ``fn(x)`` with x of shape (d, ...)."""
        mesh = np.stack(np.meshgrid(*([_axis(L, N)] * d), indexing="ij"))
        return cls(d, L, N, np.asarray(fn(mesh), dtype=complex))

    def like(self, samples) -> "GridFunction":
        return GridFunction(self.d, self.L, self.N, samples)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def dxi(self) -> float:
        return math.pi / self.L

    @property
    def axis(self) -> np.ndarray:
        return _axis(self.L, self.N)

    @property
    def dual_axis(self) -> np.ndarray:
        return _dual_axis(self.L, self.N)

    def mesh(self) -> np.ndarray:
        """x of shape (d, N, ..., N)."""
        return np.stack(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    def dual_mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(*([self.dual_axis] * self.d), indexing="ij"))

    def _phase(self) -> np.ndarray:
        # (-1)^j pre-twiddle and e^{i L xi} post-twiddle, as separable products
        sign = (-1.0) ** np.arange(self.N)
        post = np.exp(1j * self.L * self.dual_axis)
        if self.d == 1:
            return sign, post
        return np.multiply.outer(sign, sign), np.multiply.outer(post, post)

    @property
    def fourier(self) -> np.ndarray:
        """f^ on the dual grid (centered ordering)."""
        if "hat" not in self._cache:
            sign, post = self._phase()
            hat = np.fft.fftn(self.samples * sign) * post * self.dx ** self.d
            hat.setflags(write=False)
            self._cache["hat"] = hat
        return self._cache["hat"]

    @classmethod
    def from_fourier(cls, hat: np.ndarray, d: int, L: float, N: int) -> "GridFunction":
        """Inverse of :attr:`fourier`."""
        proto = cls(d, L, N, np.zeros((N,) * d))
        sign, post = proto._phase()
        s = np.fft.ifftn(np.asarray(hat) / post) * sign / proto.dx ** d
        return cls(d, L, N, s)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * self.dx ** self.d))

    def fourier_norm(self) -> float:
        """(2 pi)^{-d/2} ||f^||_2 on the dual grid; equals :meth:`norm` by Parseval."""
        return float(np.sqrt(np.sum(np.abs(self.fourier) ** 2) * self.dxi ** self.d
                             / (2 * math.pi) ** self.d))

    def inner(self, other: "GridFunction") -> complex:
        return complex(np.sum(np.conj(self.samples) * other.samples) * self.dx ** self.d)

    def aliasing_ratio(self) -> float:
        """max |f^| on the outer dual band relative to the peak."""
        hat = np.abs(self.fourier)
        peak = hat.max()
        if peak == 0:
            return 0.0
        xi = self.dual_mesh()
        r = np.max(np.abs(xi), axis=0)
        band = r >= _BAND * (math.pi * self.N / (2 * self.L))
        return float(hat[band].max() / peak)

    def check_aliasing(self, tol: float = ALIAS_TOL) -> None:
        ratio = self.aliasing_ratio()
        if ratio > tol:
            raise AliasingError(f"Fourier tail {ratio:.3e} of peak exceeds {tol:.0e}; "
                                f"refine N or enlarge L")

    def __add__(self, other):
        return self.like(self.samples + other.samples)

    def __sub__(self, other):
        return self.like(self.samples - other.samples)

    def __mul__(self, c):
        return self.like(self.samples * c)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        raw = np.ascontiguousarray(self.samples, dtype="<c16").tobytes()
        return {"d": self.d, "L": self.L, "N": self.N, "dtype": "complex128",
                "encoding": "base64", "samples": base64.b64encode(raw).decode("ascii")}

    @classmethod
    def from_json(cls, data: dict) -> "GridFunction":
        if data.get("encoding", "base64") != "base64":
            raise ValueError("unsupported sample encoding")
        raw = base64.b64decode(data["samples"])
        d, N = int(data["d"]), int(data["N"])
        s = np.frombuffer(raw, dtype="<c16").reshape((N,) * d)
        return cls(d, float(data["L"]), N, s.copy())

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "GridFunction":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def gaussian(d: int = 1, L: float = 12.0, N: int = 256, center=0.0, width: float = 1.0) -> GridFunction:
    """e^{-|x - center|^2 / (2 width^2)}."""
    c = np.asarray(center, dtype=float).reshape(-1, *([1] * d)) if np.ndim(center) else center
    return GridFunction.from_function(
        lambda x: np.exp(-np.sum((x - c) ** 2, axis=0) / (2 * width ** 2)), d, L, N)


def gaussian_mixture(components: Sequence[tuple[float, float, float]], L: float = 12.0,
                     N: int = 256) -> GridFunction:
    """Sum of w e^{-(x - c)^2 / (2 s^2)} over (w, c, s) in d = 1."""
    def fn(x):
        return sum(w * np.exp(-(x[0] - c) ** 2 / (2 * s ** 2)) for w, c, s in components)
    return GridFunction.from_function(fn, 1, L, N)


def depends_on_x(a: E.Expr) -> bool:
    for n in E._postorder([a]):
        if isinstance(n, E.Var) and n.kind == "x":
            return True
        if isinstance(n, E.Bracket) and n.kind in ("w", "x"):
            return True
    return False


def _symbol_values(a, x: np.ndarray, k: np.ndarray) -> np.ndarray:
    if callable(a) and not isinstance(a, E.Expr):
        v = np.asarray(a(x, k), dtype=complex)
    else:
        v = np.broadcast_to(E.evaluate(a, x, k), x.shape[1:]).astype(complex)
    if not np.all(np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > SYMBOL_MAX:
        raise SymbolOverflowError(f"symbol exceeds {SYMBOL_MAX:.0e} on the dual rectangle; "
                                  f"shrink N/L")
    return v


def fourier_multiplier(a, f: GridFunction, check: bool = True) -> GridFunction:
    """a(D) f for an x-independent symbol, via one inverse transform."""
    if check:
        f.check_aliasing()
    xi = f.dual_mesh().reshape(f.d, -1)
    av = _symbol_values(a, np.zeros_like(xi), xi).reshape(f.fourier.shape)
    return GridFunction.from_fourier(av * f.fourier, f.d, f.L, f.N)


def apply_operator(a, f: GridFunction, check: bool = True, chunk: int = 1 << 16,
                   method: str = "direct") -> GridFunction:
    """Kohn-Nirenberg quantization (2pi)^{-d} sum_xi a(x,xi) f^(xi) e^{i<x,xi>} dxi^d.

    ``a`` is an expression or a callable ``a(x, k)`` on arrays of shape (d, n).
    ``method="auto"`` uses the multiplier path when ``a`` has no x-dependence.
    """
    if check:
        f.check_aliasing()
    if method == "auto" and isinstance(a, E.Expr) and not depends_on_x(a):
        return fourier_multiplier(a, f, check=False)
    if method not in ("direct", "auto"):
        raise ValueError(f"unknown method {method!r}")
    xs = f.mesh().reshape(f.d, -1)
    xis = f.dual_mesh().reshape(f.d, -1)
    hat = f.fourier.reshape(-1) * (f.dxi / (2 * math.pi)) ** f.d
    n_xi = xis.shape[1]
    rows = max(1, chunk // n_xi)
    out = np.empty(xs.shape[1], dtype=complex)
    for s in range(0, xs.shape[1], rows):
        xc = xs[:, s:s + rows]
        m = xc.shape[1]
        X = np.repeat(xc, n_xi, axis=1)
        K = np.tile(xis, (1, m))
        av = _symbol_values(a, X, K).reshape(m, n_xi)
        phase = np.exp(1j * (xc.T @ xis))
        out[s:s + m] = np.sum(av * phase * hat, axis=1)
    return f.like(out.reshape(f.samples.shape))


@dataclass(frozen=True)
class NormEstimate:
    value: float
    K: int
    alpha: tuple[int, ...]
    x: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"value": self.value, "K": self.K, "alpha": list(self.alpha), "x": list(self.x)}


def gs_norm_estimate(f: GridFunction, M: WeightSequence, m: float, K: int,
                     check: bool = True) -> NormEstimate:
    """max over |alpha| <= K and grid x of m^|alpha| |D^alpha f| e^{M(m|x|)} / M_alpha,
    derivatives taken spectrally."""
    if K > M.P:
        raise ValueError("K exceeds the sequence length")
    if check:
        f.check_aliasing()
    X = f.mesh()
    lw = associated_function(M, m * np.sqrt(np.sum(X * X, axis=0)), warn=False)
    xi = f.dual_mesh()
    best = (0.0, (0,) * f.d, tuple(float(v) for v in X[(slice(None),) + (0,) * f.d]))
    logm = math.log(m) if m > 0 else -np.inf
    for n in range(K + 1):
        for alpha in itertools.product(range(n + 1), repeat=f.d):
            if sum(alpha) != n:
                continue
            mult = np.prod([xi[i] ** alpha[i] for i in range(f.d)], axis=0)
            g = GridFunction.from_fourier(mult * f.fourier, f.d, f.L, f.N).samples
            with np.errstate(divide="ignore"):
                li = np.log(np.abs(g)) + lw + (n * logm if n else 0.0) - M.log_values[n]
            i = np.unravel_index(np.argmax(li), li.shape)
            v = float(np.exp(li[i]))
            if v > best[0]:
                best = (v, alpha, tuple(float(X[(j,) + i]) for j in range(f.d)))
    return NormEstimate(best[0], K, best[1], best[2])


class HermiteBasis:
    """Orthonormal Hermite functions h_0..h_{n_max} on a 1-d grid.

    Eigenfunctions of 1 + x^2 - d^2/dx^2 with eigenvalues 2n + 2.
    """

    def __init__(self, n_max: int, L: float = 12.0, N: int = 256):
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        self.n_max, self.L, self.N = n_max, L, N
        x = _axis(L, N)
        dx = 2.0 * L / N
        h = np.empty((n_max + 1, N))
        h[0] = math.pi ** -0.25 * np.exp(-x * x / 2)
        if n_max >= 1:
            h[1] = math.sqrt(2.0) * x * h[0]
        for n in range(1, n_max):
            h[n + 1] = math.sqrt(2.0 / (n + 1)) * x * h[n] - math.sqrt(n / (n + 1)) * h[n - 1]
        # renormalize on the grid
        h /= np.sqrt(np.sum(h * h, axis=1, keepdims=True) * dx)
        self.values = h
        self.values.setflags(write=False)

    @property
    def eigenvalues(self) -> np.ndarray:
        return 2.0 * np.arange(self.n_max + 1) + 2.0

    def function(self, n: int) -> GridFunction:
        return GridFunction(1, self.L, self.N, self.values[n])

    def gram(self) -> np.ndarray:
        return self.values @ self.values.T * (2.0 * self.L / self.N)

    def _check_grid(self, f: GridFunction):
        if f.d != 1 or f.N != self.N or not math.isclose(f.L, self.L):
            raise ValueError("grid function does not live on the basis grid")

    def coefficients(self, f: GridFunction) -> np.ndarray:
        self._check_grid(f)
        return self.values @ f.samples * f.dx

    def synthesize(self, coeffs) -> GridFunction:
        c = np.asarray(coeffs, dtype=complex)
        return GridFunction(1, self.L, self.N, c @ self.values[: c.size])


def hermite_coefficients(f: GridFunction, basis: HermiteBasis) -> np.ndarray:
    return basis.coefficients(f)


def spectral_solve(v: GridFunction, basis: HermiteBasis, mass_tol: float = 1e-8) -> GridFunction:
    """u = sum_n v_n / (2n + 2) h_n, the solution of (1 + x^2 + D^2) u = v."""
    c = basis.coefficients(v)
    total = v.norm() ** 2
    if total == 0:
        return v.like(np.zeros_like(v.samples))
    captured = float(np.sum(np.abs(c) ** 2) / total)
    if captured < 1 - mass_tol:
        raise RepresentationError(f"basis captures only {captured:.10f} of ||v||^2", captured)
    return basis.synthesize(c / basis.eigenvalues)


def _stretched(t, logC, c, g):
    return logC - c * t ** g


def _fit(t: np.ndarray, y: np.ndarray, p0) -> tuple[np.ndarray, float]:
    popt, _ = curve_fit(_stretched, t, y, p0=p0, bounds=([-np.inf, 0.0, 0.05], [np.inf, np.inf, 10.0]),
                        maxfev=20000)
    resid = float(np.sqrt(np.mean((_stretched(t, *popt) - y) ** 2)))
    return popt, resid


def decay_fit(obj, floor: float = NOISE_FLOOR, min_decades: float = 2.0,
              start: int = 1) -> FitReport:
    """Fit log|f^(xi)| ~ log C - c |xi|^kappa (grid function) or
    log|u_n| ~ log C - c n^gamma (sequence).

    Only the upper envelope above ``floor`` times the peak enters; the
    fitted window must span ``min_decades`` decades.  For sequences the
    entries n < ``start`` are skipped.
    """
    if isinstance(obj, GridFunction):
        mag = np.abs(obj.fourier)
        r = np.sqrt(np.sum(obj.dual_mesh() ** 2, axis=0)).ravel()
        mag = mag.ravel()
        # fold onto |xi| and keep the per-radius maximum
        rr, inv = np.unique(np.round(r, 12), return_inverse=True)
        env = np.zeros(rr.size)
        np.maximum.at(env, inv, mag)
        t, y = rr, env
        kind = "fourier"
    else:
        y = np.abs(np.asarray(obj, dtype=complex))
        t = np.arange(y.size, dtype=float)
        t, y = t[start:], y[start:]
        kind = "sequence"
    peak = y.max() if y.size else 0.0
    if peak == 0 or not np.isfinite(peak):
        raise InsufficientDynamicRange("no signal")
    # upper envelope: running max from the right, sampled where attained
    env = np.maximum.accumulate(y[::-1])[::-1]
    keep = (y >= floor * peak) & (y == env) & (y > 0)
    if kind == "fourier":
        i0 = int(np.argmax(y))
        keep &= np.arange(y.size) >= i0
    t, y = t[keep], y[keep]
    if t.size < 4:
        raise InsufficientDynamicRange("fewer than 4 envelope points above the noise floor")
    decades = float(np.log10(y.max() / y.min()))
    if decades < min_decades:
        raise InsufficientDynamicRange(f"only {decades:.2f} decades of decay above the noise floor")
    ly = np.log(y)
    slope = (ly[-1] - ly[0]) / max(t[-1] - t[0], 1e-300)
    popt, resid = _fit(t, ly, p0=(ly[0], max(-slope, 1e-3), 1.0))
    logC, c, g = (float(v) for v in popt)
    constants = {"logC": logC, "c": c, "exponent": g, "residual": resid, "decades": decades,
                 "window": [float(t[0]), float(t[-1])], "points": int(t.size)}
    if kind == "fourier":
        constants["s"] = 1.0 / g
    else:
        constants["gamma"] = g
    return FitReport(name=f"decay_fit[{kind}]", verdict=True, sup=float(peak), constants=constants)
