"""Polynomials and SISO transfer functions with optional transport delay.

Coefficients are stored in descending powers of ``s`` throughout, so that
``[1, 3, 2]`` is ``s^2 + 3 s + 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "Polynomial",
    "TransferFunction",
    "StabilityVerdict",
    "StabilityMethod",
    "poly_mul",
    "poly_roots",
    "routh_stable",
    "tf_series",
    "tf_feedback_unity",
    "tf_dc_gain",
    "pade",
]

TRIM_RTOL = 1e-12
ROUTH_EPS = 1e-12
ROUTH_PIVOT_TOL = 1e-9
# Roots closer than this to the imaginary axis are flagged as boundary cases.
BOUNDARY_MARGIN = 1e-6


class Polynomial:
    """Immutable real polynomial, coefficients in descending degree order."""

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float]):
        if not isinstance(coeffs, (np.ndarray, list, tuple)):
            coeffs = list(coeffs)
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
        if c.size == 0:
            raise ValueError("polynomial needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        scale = np.max(np.abs(c))
        if scale > 0:
            nz = np.flatnonzero(np.abs(c) > TRIM_RTOL * scale)
            c = c[nz[0]:]
        else:
            c = c[-1:]
        c = c.copy()
        c.setflags(write=False)
        self._c = c

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return self._c.size - 1

    def is_zero(self) -> bool:
        return self.degree == 0 and self._c[0] == 0.0

    def __call__(self, s):
        return np.polyval(self._c, s)

    def __mul__(self, other: Polynomial) -> Polynomial:
        return poly_mul(self, other)

    def __add__(self, other: Polynomial) -> Polynomial:
        return Polynomial(np.polyadd(self._c, other._c))

    def __neg__(self) -> Polynomial:
        return Polynomial(-self._c)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and np.array_equal(self._c, other._c)

    def __hash__(self):
        return hash(self._c.tobytes())

    def __repr__(self) -> str:
        return f"Polynomial({self._c.tolist()})"

    def tolist(self) -> list[float]:
        return self._c.tolist()

    def to_string(self, var: str = "s", digits: int = 4) -> str:
        terms = []
        n = self.degree
        for i, a in enumerate(self._c):
            p = n - i
            if a == 0.0:
                continue
            mag = f"{abs(a):.{digits}g}"
            if p == 0:
                body = mag
            else:
                pw = var if p == 1 else f"{var}^{p}"
                body = pw if mag == "1" else f"{mag}{pw}"
            sign = "-" if a < 0 else "+"
            terms.append((sign, body))
        if not terms:
            return "0"
        out = ("-" if terms[0][0] == "-" else "") + terms[0][1]
        for sign, body in terms[1:]:
            out += f" {sign} {body}"
        return out


def _as_poly(p) -> Polynomial:
    return p if isinstance(p, Polynomial) else Polynomial(p)


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    """Product of two polynomials (coefficient convolution)."""
    return Polynomial(np.convolve(_as_poly(a).coeffs, _as_poly(b).coeffs))


def poly_roots(p: Polynomial) -> np.ndarray:
    """Roots of ``p`` from the eigenvalues of its balanced companion matrix.

    Exact zero roots (trailing zero coefficients) are split off first.
    """
    p = _as_poly(p)
    if p.degree < 1:
        raise ValueError("constant polynomial")
    c = p.coeffs
    n_zero = 0
    while c.size > 1 and c[-1] == 0.0:
        c = c[:-1]
        n_zero += 1
    roots = np.zeros(n_zero, dtype=complex)
    n = c.size - 1
    if n == 0:
        return roots
    comp = np.zeros((n, n))
    comp[0, :] = -c[1:] / c[0]
    comp[np.arange(1, n), np.arange(n - 1)] = 1.0
    bal, _ = scipy.linalg.matrix_balance(comp, permute=False)
    r = scipy.linalg.eigvals(bal, check_finite=False)
    return np.concatenate([r.astype(complex), roots])


class StabilityMethod(str, Enum):
    ROUTH = "routh"
    ROOTS = "roots"
    SIMULATION = "simulation"


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    max_real_part: float
    method: StabilityMethod
    near_boundary: bool = False


def _max_real(p: Polynomial) -> float:
    if p.degree < 1:
        return -math.inf
    return float(np.max(poly_roots(p).real))


def routh_stable(p: Polynomial) -> StabilityVerdict:
    """Routh-Hurwitz test: are all roots of ``p`` in the open left half-plane?

    A zero pivot is replaced by a small epsilon; whenever any pivot is tiny
    the verdict falls back to the root-based sign test.
    """
    p = _as_poly(p)
    max_re = _max_real(p)
    near = bool(abs(max_re) < BOUNDARY_MARGIN) if math.isfinite(max_re) else False
    if p.degree < 1:
        return StabilityVerdict(True, max_re, StabilityMethod.ROUTH, near)
    c = p.coeffs / np.max(np.abs(p.coeffs))
    if c[0] < 0:
        c = -c
    n = c.size
    width = (n + 1) // 2
    prev = np.zeros(width)
    cur = np.zeros(width)
    prev[: len(c[0::2])] = c[0::2]
    cur[: len(c[1::2])] = c[1::2]
    pivots = [prev[0]]
    small_pivot = False
    for _ in range(n - 1):
        if abs(cur[0]) < ROUTH_PIVOT_TOL:
            small_pivot = True
        if cur[0] == 0.0:
            cur[0] = ROUTH_EPS
        pivots.append(cur[0])
        nxt = np.zeros(width)
        nxt[:-1] = (cur[0] * prev[1:] - prev[0] * cur[1:]) / cur[0]
        prev, cur = cur, nxt
    if small_pivot:
        return StabilityVerdict(bool(max_re < 0), max_re, StabilityMethod.ROOTS, near)
    stable = all(v > 0 for v in pivots)
    return StabilityVerdict(stable, max_re, StabilityMethod.ROUTH, near)


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Rational SISO transfer function ``num(s)/den(s) * exp(-delay*s)``."""

    num: Polynomial
    den: Polynomial
    delay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "num", _as_poly(self.num))
        object.__setattr__(self, "den", _as_poly(self.den))
        object.__setattr__(self, "delay", float(self.delay))
        if self.den.is_zero():
            raise ValueError("denominator is identically zero")
        if self.delay < 0 or not math.isfinite(self.delay):
            raise ValueError("delay must be finite and nonnegative")
        if self.num.degree > self.den.degree and not self.num.is_zero():
            raise ValueError("improper transfer function: deg(num) > deg(den)")

    @classmethod
    def from_coeffs(cls, num: Sequence[float], den: Sequence[float], delay: float = 0.0):
        return cls(Polynomial(num), Polynomial(den), delay)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        val = self.num(s) / self.den(s)
        if self.delay:
            val = val * np.exp(-self.delay * s)
        return val

    def __mul__(self, other: TransferFunction) -> TransferFunction:
        return tf_series(self, other)

    def __eq__(self, other) -> bool:
        return (isinstance(other, TransferFunction) and self.num == other.num
                and self.den == other.den and self.delay == other.delay)

    def __hash__(self):
        return hash((self.num, self.den, self.delay))

    @property
    def rational(self) -> TransferFunction:
        """The same transfer function with the delay dropped."""
        return TransferFunction(self.num, self.den, 0.0) if self.delay else self

    def poles(self) -> np.ndarray:
        return poly_roots(self.den) if self.den.degree >= 1 else np.zeros(0, dtype=complex)

    def zeros(self) -> np.ndarray:
        return poly_roots(self.num) if self.num.degree >= 1 else np.zeros(0, dtype=complex)

    def to_dict(self) -> dict:
        d = {"num": self.num.tolist(), "den": self.den.tolist()}
        if self.delay:
            d["delay"] = self.delay
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TransferFunction:
        return cls.from_coeffs(d["num"], d["den"], d.get("delay", 0.0) or 0.0)

    def __str__(self) -> str:
        num = self.num.to_string()
        den = self.den.to_string()
        if self.num.degree > 0:
            num = f"({num})"
        if self.delay:
            num = f"{num}*exp(-{self.delay:.4g}s)"
        if self.den.degree == 0:
            return num if den == "1" else f"{num}/{den}"
        return f"{num}/({den})"

    __repr__ = __str__


def tf_series(a: TransferFunction, b: TransferFunction) -> TransferFunction:
    """Series connection ``a*b``; no pole-zero cancellation is attempted."""
    return TransferFunction(poly_mul(a.num, b.num), poly_mul(a.den, b.den), a.delay + b.delay)


def tf_feedback_unity(loop: TransferFunction) -> TransferFunction:
    """Closed loop ``L/(1+L)`` under unity negative feedback."""
    if loop.delay != 0:
        raise ValueError("rational feedback requires delay-free loop")
    return TransferFunction(loop.num, loop.den + loop.num)


def tf_dc_gain(g: TransferFunction) -> float:
    n0 = float(g.num.coeffs[-1]) if g.num.degree >= 0 else 0.0
    d0 = float(g.den.coeffs[-1])
    if d0 == 0.0:
        if n0 == 0.0:
            raise ZeroDivisionError("cancel common integrator before DC evaluation")
        lowest = g.den.coeffs[np.flatnonzero(g.den.coeffs)[-1]]
        return math.copysign(math.inf, n0 * lowest)
    return n0 / d0


def pade(delay: float, order: int = 3) -> TransferFunction:
    """Diagonal Padé approximant of ``exp(-delay*s)``."""
    if delay == 0:
        return TransferFunction.from_coeffs([1.0], [1.0])
    n = order
    c = [math.factorial(2 * n - k) * math.factorial(n)
         / (math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k)) for k in range(n + 1)]
    den = [c[k] * delay ** k for k in range(n + 1)][::-1]
    num = [c[k] * (-delay) ** k for k in range(n + 1)][::-1]
    return TransferFunction.from_coeffs(num, den)
