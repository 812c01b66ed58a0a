"""Exact rational helpers shared by every module.

Everything that decides a branch of the construction or a query verdict goes
through integer arithmetic. Floats only appear in summaries meant for humans.
"""
from __future__ import annotations

import enum
from fractions import Fraction
from functools import lru_cache
from math import gcd


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def to_fraction(value) -> Fraction:
    """Parse an exact rational.

    Accepts Fraction, int, or strings such as "3/4", "0.75" or "2". Floats are
    rejected because their binary expansion is rarely what the caller meant.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not an exact rational: {value!r}") from exc
    if isinstance(value, float):
        raise TypeError(f"float {value!r} is not an exact input; pass a string like '3/4'")
    raise TypeError(f"cannot interpret {type(value).__name__} as a rational")


def fraction_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def lcm(*values: int) -> int:
    out = 1
    for v in values:
        out = out * v // gcd(out, v)
    return out


def _cmp(a: int, b: int) -> Ordering:
    return Ordering((a > b) - (a < b))


@lru_cache(maxsize=1 << 16)
def threshold_compare(q: Fraction, exponent: Fraction) -> Ordering:
    """Compare ``q`` with ``2**(-exponent)`` exactly.

    With exponent = a/b (b > 0) this is the sign of q**b * 2**a - 1, which is
    decided on integers.
    """
    if q <= 0:
        raise ValueError("threshold_compare needs a positive mass")
    exponent = Fraction(exponent)
    a, b = exponent.numerator, exponent.denominator
    lhs = q.numerator ** b
    rhs = q.denominator ** b
    if a >= 0:
        lhs <<= a
    else:
        rhs <<= -a
    return _cmp(lhs, rhs)


def pow2_ge(q: Fraction, exponent: Fraction) -> bool:
    """q >= 2**(-exponent)."""
    return threshold_compare(q, exponent) != Ordering.LESS


def iroot(n: int, k: int) -> int:
    """floor(n ** (1/k)) for n >= 0."""
    if n < 0:
        raise ValueError("iroot of a negative integer")
    if n < 2 or k == 1:
        return n
    x = 1 << -(-n.bit_length() // k)
    while True:
        y = ((k - 1) * x + n // x ** (k - 1)) // k
        if y >= x:
            break
        x = y
    while x ** k > n:
        x -= 1
    while (x + 1) ** k <= n:
        x += 1
    return x


def floor_log2(q: Fraction) -> int:
    """The integer t with 2**t <= q < 2**(t+1)."""
    if q <= 0:
        raise ValueError("log of a non-positive number")
    u, v = q.numerator, q.denominator
    t = u.bit_length() - v.bit_length()
    if t >= 0:
        below = u < (v << t)
    else:
        below = (u << -t) < v
    return t - 1 if below else t


def log2_bracket(q: Fraction, bits: int = 8) -> tuple[Fraction, Fraction]:
    """Return (lo, hi) with lo <= log2(q) < hi and hi - lo = 2**-bits."""
    scale = 1 << bits
    t = floor_log2(Fraction(q.numerator ** scale, q.denominator ** scale))
    return Fraction(t, scale), Fraction(t + 1, scale)


def pow_bracket(r: Fraction, exponent: Fraction, bits: int = 64) -> tuple[Fraction, Fraction]:
    """Bracket r**exponent for r > 0 and a non-negative rational exponent.

    The result is (lo, hi) with lo <= r**exponent <= hi. When the power is
    rational the two ends coincide. Otherwise hi - lo is about 2**-bits
    relative to the value.
    """
    r = Fraction(r)
    exponent = Fraction(exponent)
    if r <= 0:
        raise ValueError("pow_bracket needs r > 0")
    if exponent < 0:
        raise ValueError("pow_bracket needs a non-negative exponent")
    a, b = exponent.numerator, exponent.denominator
    base = r ** a
    if b == 1:
        return base, base
    u, v = base.numerator, base.denominator
    ru, rv = iroot(u, b), iroot(v, b)
    if ru ** b == u and rv ** b == v:
        exact = Fraction(ru, rv)
        return exact, exact
    shift = bits + max(0, (v.bit_length() - u.bit_length()) // b + 2)
    y = iroot((u << (shift * b)) // v, b)
    return Fraction(y, 1 << shift), Fraction(y + 1, 1 << shift)


def sqrt_bracket(q: Fraction, bits: int) -> tuple[Fraction, Fraction]:
    """Bracket sqrt(q) for q >= 0 with relative width about 2**-bits."""
    if q < 0:
        raise ValueError("sqrt of a negative number")
    if q == 0:
        return Fraction(0), Fraction(0)
    return pow_bracket(q, Fraction(1, 2), bits)


def approx_log2(q: Fraction) -> float:
    """Floating log2 of a possibly tiny rational, for reports only."""
    import math

    t = floor_log2(q)
    mantissa = q / 2 ** t if t >= 0 else q * 2 ** (-t)
    return t + math.log2(float(mantissa))
