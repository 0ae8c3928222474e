"""Two's-complement fixed-point helpers on raw integer payloads.

A fixed-point value with word length ``W`` and integer length ``I`` is a
W-bit signed integer ``raw`` read as ``raw * 2**(I - W)``. All arithmetic is
done on Python ints, so intermediate results are exact.
"""

from __future__ import annotations

SATURATE = "saturate"
WRAP = "wrap"
MODES = (SATURATE, WRAP)


def int_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def saturate(raw: int, bits: int) -> int:
    lo, hi = int_range(bits)
    return lo if raw < lo else hi if raw > hi else raw


def wrap(raw: int, bits: int) -> int:
    mask = (1 << bits) - 1
    raw &= mask
    return raw - (1 << bits) if raw >> (bits - 1) else raw


def fit(raw: int, bits: int, mode: str = SATURATE) -> int:
    if mode == SATURATE:
        return saturate(raw, bits)
    if mode == WRAP:
        return wrap(raw, bits)
    raise ValueError(f"unknown overflow mode {mode!r}")


def wrap32(x: int) -> int:
    return ((x + 0x80000000) & 0xFFFFFFFF) - 0x80000000


def shift_round(raw: int, shift: int) -> int:
    """Compute ``raw * 2**-shift`` rounded half to even (shift may be <= 0)."""
    if shift <= 0:
        return raw << -shift
    q, r = divmod(raw, 1 << shift)
    half = 1 << (shift - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


def requantize(raw: int, from_frac: int, to_frac: int) -> int:
    return shift_round(raw, from_frac - to_frac)


def from_float(x: float, word_bits: int, integer_bits: int, mode: str = SATURATE) -> int:
    frac = word_bits - integer_bits
    if x != x:
        return 0
    if x in (float("inf"), float("-inf")):
        lo, hi = int_range(word_bits)
        return hi if x > 0 else lo
    # exact: float -> integer ratio, then round half even
    num, den = float(x).as_integer_ratio()
    if frac >= 0:
        num <<= frac
    else:
        den <<= -frac
    q, r = divmod(num, den)
    if 2 * r > den or (2 * r == den and q & 1):
        q += 1
    return fit(q, word_bits, mode)


def to_float(raw: int, word_bits: int, integer_bits: int) -> float:
    return raw * 2.0 ** (integer_bits - word_bits)


def add_format(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    """Result format (W, I) of fixed-point add/sub: union of both ranges, no growth bit."""
    (wa, ia), (wb, ib) = a, b
    frac = max(wa - ia, wb - ib)
    integer = max(ia, ib)
    return _cap(integer + frac, integer)


def mul_format(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    """Result format of a full-precision product."""
    (wa, ia), (wb, ib) = a, b
    return _cap(wa + wb, ia + ib)


def _cap(word: int, integer: int) -> tuple[int, int]:
    integer = min(integer, 64)
    # fractional bits are dropped first when the word would exceed 64 bits
    return min(word, 64), integer
