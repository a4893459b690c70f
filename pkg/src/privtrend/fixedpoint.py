"""Fixed-point encoding over the 64-bit ring.

All secret-shared values live in Z_{2^64}.  Reals are encoded with
FRAC_BITS fractional bits; negative values use two's complement.  The
in-scope magnitude budget (|value| < 2^15 after decoding, sums over up
to 2^20 elements) leaves ample headroom below the 2^63 sign boundary.
"""

from __future__ import annotations

import numpy as np

RING_BITS = 64
MODULUS = 1 << RING_BITS
MASK = MODULUS - 1

FRAC_BITS = 16
SCALE = 1 << FRAC_BITS

# Scale used for distance accumulation inside queries (products of two
# encoded coordinates plus extra query precision).
DIST_FRAC_BITS = 40

_SIGN_BIT = 1 << (RING_BITS - 1)


def to_ring(v: int) -> int:
    """Reduce a python integer into [0, 2^64)."""
    return v & MASK


def encode(x, frac_bits: int = FRAC_BITS) -> np.ndarray:
    """Encode a float (or array of floats) as ring elements."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * float(1 << frac_bits))
    return scaled.astype(np.int64).astype(np.uint64)


def encode_scalar(x: float, frac_bits: int = FRAC_BITS) -> int:
    return int(encode(x, frac_bits))


def decode(v, frac_bits: int = FRAC_BITS) -> np.ndarray:
    """Decode ring elements back to floats (two's complement signed)."""
    signed = np.asarray(v, dtype=np.uint64).astype(np.int64)
    return signed.astype(np.float64) / float(1 << frac_bits)


def decode_scalar(v: int, frac_bits: int = FRAC_BITS) -> float:
    return float(decode(np.uint64(to_ring(v)), frac_bits))


def signed_value(v: int) -> int:
    """Interpret a ring element as a signed integer in [-2^63, 2^63)."""
    v = to_ring(v)
    return v - MODULUS if v >= _SIGN_BIT else v


def as_uint64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)
