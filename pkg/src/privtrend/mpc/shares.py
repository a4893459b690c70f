"""Additive secret sharing over Z_{2^64} with optional SPDZ-style MACs.

A secret v is held as payloads p_0..p_{n-1} with sum(p_i) = v mod 2^64.
When MACs are on, parties additionally hold m_i with sum(m_i) = alpha * v
for a global key alpha known only to the (trusted) dealer.  Alpha is
forced odd, so any nonzero additive tamper of a payload shifts alpha*v
by a nonzero amount and the check fails with certainty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import IntegrityFailure
from ..fixedpoint import MASK, as_uint64, to_ring


@dataclass(frozen=True)
class PartyCtx:
    """Per-party protocol context."""

    party_id: int
    n_parties: int
    alpha_share: Optional[int] = None  # share of the global MAC key

    @property
    def macs_enabled(self) -> bool:
        return self.alpha_share is not None


@dataclass(frozen=True)
class Share:
    """One party's scalar share (spec-level surface; vectors use SVec)."""

    party_id: int
    payload: int
    mac: Optional[int] = None


class SVec:
    """One party's share of a vector of ring elements.

    payload (and mac, when present) are uint64 arrays of identical shape.
    Immutable by convention: operations return new SVecs.
    """

    __slots__ = ("payload", "mac")

    def __init__(self, payload: np.ndarray, mac: Optional[np.ndarray] = None):
        self.payload = as_uint64(payload)
        self.mac = None if mac is None else as_uint64(mac)

    @property
    def shape(self):
        return self.payload.shape

    def __add__(self, other: "SVec") -> "SVec":
        mac = None
        if self.mac is not None and other.mac is not None:
            mac = self.mac + other.mac
        return SVec(self.payload + other.payload, mac)

    def __sub__(self, other: "SVec") -> "SVec":
        mac = None
        if self.mac is not None and other.mac is not None:
            mac = self.mac - other.mac
        return SVec(self.payload - other.payload, mac)

    def __neg__(self) -> "SVec":
        zero = np.uint64(0)
        return SVec(zero - self.payload, None if self.mac is None else zero - self.mac)

    def mul_public(self, c) -> "SVec":
        """Multiply by a public ring constant (scalar or array)."""
        c = as_uint64(c)
        return SVec(self.payload * c, None if self.mac is None else self.mac * c)

    def add_public(self, c, ctx: PartyCtx) -> "SVec":
        """Add a public ring constant.  Payload lands on party 0 only."""
        c = as_uint64(c)
        payload = self.payload + c if ctx.party_id == 0 else self.payload.copy()
        mac = self.mac
        if mac is not None:
            mac = mac + c * np.uint64(to_ring(ctx.alpha_share))
        return SVec(payload, mac)

    def reshape(self, *shape) -> "SVec":
        return SVec(
            self.payload.reshape(*shape),
            None if self.mac is None else self.mac.reshape(*shape),
        )

    def __getitem__(self, idx) -> "SVec":
        return SVec(self.payload[idx], None if self.mac is None else self.mac[idx])

    def sum(self, axis=None) -> "SVec":
        # uint64 sums wrap mod 2^64, which is exactly ring addition
        p = self.payload.sum(axis=axis, dtype=np.uint64)
        m = None if self.mac is None else self.mac.sum(axis=axis, dtype=np.uint64)
        return SVec(np.atleast_1d(p), None if m is None else np.atleast_1d(m))

    def copy(self) -> "SVec":
        return SVec(self.payload.copy(), None if self.mac is None else self.mac.copy())


def concat(svecs: Sequence[SVec], axis: int = 0) -> SVec:
    mac = None
    if all(s.mac is not None for s in svecs):
        mac = np.concatenate([s.mac for s in svecs], axis=axis)
    return SVec(np.concatenate([s.payload for s in svecs], axis=axis), mac)


def share_array(
    values,
    n_parties: int,
    rng: np.random.Generator,
    alpha: Optional[int] = None,
) -> list[SVec]:
    """Split a uint64 array into n additive shares (optionally with MACs).

    Any n-1 of the returned payload arrays are uniform on the ring.
    """
    if n_parties < 2:
        raise ValueError("need at least 2 parties")
    values = as_uint64(values)
    parts = [
        rng.integers(0, 1 << 64, size=values.shape, dtype=np.uint64)
        for _ in range(n_parties - 1)
    ]
    last = values.copy()
    for p in parts:
        last = last - p
    parts.append(last)

    macs: list[Optional[np.ndarray]] = [None] * n_parties
    if alpha is not None:
        mac_total = values * np.uint64(to_ring(alpha))
        mparts = [
            rng.integers(0, 1 << 64, size=values.shape, dtype=np.uint64)
            for _ in range(n_parties - 1)
        ]
        mlast = mac_total
        for m in mparts:
            mlast = mlast - m
        macs = mparts + [mlast]
    return [SVec(p, m) for p, m in zip(parts, macs)]


def reconstruct_array(
    svecs: Sequence[SVec],
    check_macs: bool = False,
    alpha: Optional[int] = None,
) -> np.ndarray:
    """Sum payloads mod 2^64; verify sum(macs) == alpha * value if asked."""
    total = svecs[0].payload.copy()
    for s in svecs[1:]:
        total = total + s.payload
    if check_macs:
        if alpha is None:
            raise ValueError("MAC check requires the global key")
        if any(s.mac is None for s in svecs):
            raise IntegrityFailure("MAC shares missing on a share bundle")
        mac_total = svecs[0].mac.copy()
        for s in svecs[1:]:
            mac_total = mac_total + s.mac
        expected = total * np.uint64(to_ring(alpha))
        if not np.array_equal(mac_total, expected):
            raise IntegrityFailure("MAC relation violated: tampered share detected")
    return total


def share_scalar(
    value: int,
    n_parties: int,
    rng: np.random.Generator,
    alpha: Optional[int] = None,
) -> list[Share]:
    svecs = share_array(np.uint64(to_ring(value)), n_parties, rng, alpha)
    return [
        Share(i, int(s.payload), None if s.mac is None else int(s.mac))
        for i, s in enumerate(svecs)
    ]


def reconstruct(
    shares: Sequence[Share],
    check_macs: bool = False,
    alpha: Optional[int] = None,
) -> int:
    svecs = [
        SVec(
            np.uint64(to_ring(s.payload)),
            None if s.mac is None else np.uint64(to_ring(s.mac)),
        )
        for s in shares
    ]
    return int(reconstruct_array(svecs, check_macs=check_macs, alpha=alpha))


def svecs_to_shares(svecs: Sequence[SVec]) -> list[Share]:
    return [
        Share(i, int(s.payload), None if s.mac is None else int(s.mac))
        for i, s in enumerate(svecs)
    ]
