"""Online MPC protocol: multiplication, truncation, comparison.

Protocol steps are written as per-party generators.  A generator yields a
list of SVecs whose values should be opened (each party contributes its
share) and receives the corresponding public uint64 arrays.  Drivers --
the in-process one below, or the networked server session -- sum the
shares, feed the openings back, and MAC-check every opened value before
any result is released.

Comparison works by masked bit decomposition: to test x < y the parties
compute z = x - y in Z_{2^L} (valid while |x - y| < 2^{L-1}) and extract
its most significant bit.  z is opened masked with a random L-bit value r
assembled from dealer bits, so the opening is uniform; the MSB is then
recovered from the public masked value and the shared bits of r with a
borrow (bitwise less-than) circuit.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from ..errors import IntegrityFailure, RangeViolation
from ..fixedpoint import FRAC_BITS, MASK, as_uint64, to_ring
from .dealer import Dealer, PartyTape
from .shares import PartyCtx, SVec

# Default comparison width: covers |difference| < 2^47 in ring units,
# i.e. decoded magnitudes well past the 2^30 contract bound.
COMPARE_BITS = 48

_ONE = np.uint64(1)


def _zeros_like(s: SVec, shape) -> SVec:
    z = np.zeros(shape, dtype=np.uint64)
    return SVec(z, z.copy() if s.mac is not None else None)


def beaver_mul(ctx: PartyCtx, tape: PartyTape, x: SVec, y: SVec):
    """Raw ring product of two shared values (one triple per element)."""
    shape = x.payload.shape
    m = x.payload.size
    a, b, c = tape.take_triples(m)
    a, b, c = a.reshape(shape), b.reshape(shape), c.reshape(shape)
    e_pub, d_pub = yield [x - a, y - b]
    z = c + b.mul_public(e_pub) + a.mul_public(d_pub)
    return z.add_public(e_pub * d_pub, ctx)


def truncate(ctx: PartyCtx, tape: PartyTape, x: SVec, shift: int = FRAC_BITS):
    """Deterministic right shift of a shared fixed-point value.

    Valid for |decoded ring value| < 2^46.  Error at most one unit in the
    truncated scale.
    """
    shape = x.payload.shape
    n = x.payload.size
    nbits = 62
    rbits = tape.take_bits(n * nbits).reshape(n, nbits)
    weights = (_ONE << np.arange(nbits, dtype=np.uint64)).astype(np.uint64)
    r = rbits.mul_public(weights).sum(axis=1).reshape(shape)
    r_shifted = (
        rbits[:, shift:]
        .mul_public(weights[: nbits - shift])
        .sum(axis=1)
        .reshape(shape)
    )
    offset = np.uint64(1 << 47)
    masked = (x + r).add_public(offset, ctx)
    (m_pub,) = yield [masked]
    t_pub = m_pub >> np.uint64(shift)
    correction = t_pub - np.uint64(1 << (47 - shift))
    return (-r_shifted).add_public(correction, ctx)


def fixed_point_mul(ctx: PartyCtx, tape: PartyTape, x: SVec, y: SVec):
    """Fixed-point product: raw multiply then rescale by 2^-f."""
    raw = yield from beaver_mul(ctx, tape, x, y)
    result = yield from truncate(ctx, tape, raw, FRAC_BITS)
    return result


def msb(ctx: PartyCtx, tape: PartyTape, z: SVec, nbits: int = COMPARE_BITS):
    """Share of the top bit of z viewed in Z_{2^nbits}.

    For z = x - y with |x - y| < 2^{nbits-1} this is exactly [x < y].
    """
    shape = z.payload.shape
    n = z.payload.size
    zf = z.reshape(n)
    mod_mask = np.uint64((1 << nbits) - 1)

    rbits = tape.take_bits(n * nbits).reshape(n, nbits)
    weights = (_ONE << np.arange(nbits, dtype=np.uint64)).astype(np.uint64)
    r = rbits.mul_public(weights).sum(axis=1)

    (m_pub,) = yield [zf + r]
    m_pub = m_pub & mod_mask
    mbits = (m_pub[:, None] >> np.arange(nbits, dtype=np.uint64)) & _ONE

    # low bits: does m_low < r_low?  (borrow into the top bit)
    low = nbits - 1
    r_low = rbits[:, :low]
    m_low = mbits[:, :low]
    # d_i = m_i XOR r_i, linear in r since m is public
    d = r_low.mul_public(_ONE - np.uint64(2) * m_low).add_public(m_low, ctx)

    # suffix OR (over bit positions, MSB-down) via Hillis-Steele doubling
    f = d
    step = 1
    while step < low:
        shifted_p = np.zeros_like(f.payload)
        shifted_p[:, : low - step] = f.payload[:, step:]
        shifted_m = None
        if f.mac is not None:
            shifted_m = np.zeros_like(f.mac)
            shifted_m[:, : low - step] = f.mac[:, step:]
        g = SVec(shifted_p, shifted_m)
        fg = yield from beaver_mul(ctx, tape, f, g)
        f = f + g - fg
        step *= 2

    # u_i = 1 at the most significant differing bit position
    up = np.zeros_like(f.payload)
    up[:, :] = f.payload
    up[:, : low - 1] -= f.payload[:, 1:]
    um = None
    if f.mac is not None:
        um = f.mac.copy()
        um[:, : low - 1] -= f.mac[:, 1:]
    u = SVec(up, um)

    prod = yield from beaver_mul(ctx, tape, u, r_low)
    beta = prod.sum(axis=1)

    m_top = mbits[:, low]
    t = rbits[:, low].mul_public(_ONE - np.uint64(2) * m_top).add_public(m_top, ctx)
    tb = yield from beaver_mul(ctx, tape, t, beta)
    res = t + beta - tb.mul_public(np.uint64(2))
    return res.reshape(shape)


def less_than_public(
    ctx: PartyCtx,
    tape: PartyTape,
    d: SVec,
    c_public,
    nbits: int = COMPARE_BITS,
):
    """[d < c] for public c (elementwise; strict)."""
    c_arr = as_uint64(c_public)
    # public bound metadata: the constant itself must sit inside the window
    c_signed = c_arr.astype(np.int64)
    if np.any(np.abs(c_signed) >= (1 << (nbits - 1))):
        raise RangeViolation("public comparison bound outside protocol range")
    diff = d.add_public((np.uint64(0) - c_arr), ctx)
    bit = yield from msb(ctx, tape, diff, nbits)
    return bit


def less_than_shared(ctx: PartyCtx, tape: PartyTape, x: SVec, y: SVec, nbits: int = COMPARE_BITS):
    """[x < y] for shared x, y (strict)."""
    bit = yield from msb(ctx, tape, x - y, nbits)
    return bit


def greater_equal_shared(ctx: PartyCtx, tape: PartyTape, x: SVec, y: SVec, nbits: int = COMPARE_BITS):
    """[x >= y] for shared x, y."""
    lt = yield from less_than_shared(ctx, tape, x, y, nbits)
    return (-lt).add_public(_ONE, ctx)


# -- local lockstep driver ---------------------------------------------


def run_local(
    gens: Sequence,
    alpha: Optional[int] = None,
    check_macs: bool = False,
    tamper=None,
) -> list:
    """Drive one generator per party to completion, serving openings.

    MAC checks on every opened value are deferred (SPDZ style) and
    verified before results are released.  `tamper(party, round, svecs)`
    is a test hook that may corrupt a party's outgoing shares.
    """
    n = len(gens)
    inputs: List[Optional[list]] = [None] * n
    finished = [False] * n
    results: List = [None] * n
    opened: List[tuple] = []
    round_no = 0
    while not all(finished):
        reqs: List[Optional[list]] = []
        for i, g in enumerate(gens):
            if finished[i]:
                reqs.append(None)
                continue
            try:
                reqs.append(g.send(inputs[i]))
            except StopIteration as stop:
                finished[i] = True
                results[i] = stop.value
                reqs.append(None)
        if all(finished):
            break
        if any(r is None for r in reqs):
            raise RuntimeError("parties desynchronized during protocol run")
        if tamper is not None:
            for i in range(n):
                reqs[i] = tamper(i, round_no, reqs[i])
        publics = []
        for j in range(len(reqs[0])):
            total = reqs[0][j].payload.copy()
            for r in reqs[1:]:
                total = total + r[j].payload
            publics.append(total)
            if alpha is not None and check_macs:
                if any(r[j].mac is None for r in reqs):
                    raise IntegrityFailure("opened value missing MAC shares")
                mac_sum = reqs[0][j].mac.copy()
                for r in reqs[1:]:
                    mac_sum = mac_sum + r[j].mac
                opened.append((total, mac_sum))
        inputs = [publics] * n
        round_no += 1
    if alpha is not None and check_macs:
        a = np.uint64(to_ring(alpha))
        for total, mac_sum in opened:
            if not np.array_equal(mac_sum, total * a):
                raise IntegrityFailure("MAC check failed on an opened value")
    return results


# -- simulator-style wrappers (all parties in one call) ----------------


def make_ctxs(dealer: Dealer) -> list[PartyCtx]:
    return [
        PartyCtx(i, dealer.n_parties, dealer.alpha_shares[i])
        for i in range(dealer.n_parties)
    ]


def beaver_multiply(
    x_shares: Sequence[SVec],
    y_shares: Sequence[SVec],
    dealer: Dealer,
    fixed_point: bool = True,
    check_macs: bool = False,
) -> list[SVec]:
    ctxs = make_ctxs(dealer)
    op = fixed_point_mul if fixed_point else beaver_mul
    gens = [
        op(ctxs[i], dealer.tapes[i], x_shares[i], y_shares[i])
        for i in range(dealer.n_parties)
    ]
    return run_local(gens, alpha=dealer.alpha, check_macs=check_macs)


def secure_less_than(
    d_shares: Sequence[SVec],
    c_public,
    dealer: Dealer,
    nbits: int = COMPARE_BITS,
    check_macs: bool = False,
) -> list[SVec]:
    """[d < c] with public c; returns shares of a 0/1 ring value."""
    ctxs = make_ctxs(dealer)
    gens = [
        less_than_public(ctxs[i], dealer.tapes[i], d_shares[i], c_public, nbits)
        for i in range(dealer.n_parties)
    ]
    return run_local(gens, alpha=dealer.alpha, check_macs=check_macs)
