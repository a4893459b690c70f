"""Trusted preprocessing dealer: Beaver triples, shared bits, shared noise.

The dealer stands in for a full offline phase.  It samples correlated
randomness from a seeded PRNG, splits it into per-party tapes, and can
extend live tapes on demand (desk-scale convenience).  Tapes loaded from
files are fixed: exhaustion raises instead of silently reusing material.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..errors import DealerExhausted
from ..fixedpoint import encode
from .shares import SVec, share_array

TAPE_MAGIC = b"SYNTAPE1"


@dataclass
class TapeCounts:
    triples: int = 0
    random_bits: int = 0
    laplace: Dict[float, int] = field(default_factory=dict)


class _Pool:
    """Append-only pool of share material with a consume cursor."""

    def __init__(self, arrays: List[np.ndarray], macs: Optional[List[np.ndarray]]):
        self.arrays = arrays  # parallel streams, e.g. [a, b, c] for triples
        self.macs = macs
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.arrays[0]) - self.pos

    def extend(self, arrays: List[np.ndarray], macs: Optional[List[np.ndarray]]):
        # drop the consumed prefix first so repeated live extension stays
        # O(remaining + new) instead of re-copying the whole history
        if self.pos:
            self.arrays = [a[self.pos :] for a in self.arrays]
            if self.macs is not None:
                self.macs = [m[self.pos :] for m in self.macs]
            self.pos = 0
        self.arrays = [np.concatenate([old, new]) for old, new in zip(self.arrays, arrays)]
        if self.macs is not None and macs is not None:
            self.macs = [np.concatenate([old, new]) for old, new in zip(self.macs, macs)]

    def take(self, m: int) -> List[SVec]:
        lo, hi = self.pos, self.pos + m
        self.pos = hi
        if self.macs is None:
            return [SVec(a[lo:hi]) for a in self.arrays]
        return [SVec(a[lo:hi], mm[lo:hi]) for a, mm in zip(self.arrays, self.macs)]


def _empty_pool(n_streams: int, macs: bool) -> _Pool:
    z = [np.zeros(0, dtype=np.uint64) for _ in range(n_streams)]
    return _Pool(z, [np.zeros(0, dtype=np.uint64) for _ in range(n_streams)] if macs else None)


class PartyTape:
    """One party's view of the dealer tape."""

    def __init__(self, party_id: int, n_parties: int, macs: bool, seed_commitment: bytes):
        self.party_id = party_id
        self.n_parties = n_parties
        self.has_macs = macs
        self.seed_commitment = seed_commitment
        self.triples = _empty_pool(3, macs)
        self.bits = _empty_pool(1, macs)
        self.laplace: Dict[float, _Pool] = {}
        self.laplace_draws: Dict[float, int] = {}
        self.dealer: Optional["Dealer"] = None  # set when live extension is allowed
        # the dealer's live extension may touch this tape from another
        # party's thread; all pool reads/writes go through this lock
        self.lock = threading.Lock()

    # -- consumption ---------------------------------------------------

    def _take(self, get_pool, m: int, kind: str, scale: Optional[float] = None):
        while True:
            with self.lock:
                pool = get_pool()
                if pool is not None and pool.remaining >= m:
                    return pool.take(m)
                have = 0 if pool is None else pool.remaining
            if self.dealer is None:
                raise DealerExhausted(f"tape out of {kind} (need {m}, have {have})")
            want = max(m - have, 64 if kind == "laplace" else 4096)
            if kind == "triples":
                self.dealer.extend(TapeCounts(triples=want))
            elif kind == "bits":
                self.dealer.extend(TapeCounts(random_bits=want))
            else:
                self.dealer.extend(TapeCounts(laplace={scale: want}))

    def take_triples(self, m: int):
        a, b, c = self._take(lambda: self.triples, m, "triples")
        return a, b, c

    def take_bits(self, m: int) -> SVec:
        return self._take(lambda: self.bits, m, "bits")[0]

    def take_laplace(self, scale: float, m: int = 1) -> SVec:
        scale = float(scale)
        out = self._take(lambda: self.laplace.get(scale), m, "laplace", scale)[0]
        self.laplace_draws[scale] = self.laplace_draws.get(scale, 0) + m
        return out

    def counts(self) -> TapeCounts:
        return TapeCounts(
            triples=len(self.triples.arrays[0]),
            random_bits=len(self.bits.arrays[0]),
            laplace={s: len(p.arrays[0]) for s, p in self.laplace.items()},
        )


class Dealer:
    """Trusted source of correlated randomness for all parties."""

    def __init__(
        self,
        n_parties: int,
        seed: int,
        macs: bool = True,
        alpha: Optional[int] = None,
    ):
        if n_parties < 2:
            raise ValueError("need at least 2 parties")
        self.n_parties = n_parties
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        # party threads may trigger live extension concurrently; appends
        # must land on every tape in the same order
        self._lock = threading.Lock()
        self.seed_commitment = hashlib.sha256(
            b"privtrend-tape-seed:" + str(seed).encode()
        ).digest()
        self.alpha: Optional[int] = None
        if macs:
            if alpha is not None:
                # restart path: MACs on persisted shares were made under
                # the original key, so the key must survive the dealer
                if alpha % 2 == 0:
                    raise ValueError("MAC key must be odd")
                self.alpha = alpha
            else:
                # odd key: any nonzero additive tamper shifts alpha*v detectably
                self.alpha = (int(self.rng.integers(0, 1 << 63, dtype=np.uint64)) << 1) | 1
        self.alpha_shares = self._share_key()
        self.tapes = [
            PartyTape(i, n_parties, macs, self.seed_commitment) for i in range(n_parties)
        ]
        for t in self.tapes:
            t.dealer = self

    def _share_key(self) -> List[Optional[int]]:
        if self.alpha is None:
            return [None] * self.n_parties
        parts = [
            int(self.rng.integers(0, 1 << 64, dtype=np.uint64))
            for _ in range(self.n_parties - 1)
        ]
        parts.append((self.alpha - sum(parts)) % (1 << 64))
        return parts

    def generate(self, counts: TapeCounts) -> List[PartyTape]:
        self.extend(counts)
        return self.tapes

    def extend(self, counts: TapeCounts) -> None:
        with self._lock:
            self._extend_locked(counts)

    def _extend_locked(self, counts: TapeCounts) -> None:
        if counts.triples:
            a = self.rng.integers(0, 1 << 64, size=counts.triples, dtype=np.uint64)
            b = self.rng.integers(0, 1 << 64, size=counts.triples, dtype=np.uint64)
            c = a * b
            shares = [share_array(v, self.n_parties, self.rng, self.alpha) for v in (a, b, c)]
            for i, tape in enumerate(self.tapes):
                arrays = [shares[k][i].payload for k in range(3)]
                macs = [shares[k][i].mac for k in range(3)] if self.alpha else None
                with tape.lock:
                    tape.triples.extend(arrays, macs)
        if counts.random_bits:
            bits = self.rng.integers(0, 2, size=counts.random_bits, dtype=np.uint64)
            shares = share_array(bits, self.n_parties, self.rng, self.alpha)
            for i, tape in enumerate(self.tapes):
                with tape.lock:
                    tape.bits.extend(
                        [shares[i].payload], [shares[i].mac] if self.alpha else None
                    )
        for scale, m in counts.laplace.items():
            scale = float(scale)
            samples = self.rng.laplace(0.0, scale, size=m)
            enc = encode(samples)
            shares = share_array(enc, self.n_parties, self.rng, self.alpha)
            for i, tape in enumerate(self.tapes):
                with tape.lock:
                    if scale not in tape.laplace:
                        tape.laplace[scale] = _empty_pool(1, tape.has_macs)
                    tape.laplace[scale].extend(
                        [shares[i].payload], [shares[i].mac] if self.alpha else None
                    )


# -- tape persistence --------------------------------------------------
#
# Versioned binary, little-endian:
#   magic "SYNTAPE1" | n_parties u8 | counts u64 x3 (triples, bits,
#   laplace-total) | seed-commitment 32 bytes | party_id u8 | mac u8 |
#   alpha_share u64 | triple arrays a,b,c (+macs) | bit array (+macs) |
#   n_scales u32 | per scale: f64 scale, u64 count, array (+macs)


def _write_arr(fh, arr: np.ndarray):
    fh.write(arr.astype("<u8").tobytes())


def _read_arr(fh, n: int) -> np.ndarray:
    return np.frombuffer(fh.read(8 * n), dtype="<u8").astype(np.uint64)


def save_tape(path, tape: PartyTape, alpha_share: Optional[int] = None) -> None:
    counts = tape.counts()
    lap_total = sum(counts.laplace.values())
    with open(path, "wb") as fh:
        fh.write(TAPE_MAGIC)
        fh.write(struct.pack("<B", tape.n_parties))
        fh.write(struct.pack("<QQQ", counts.triples, counts.random_bits, lap_total))
        fh.write(tape.seed_commitment)
        fh.write(struct.pack("<BB", tape.party_id, 1 if tape.has_macs else 0))
        fh.write(struct.pack("<Q", (alpha_share or 0) % (1 << 64)))
        for arr in tape.triples.arrays:
            _write_arr(fh, arr)
        if tape.has_macs:
            for arr in tape.triples.macs:
                _write_arr(fh, arr)
        _write_arr(fh, tape.bits.arrays[0])
        if tape.has_macs:
            _write_arr(fh, tape.bits.macs[0])
        fh.write(struct.pack("<I", len(tape.laplace)))
        for scale, pool in sorted(tape.laplace.items()):
            fh.write(struct.pack("<dQ", scale, len(pool.arrays[0])))
            _write_arr(fh, pool.arrays[0])
            if tape.has_macs:
                _write_arr(fh, pool.macs[0])


def load_tape(path) -> tuple[PartyTape, Optional[int]]:
    with open(path, "rb") as fh:
        if fh.read(8) != TAPE_MAGIC:
            raise ValueError("not a tape file")
        (n_parties,) = struct.unpack("<B", fh.read(1))
        n_trip, n_bits, _ = struct.unpack("<QQQ", fh.read(24))
        commitment = fh.read(32)
        party_id, mac_flag = struct.unpack("<BB", fh.read(2))
        (alpha_share,) = struct.unpack("<Q", fh.read(8))
        tape = PartyTape(party_id, n_parties, bool(mac_flag), commitment)
        arrays = [_read_arr(fh, n_trip) for _ in range(3)]
        macs = [_read_arr(fh, n_trip) for _ in range(3)] if mac_flag else None
        tape.triples = _Pool(arrays, macs)
        barr = [_read_arr(fh, n_bits)]
        bmac = [_read_arr(fh, n_bits)] if mac_flag else None
        tape.bits = _Pool(barr, bmac)
        (n_scales,) = struct.unpack("<I", fh.read(4))
        for _ in range(n_scales):
            scale, count = struct.unpack("<dQ", fh.read(16))
            arr = [_read_arr(fh, count)]
            mac = [_read_arr(fh, count)] if mac_flag else None
            tape.laplace[scale] = _Pool(arr, mac)
    return tape, (alpha_share if mac_flag else None)


def tape_file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
