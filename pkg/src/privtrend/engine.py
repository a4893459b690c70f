"""Query engine: the four query types over per-epoch share stores.

Distances are computed with scalar (public-query) multiplications only:
    d = sum(x_sq) - 2 q . x + |q|^2
accumulated at DIST_FRAC_BITS fixed-point scale, followed by one secure
comparison per element against a^2.  Counts are integer-domain sums of
the comparison bits; mechanism noise is added as dealer-shared Laplace
samples at fixed-point scale.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .budget import BudgetLedger, query_hash
from .errors import EpochDeleted, Refusal
from .fixedpoint import DIST_FRAC_BITS, FRAC_BITS, encode, encode_scalar, decode
from .mpc.dealer import Dealer, PartyTape
from .mpc.shares import PartyCtx, SVec, reconstruct_array
from .mpc import protocol

QUERY_KINDS = ("FC", "FT", "CC", "CT")

# extra precision for the public query vector in the scalar products
_Q_FRAC = DIST_FRAC_BITS - FRAC_BITS
# rows per shared-comparison block; see match_count_gen
_COMPARE_CHUNK = 1024


def cosine_to_l2(radius_cos: float) -> float:
    """Cosine-distance radius -> L2 radius via |a-b|^2 = 2 - 2(a.b)."""
    if not 0.0 < radius_cos <= 2.0:
        raise ValueError("cosine radius must be in (0, 2]")
    return math.sqrt(2.0 * radius_cos)


@dataclass(frozen=True)
class QueryRequest:
    kind: str
    q: np.ndarray  # public unit vector, length k
    radius_l2: float
    epochs: Sequence[int]
    threshold: Optional[int] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"unknown query kind {self.kind}")
        if not 0.0 < self.radius_l2 <= 2.0:
            raise ValueError("L2 radius must be in (0, 2]")
        if self.kind.endswith("T") and (self.threshold is None or self.threshold < 1):
            raise ValueError("threshold queries need t >= 1")
        if self.kind.startswith("F") and (self.eps is None or self.eps <= 0):
            raise ValueError("fine queries need a positive eps")

    def q_bytes(self) -> bytes:
        return encode(self.q, _Q_FRAC).tobytes()

    def a_enc(self) -> int:
        return encode_scalar(self.radius_l2**2, DIST_FRAC_BITS)

    def descriptor(self, epoch: int) -> str:
        return query_hash(self.kind, self.q_bytes(), self.a_enc(), self.threshold, epoch)


@dataclass
class EpochResult:
    epoch: int
    status: str  # ok | refused | deleted | empty-ok
    value: Optional[float] = None
    eps_charged: float = 0.0
    cached: bool = False


@dataclass
class QueryResponse:
    kind: str
    results: List[EpochResult] = field(default_factory=list)

    @property
    def total_charged(self) -> float:
        return sum(r.eps_charged for r in self.results)


class PartyEpochStore:
    """One party's share store for one epoch.

    Rows are kept as (m, k) blocks so bulk ingest stays cheap; a single
    donation is a 1-row block.
    """

    def __init__(self):
        self._rows: Dict[str, List[SVec]] = {k: [] for k in ("x", "x_sq", "x_tilde", "x_tilde_sq")}
        self._compiled: Dict[str, SVec] = {}
        self.fine_present = True

    @property
    def n(self) -> int:
        return sum(b.payload.shape[0] for b in self._rows["x_tilde"])

    @staticmethod
    def _as_block(svec: SVec) -> SVec:
        if svec.payload.ndim == 1:
            return svec.reshape(1, -1)
        return svec

    def append(self, bundle: Dict[str, SVec]) -> None:
        for name in self._rows:
            if name.startswith("x_tilde") or self.fine_present:
                self._rows[name].append(self._as_block(bundle[name]))
        self._compiled.clear()

    def matrix(self, name: str) -> SVec:
        if name not in self._compiled:
            blocks = self._rows[name]
            if not blocks:
                z = np.zeros((0, 0), np.uint64)
                self._compiled[name] = SVec(z, z.copy())
            elif len(blocks) == 1:
                self._compiled[name] = blocks[0]
            else:
                payload = np.concatenate([b.payload for b in blocks])
                mac = None
                if blocks[0].mac is not None:
                    mac = np.concatenate([b.mac for b in blocks])
                self._compiled[name] = SVec(payload, mac)
        return self._compiled[name]

    def delete_fine(self) -> None:
        self._rows["x"] = []
        self._rows["x_sq"] = []
        self.fine_present = False
        self._compiled.clear()


# -- per-party protocol generators -------------------------------------


def match_count_gen(
    ctx: PartyCtx,
    tape: PartyTape,
    x: SVec,
    x_sq: SVec,
    q: np.ndarray,
    radius_l2: float,
    nbits: int = protocol.COMPARE_BITS,
):
    """Share of |{x : ||x - q||^2 < a^2}| (integer domain)."""
    n = x.payload.shape[0]
    if n == 0:
        zero = np.zeros(1, dtype=np.uint64)
        return SVec(zero, zero.copy() if ctx.macs_enabled else None)
    q2_enc = encode(2.0 * q, _Q_FRAC)
    q_norm_const = np.uint64(encode_scalar(float(np.dot(q, q)), DIST_FRAC_BITS))
    a2_enc = encode_scalar(radius_l2**2, DIST_FRAC_BITS)
    # process the store in fixed-size row blocks: both the distance terms
    # (rows, k) and the bit-decomposition temporaries (rows, nbits) then
    # stay cache-resident, keeping the per-row cost flat in the store size
    total = None
    for lo in range(0, n, _COMPARE_CHUNK):
        sl = slice(lo, lo + _COMPARE_CHUNK)
        term_sq = x_sq[sl].sum(axis=1).mul_public(np.uint64(1 << _Q_FRAC))
        term_dot = x[sl].mul_public(q2_enc).sum(axis=1)
        d = (term_sq - term_dot).add_public(q_norm_const, ctx)
        bits = yield from protocol.less_than_public(ctx, tape, d, a2_enc, nbits)
        part = bits.sum()
        total = part if total is None else total + part
    return total


def fc_gen(ctx, tape, store: PartyEpochStore, req: QueryRequest, zero_noise: bool):
    count = yield from match_count_gen(
        ctx, tape, store.matrix("x"), store.matrix("x_sq"), req.q, req.radius_l2
    )
    result = count.mul_public(np.uint64(1 << FRAC_BITS))
    if not zero_noise:
        noise = tape.take_laplace(1.0 / req.eps, 1)
        result = result + noise
    (value,) = yield [result]
    return float(decode(value)[0])


def ft_gen(ctx, tape, store: PartyEpochStore, req: QueryRequest, t_hat: SVec, zero_noise: bool):
    count = yield from match_count_gen(
        ctx, tape, store.matrix("x"), store.matrix("x_sq"), req.q, req.radius_l2
    )
    c_hat = count.mul_public(np.uint64(1 << FRAC_BITS))
    if not zero_noise:
        c_hat = c_hat + tape.take_laplace(4.0 / req.eps, 1)
    tau = yield from protocol.greater_equal_shared(ctx, tape, c_hat, t_hat)
    (tau_pub,) = yield [tau]
    return int(tau_pub[0])


def cc_gen(ctx, tape, store: PartyEpochStore, req: QueryRequest):
    count = yield from match_count_gen(
        ctx, tape, store.matrix("x_tilde"), store.matrix("x_tilde_sq"), req.q, req.radius_l2
    )
    (value,) = yield [count]
    return int(value[0])


def ct_gen(ctx, tape, store: PartyEpochStore, req: QueryRequest):
    count = yield from match_count_gen(
        ctx, tape, store.matrix("x_tilde"), store.matrix("x_tilde_sq"), req.q, req.radius_l2
    )
    # strict >:  count > t  <=>  t - count < 0
    diff = (-count).add_public(np.uint64(req.threshold), ctx)
    tau = yield from protocol.msb(ctx, tape, diff)
    (tau_pub,) = yield [tau]
    return int(tau_pub[0])


# -- SVT open-query state ----------------------------------------------


@dataclass
class OpenThresholdEntry:
    key: tuple
    t_hat_shares: List[SVec]


class ThresholdRegistry:
    def __init__(self):
        self.entries: Dict[tuple, OpenThresholdEntry] = {}
        self.u_draws = 0

    def key_for(self, req: QueryRequest, epoch: int) -> tuple:
        return (req.q_bytes(), req.a_enc(), req.threshold, epoch)

    def get_or_create(self, req, epoch, ctxs, tapes, zero_noise) -> OpenThresholdEntry:
        key = self.key_for(req, epoch)
        if key in self.entries:
            return self.entries[key]
        t_const = np.uint64(req.threshold << FRAC_BITS)
        shares = []
        for ctx, tape in zip(ctxs, tapes):
            if zero_noise:
                zero = np.zeros(1, dtype=np.uint64)
                u = SVec(zero, zero.copy() if ctx.macs_enabled else None)
            else:
                u = tape.take_laplace(2.0 / req.eps, 1)
            shares.append(u.add_public(t_const, ctx))
        if not zero_noise:
            self.u_draws += 1
        entry = OpenThresholdEntry(key=key, t_hat_shares=shares)
        self.entries[key] = entry
        return entry

    def remove(self, req, epoch) -> None:
        self.entries.pop(self.key_for(req, epoch), None)


# -- local in-process cluster ------------------------------------------


class LocalCluster:
    """All parties in one process: reference engine for tests and CLI."""

    def __init__(
        self,
        n_servers: int = 3,
        eps_f_max: float = 3.0,
        seed: int = 1,
        macs: bool = True,
        zero_noise: bool = False,
        ledger: Optional[BudgetLedger] = None,
    ):
        self.dealer = Dealer(n_servers, seed, macs=macs)
        self.n_servers = n_servers
        self.ctxs = protocol.make_ctxs(self.dealer)
        self.stores: Dict[int, List[PartyEpochStore]] = {}
        self.ledger = ledger if ledger is not None else BudgetLedger(eps_f_max)
        self.svt = ThresholdRegistry()
        self.fc_cache: Dict[tuple, EpochResult] = {}
        self.zero_noise = zero_noise
        self.check_macs = macs

    # -- intake --------------------------------------------------------

    def ingest(self, epoch: int, bundles: Sequence[Dict[str, SVec]]) -> None:
        if epoch not in self.stores:
            self.stores[epoch] = [PartyEpochStore() for _ in range(self.n_servers)]
        for store, bundle in zip(self.stores[epoch], bundles):
            store.append(bundle)

    def ingest_matrix(
        self,
        epoch: int,
        x: np.ndarray,
        x_tilde: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        """Bulk-share a whole (n, k) matrix into the epoch's stores."""
        from .fixedpoint import encode as _encode
        from .mpc.shares import share_array

        if rng is None:
            rng = np.random.default_rng(0)
        if x_tilde is None:
            x_tilde = x
        stores = self._epoch_stores(epoch)
        fields = {"x": x, "x_sq": x * x, "x_tilde": x_tilde, "x_tilde_sq": x_tilde * x_tilde}
        bundles: List[Dict[str, SVec]] = [dict() for _ in range(self.n_servers)]
        for name, arr in fields.items():
            shares = share_array(_encode(arr), self.n_servers, rng, self.dealer.alpha)
            for i, s in enumerate(shares):
                bundles[i][name] = s
        for store, bundle in zip(stores, bundles):
            store.append(bundle)

    def epoch_size(self, epoch: int) -> int:
        if epoch not in self.stores:
            return 0
        return self.stores[epoch][0].n

    def _epoch_stores(self, epoch: int) -> List[PartyEpochStore]:
        if epoch not in self.stores:
            self.stores[epoch] = [PartyEpochStore() for _ in range(self.n_servers)]
        return self.stores[epoch]

    def _run(self, gens) -> list:
        return protocol.run_local(
            gens, alpha=self.dealer.alpha, check_macs=self.check_macs
        )

    # -- queries -------------------------------------------------------

    def run_query(self, req: QueryRequest) -> QueryResponse:
        resp = QueryResponse(kind=req.kind)
        for epoch in req.epochs:
            resp.results.append(self._run_epoch(req, epoch))
        return resp

    def _run_epoch(self, req: QueryRequest, epoch: int) -> EpochResult:
        handler = {
            "FC": self._fc_epoch,
            "FT": self._ft_epoch,
            "CC": self._cc_epoch,
            "CT": self._ct_epoch,
        }[req.kind]
        try:
            return handler(req, epoch)
        except Refusal:
            return EpochResult(epoch=epoch, status="refused")
        except EpochDeleted:
            return EpochResult(epoch=epoch, status="deleted")

    def _delete_fine(self, epoch: int) -> None:
        for store in self._epoch_stores(epoch):
            store.delete_fine()

    def _fc_epoch(self, req: QueryRequest, epoch: int) -> EpochResult:
        cache_key = (req.q_bytes(), req.a_enc(), epoch)
        if cache_key in self.fc_cache:
            hit = self.fc_cache[cache_key]
            return EpochResult(
                epoch=epoch, status="ok", value=hit.value, eps_charged=0.0, cached=True
            )
        if self.ledger.is_deleted(epoch):
            raise EpochDeleted(str(epoch))
        if not self.ledger.can_charge(epoch, req.eps):
            raise Refusal(str(epoch))
        stores = self._epoch_stores(epoch)
        gens = [
            fc_gen(self.ctxs[i], self.dealer.tapes[i], stores[i], req, self.zero_noise)
            for i in range(self.n_servers)
        ]
        values = self._run(gens)
        charge = self.ledger.charge(epoch, req.eps, req.descriptor(epoch), kind="fc")
        if charge.delete_fine_store:
            self._delete_fine(epoch)
        result = EpochResult(
            epoch=epoch, status="ok", value=values[0], eps_charged=req.eps
        )
        self.fc_cache[cache_key] = result
        return result

    def _ft_epoch(self, req: QueryRequest, epoch: int) -> EpochResult:
        if self.ledger.is_deleted(epoch):
            raise EpochDeleted(str(epoch))
        if not self.ledger.can_charge(epoch, req.eps):
            raise Refusal(str(epoch))
        stores = self._epoch_stores(epoch)
        entry = self.svt.get_or_create(
            req, epoch, self.ctxs, self.dealer.tapes, self.zero_noise
        )
        gens = [
            ft_gen(
                self.ctxs[i],
                self.dealer.tapes[i],
                stores[i],
                req,
                entry.t_hat_shares[i],
                self.zero_noise,
            )
            for i in range(self.n_servers)
        ]
        taus = self._run(gens)
        tau = int(taus[0])
        eps_charged = 0.0
        if tau == 1:
            charge = self.ledger.charge(epoch, req.eps, req.descriptor(epoch), kind="ft")
            eps_charged = req.eps
            self.svt.remove(req, epoch)
            if charge.delete_fine_store:
                self._delete_fine(epoch)
        return EpochResult(epoch=epoch, status="ok", value=float(tau), eps_charged=eps_charged)

    def _cc_epoch(self, req: QueryRequest, epoch: int) -> EpochResult:
        stores = self._epoch_stores(epoch)
        gens = [
            cc_gen(self.ctxs[i], self.dealer.tapes[i], stores[i], req)
            for i in range(self.n_servers)
        ]
        values = self._run(gens)
        return EpochResult(epoch=epoch, status="ok", value=float(values[0]))

    def _ct_epoch(self, req: QueryRequest, epoch: int) -> EpochResult:
        stores = self._epoch_stores(epoch)
        gens = [
            ct_gen(self.ctxs[i], self.dealer.tapes[i], stores[i], req)
            for i in range(self.n_servers)
        ]
        values = self._run(gens)
        return EpochResult(epoch=epoch, status="ok", value=float(values[0]))

    # -- plaintext oracle (test support) --------------------------------

    def plaintext_count(self, epoch: int, q: np.ndarray, radius_l2: float, fine: bool = True) -> int:
        """Brute-force count over reconstructed stored vectors."""
        stores = self._epoch_stores(epoch)
        name = "x" if fine else "x_tilde"
        sq = name + "_sq"
        if stores[0].n == 0 or (fine and not stores[0].fine_present):
            return 0
        xs = decode(reconstruct_array([s.matrix(name) for s in stores]))
        xsqs = decode(reconstruct_array([s.matrix(sq) for s in stores]))
        d = xsqs.sum(axis=1) - 2.0 * xs @ q + float(np.dot(q, q))
        return int(np.sum(d < radius_l2**2))
