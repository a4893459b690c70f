"""MPC server process: share ingest, query sessions, persistence.

Topology is a star: donors and the query gateway connect to each server
directly; during a query the gateway relays opening rounds (it sums the
parties' opening shares and broadcasts the public values back).  Servers
never learn each other's shares.  Before any result is accepted the
gateway runs a MAC settlement round: each server sends a random linear
combination of (mac_share - alpha_share * opened_value) over everything
opened in the session; the combinations must sum to zero.

Budget settlement is two-phase: servers apply charges and deletions only
on an explicit commit frame, so an aborted or failed query never charges.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .budget import BudgetLedger
from .errors import MalformedBundle
from .fixedpoint import FRAC_BITS, to_ring
from .mpc.dealer import PartyTape, load_tape
from .mpc.shares import PartyCtx, SVec
from . import engine as eng
from . import wire


@dataclass(frozen=True)
class ServerConfig:
    party_id: int
    n_parties: int
    k: int
    eps_f_max: float
    eps_p: float
    delta_p: float
    projection_seed: int
    macs: bool = True
    zero_noise: bool = False
    host: str = "127.0.0.1"
    port: int = 0
    store_path: Optional[str] = None
    ledger_path: Optional[str] = None
    tape_path: Optional[str] = None

    def config_hash(self) -> str:
        """Hash of the fields every server must agree on."""
        shared = {
            "n_parties": self.n_parties,
            "k": self.k,
            "eps_f_max": self.eps_f_max,
            "eps_p": self.eps_p,
            "delta_p": self.delta_p,
            "projection_seed": self.projection_seed,
            "macs": self.macs,
            "zero_noise": self.zero_noise,
        }
        blob = json.dumps(shared, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def load(cls, path) -> "ServerConfig":
        with open(path) as fh:
            data = json.load(fh)
        # env-var overrides for deployment plumbing
        port = os.environ.get("PRIVTREND_PORT")
        if port is not None:
            data["port"] = int(port)
        store = os.environ.get("PRIVTREND_STORE_PATH")
        if store is not None:
            data["store_path"] = store
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        node: "ServerNode" = self.server.node  # type: ignore[attr-defined]
        sock = self.request
        try:
            while True:
                try:
                    frame = wire.recv_frame(sock)
                except ConnectionError:
                    return
                if frame.kind not in wire.KNOWN_KINDS:
                    wire.send_frame(
                        sock, wire.error_frame("unknown-kind", f"kind {frame.kind}")
                    )
                    continue
                if frame.kind == wire.KIND_SUBMIT_SHARES:
                    node.handle_submit(sock, frame)
                elif frame.kind == wire.KIND_QUERY_REQUEST:
                    node.handle_query_session(sock, frame)
                elif frame.kind == wire.KIND_TAPE_SYNC:
                    node.handle_tape_sync(sock, frame)
                elif frame.kind == wire.KIND_BUDGET_EVENT:
                    node.handle_budget_event(sock, frame)
                else:
                    wire.send_frame(
                        sock,
                        wire.error_frame("unexpected-kind", f"kind {frame.kind}"),
                    )
        except (MalformedBundle, OSError):
            return


class _TCP(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ServerNode:
    """One MPC party: TCP endpoint plus per-epoch share stores."""

    def __init__(
        self,
        config: ServerConfig,
        tape: Optional[PartyTape] = None,
        alpha_share: Optional[int] = None,
    ):
        self.config = config
        if tape is None:
            if config.tape_path is None:
                raise ValueError("node needs a tape object or a tape path")
            tape, alpha_share = load_tape(config.tape_path)
        self.tape = tape
        self.ctx = PartyCtx(config.party_id, config.n_parties, alpha_share)
        self.stores: Dict[int, eng.PartyEpochStore] = {}
        self.ledger = BudgetLedger(config.eps_f_max, config.ledger_path)
        self.svt: Dict[tuple, SVec] = {}
        self.svt_draws = 0
        self.fc_cache: Dict[tuple, dict] = {}
        self._lock = threading.RLock()
        self._qlock = threading.Lock()  # serializes tape consumption
        self._store_fh = None
        self._tcp: Optional[_TCP] = None
        self._thread: Optional[threading.Thread] = None
        self.tamper = None  # test hook: fn(list[SVec]) -> list[SVec]
        if config.store_path is not None:
            self._replay_store()
            self._store_fh = open(config.store_path, "ab")
        for epoch in list(self.ledger.deleted):
            if epoch in self.stores:
                self.stores[epoch].delete_fine()

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        self._tcp = _TCP((self.config.host, self.config.port), _Handler)
        self._tcp.node = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        assert self._tcp is not None
        return self._tcp.server_address[1]

    def stop(self) -> None:
        if self._tcp is not None:
            self._tcp.shutdown()
            self._tcp.server_close()
            self._tcp = None
        if self._store_fh is not None:
            self._store_fh.close()
            self._store_fh = None
        self.ledger.close()

    # -- store persistence ---------------------------------------------
    #
    # record: u32 body_len | i64 epoch | bundle block (see wire.pack_bundle)

    def _replay_store(self) -> None:
        try:
            fh = open(self.config.store_path, "rb")
        except FileNotFoundError:
            return
        with fh:
            while True:
                head = fh.read(12)
                if len(head) < 12:
                    break  # clean EOF or truncated trailing record
                body_len, epoch = struct.unpack("<Iq", head)
                body = fh.read(body_len)
                if len(body) < body_len:
                    break  # crash-truncated record: discard
                bundle = wire.unpack_bundle(body)
                self._append_to_store(epoch, bundle, persist=False)

    def _append_to_store(self, epoch: int, bundle: dict, persist: bool = True) -> int:
        if persist and self.ledger.coarse_charge is None:
            # the coarse store's one-time (eps_p, delta_p) cost is paid the
            # moment perturbed shares first land
            self.ledger.charge_coarse(self.config.eps_p, self.config.delta_p)
        store = self.stores.setdefault(epoch, eng.PartyEpochStore())
        fine = "x" in bundle and store.fine_present and not self.ledger.is_deleted(epoch)
        if not fine:
            bundle = {k: v for k, v in bundle.items() if k.startswith("x_tilde")}
            if store.fine_present and self.ledger.is_deleted(epoch):
                store.delete_fine()
        if "x" not in bundle:
            # coarse-only append still needs the row slots aligned
            store._rows["x_tilde"].append(store._as_block(bundle["x_tilde"]))
            store._rows["x_tilde_sq"].append(store._as_block(bundle["x_tilde_sq"]))
            store._compiled.clear()
        else:
            store.append(bundle)
        if persist and self._store_fh is not None:
            body = wire.pack_bundle(bundle, fine="x" in bundle)
            self._store_fh.write(struct.pack("<Iq", len(body), epoch) + body)
            self._store_fh.flush()
            os.fsync(self._store_fh.fileno())
        return store.n

    # -- frame handlers ------------------------------------------------

    def handle_submit(self, sock, frame: wire.Frame) -> None:
        try:
            bundle = wire.unpack_bundle(frame.payload)
            k = bundle["x_tilde"].payload.shape[-1]
            if k != self.config.k:
                raise MalformedBundle(f"vector length {k}, expected {self.config.k}")
        except MalformedBundle as exc:
            wire.send_frame(sock, wire.error_frame("malformed", str(exc), epoch=frame.epoch))
            return
        with self._lock:
            n = self._append_to_store(frame.epoch, bundle)
        wire.send_frame(
            sock, wire.json_frame(wire.KIND_ACK, {"n": n}, epoch=frame.epoch)
        )

    def handle_tape_sync(self, sock, frame: wire.Frame) -> None:
        wire.send_frame(
            sock,
            wire.json_frame(
                wire.KIND_TAPE_SYNC,
                {
                    "party_id": self.config.party_id,
                    "n_parties": self.config.n_parties,
                    "config_hash": self.config.config_hash(),
                    "seed_commitment": self.tape.seed_commitment.hex(),
                },
            ),
        )

    def handle_budget_event(self, sock, frame: wire.Frame) -> None:
        action = frame.json().get("action")
        if action == "snapshot":
            with self._lock:
                snap = self.ledger.snapshot()
                snap["store_sizes"] = {str(e): s.n for e, s in self.stores.items()}
                snap["fine_present"] = {
                    str(e): s.fine_present for e, s in self.stores.items()
                }
                snap["svt_draws"] = self.svt_draws
            wire.send_frame(sock, wire.json_frame(wire.KIND_BUDGET_EVENT, snap))
        else:
            wire.send_frame(sock, wire.error_frame("bad-action", str(action)))

    # -- query session -------------------------------------------------

    def _svt_key(self, req: eng.QueryRequest, epoch: int) -> tuple:
        return (req.q_bytes(), req.a_enc(), req.threshold, epoch)

    def _svt_t_hat(self, req: eng.QueryRequest, epoch: int) -> SVec:
        key = self._svt_key(req, epoch)
        if key not in self.svt:
            t_const = np.uint64(req.threshold << FRAC_BITS)
            if self.config.zero_noise:
                zero = np.zeros(1, dtype=np.uint64)
                u = SVec(zero, zero.copy() if self.ctx.macs_enabled else None)
            else:
                u = self.tape.take_laplace(2.0 / req.eps, 1)
                self.svt_draws += 1
            self.svt[key] = u.add_public(t_const, self.ctx)
        return self.svt[key]

    def handle_query_session(self, sock, frame: wire.Frame) -> None:
        with self._qlock:
            self._query_session(sock, frame)

    def _query_session(self, sock, frame: wire.Frame) -> None:
        epoch = frame.epoch
        sid = frame.session_id
        body = frame.json()
        try:
            req = eng.QueryRequest(
                kind=body["kind"],
                q=np.asarray(body["q"], dtype=np.float64),
                radius_l2=float(body["radius_l2"]),
                epochs=[epoch],
                threshold=body.get("threshold"),
                eps=body.get("eps"),
            )
        except (KeyError, ValueError) as exc:
            wire.send_frame(sock, wire.error_frame("bad-request", str(exc), sid, epoch))
            return
        if req.q.shape != (self.config.k,):
            wire.send_frame(sock, wire.error_frame("bad-request", "wrong q length", sid, epoch))
            return

        fine = req.kind.startswith("F")
        if fine and self.ledger.is_deleted(epoch):
            wire.send_frame(sock, wire.error_frame("deleted", f"epoch {epoch}", sid, epoch))
            return
        if fine and not self.ledger.can_charge(epoch, req.eps):
            wire.send_frame(
                sock,
                wire.error_frame(
                    "refused",
                    f"remaining {self.ledger.remaining_for(epoch):.6g}",
                    sid,
                    epoch,
                ),
            )
            return

        cache_key = (req.q_bytes(), req.a_enc(), epoch)
        if req.kind == "FC" and cache_key in self.fc_cache:
            wire.send_frame(
                sock,
                wire.json_frame(
                    wire.KIND_QUERY_RESPONSE_SHARE,
                    {"value": self.fc_cache[cache_key]["value"], "cached": True},
                    sid,
                    epoch,
                ),
            )
            return

        store = self.stores.setdefault(epoch, eng.PartyEpochStore())
        tau_holder: dict = {}
        gen = self._make_gen(req, store, tau_holder)

        # opening loop; remember (mac_share, public) pairs for settlement
        opened: list[Tuple[np.ndarray, np.ndarray]] = []
        publics = None
        while True:
            try:
                outgoing = gen.send(publics)
            except StopIteration as stop:
                result = stop.value
                break
            if self.tamper is not None:
                outgoing = self.tamper(outgoing)
            wire.send_frame(
                sock,
                wire.Frame(wire.KIND_SHARE_EXCHANGE, sid, epoch, wire.pack_svecs(outgoing)),
            )
            reply = wire.recv_frame(sock)
            if reply.kind != wire.KIND_SHARE_EXCHANGE:
                return  # gateway aborted the session
            publics = wire.unpack_publics(reply.payload)
            if self.ctx.macs_enabled:
                for s, pub in zip(outgoing, publics):
                    opened.append((s.mac.reshape(-1), pub.reshape(-1)))

        wire.send_frame(
            sock,
            wire.json_frame(
                wire.KIND_QUERY_RESPONSE_SHARE,
                {"value": result, "cached": False},
                sid,
                epoch,
            ),
        )

        # settlement: MAC combination check, then commit or abort
        settle = wire.recv_frame(sock)
        if settle.kind != wire.KIND_BUDGET_EVENT:
            return
        rho_seed = settle.json()["rho_seed"]
        sigma = self._settlement_sigma(opened, rho_seed)
        wire.send_frame(
            sock,
            wire.Frame(
                wire.KIND_SHARE_EXCHANGE,
                sid,
                epoch,
                wire.pack_svecs([SVec(np.array([sigma], dtype=np.uint64))]),
            ),
        )
        verdict = wire.recv_frame(sock)
        if verdict.kind != wire.KIND_BUDGET_EVENT or verdict.json().get("action") != "commit":
            wire.send_frame(sock, wire.json_frame(wire.KIND_ACK, {"committed": False}, sid, epoch))
            return
        receipt = self._commit(req, epoch, cache_key, result, tau_holder)
        wire.send_frame(sock, wire.json_frame(wire.KIND_ACK, receipt, sid, epoch))

    def _make_gen(self, req: eng.QueryRequest, store: eng.PartyEpochStore, tau_holder: dict):
        if req.kind == "FC":
            return eng.fc_gen(self.ctx, self.tape, store, req, self.config.zero_noise)
        if req.kind == "FT":
            t_hat = self._svt_t_hat(req, req.epochs[0])
            return eng.ft_gen(self.ctx, self.tape, store, req, t_hat, self.config.zero_noise)
        if req.kind == "CC":
            return eng.cc_gen(self.ctx, self.tape, store, req)
        return eng.ct_gen(self.ctx, self.tape, store, req)

    def _settlement_sigma(self, opened, rho_seed: int) -> int:
        if not self.ctx.macs_enabled:
            return 0
        rng = np.random.default_rng(rho_seed)
        alpha_i = np.uint64(to_ring(self.ctx.alpha_share))
        total = 0
        for mac, pub in opened:
            rho = rng.integers(0, 1 << 64, size=mac.size, dtype=np.uint64)
            total += int(np.sum(rho * (mac - alpha_i * pub), dtype=np.uint64))
        return total % (1 << 64)

    def _commit(self, req, epoch: int, cache_key, result, tau_holder) -> dict:
        receipt = {
            "committed": True,
            "eps_charged": 0.0,
            "deleted": False,
            "remaining": self.ledger.remaining_for(epoch),
        }
        with self._lock:
            if req.kind == "FC":
                charge = self.ledger.charge(epoch, req.eps, req.descriptor(epoch), "fc")
                self.fc_cache[cache_key] = {"value": result}
                receipt.update(eps_charged=req.eps, remaining=charge.remaining)
                if charge.delete_fine_store:
                    self._delete_fine(epoch)
                    receipt["deleted"] = True
            elif req.kind == "FT" and int(result) == 1:
                charge = self.ledger.charge(epoch, req.eps, req.descriptor(epoch), "ft")
                self.svt.pop(self._svt_key(req, epoch), None)
                receipt.update(eps_charged=req.eps, remaining=charge.remaining)
                if charge.delete_fine_store:
                    self._delete_fine(epoch)
                    receipt["deleted"] = True
        return receipt

    def _delete_fine(self, epoch: int) -> None:
        if epoch in self.stores:
            self.stores[epoch].delete_fine()
