"""HTTP gateway: the querier-facing front end over the MPC servers.

The gateway relays opening rounds between the n servers (star topology),
reconstructs response values, runs the MAC settlement round, and turns
budget receipts into JSON.  It holds no share material and cannot learn
anything a querier could not: every value it sees is either public
protocol traffic or a released query result.

Endpoints: POST /query, GET /budget, GET /alerts, GET /trends/{id}.
Errors: 401 unauthenticated, 409 budget refusal, 410 deleted epoch,
503 unreachable or inconsistent servers.
"""

from __future__ import annotations

import hashlib
import secrets
import threading
from datetime import date, timedelta
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException, Request

from .errors import (
    ConfigMismatch,
    EpochDeleted,
    IntegrityFailure,
    PeerUnreachable,
    Refusal,
)
from .projection import ProjectionMatrix, toy_embed
from . import wire

_EPOCH0 = date(1970, 1, 1)


def epoch_to_date(epoch: int) -> str:
    return (_EPOCH0 + timedelta(days=epoch)).isoformat()


class ServerPool:
    """Framed connections to all n servers, with config handshake."""

    def __init__(self, addrs: Sequence[Tuple[str, int]], check_macs: bool = True):
        self.addrs = list(addrs)
        self.check_macs = check_macs
        self.lock = threading.Lock()  # one query session at a time

    def connect(self) -> List[wire.Conn]:
        conns = []
        try:
            for host, port in self.addrs:
                conns.append(wire.Conn(host, port))
        except OSError as exc:
            for c in conns:
                c.close()
            raise PeerUnreachable(f"server unreachable: {exc}") from exc
        return conns

    def handshake(self) -> dict:
        conns = self.connect()
        try:
            infos = [
                c.rpc(wire.json_frame(wire.KIND_TAPE_SYNC, {})).json() for c in conns
            ]
        finally:
            for c in conns:
                c.close()
        hashes = {i["config_hash"] for i in infos}
        commits = {i["seed_commitment"] for i in infos}
        if len(hashes) != 1 or len(commits) != 1:
            raise ConfigMismatch(f"server configs diverge: {sorted(hashes)}")
        return infos[0]

    def snapshot(self) -> dict:
        conns = self.connect()
        try:
            snaps = [
                c.rpc(
                    wire.json_frame(wire.KIND_BUDGET_EVENT, {"action": "snapshot"})
                ).json()
                for c in conns
            ]
        finally:
            for c in conns:
                c.close()
        # every server must agree on the ledger view
        keys = ("eps_f_max", "coarse_charge", "epochs")
        for other in snaps[1:]:
            if any(other[k] != snaps[0][k] for k in keys):
                raise ConfigMismatch("server ledgers disagree")
        return snaps[0]

    # -- one epoch of one query ----------------------------------------

    def run_epoch(self, body: dict, epoch: int) -> dict:
        """Drive one query session across all servers; returns the result
        record {value, cached, eps_charged, remaining, deleted}."""
        sid = secrets.randbelow(1 << 32)
        conns = self.connect()
        try:
            return self._session(conns, body, epoch, sid)
        finally:
            for c in conns:
                c.close()

    def _session(self, conns, body: dict, epoch: int, sid: int) -> dict:
        req = wire.json_frame(wire.KIND_QUERY_REQUEST, body, sid, epoch)
        for c in conns:
            c.send(req)
        while True:
            frames = [c.recv() for c in conns]
            kinds = {f.kind for f in frames}
            if len(kinds) != 1:
                raise IntegrityFailure("servers desynchronized in session")
            kind = kinds.pop()
            if kind == wire.KIND_ERROR:
                info = frames[0].json()
                code = info.get("code")
                if code == "refused":
                    raise Refusal(info.get("detail", ""))
                if code == "deleted":
                    raise EpochDeleted(info.get("detail", ""))
                raise PeerUnreachable(f"server error: {info}")
            if kind == wire.KIND_QUERY_RESPONSE_SHARE:
                return self._settle(conns, frames, sid, epoch)
            if kind != wire.KIND_SHARE_EXCHANGE:
                raise IntegrityFailure(f"unexpected frame kind {kind}")
            shares = [wire.unpack_svecs(f.payload) for f in frames]
            publics = []
            for j in range(len(shares[0])):
                total = shares[0][j].payload.copy()
                for s in shares[1:]:
                    total = total + s[j].payload
                publics.append(total)
            reply = wire.Frame(
                wire.KIND_SHARE_EXCHANGE, sid, epoch, wire.pack_publics(publics)
            )
            for c in conns:
                c.send(reply)

    def _settle(self, conns, frames, sid: int, epoch: int) -> dict:
        bodies = [f.json() for f in frames]
        values = {repr(b["value"]) for b in bodies}
        if len(values) != 1:
            raise IntegrityFailure("servers returned different values")
        value = bodies[0]["value"]
        cached = bodies[0]["cached"]
        if cached:
            return {
                "value": value,
                "cached": True,
                "eps_charged": 0.0,
                "remaining": None,
                "deleted": False,
            }
        rho_seed = secrets.randbelow(1 << 63)
        settle = wire.json_frame(
            wire.KIND_BUDGET_EVENT, {"action": "settle", "rho_seed": rho_seed}, sid, epoch
        )
        for c in conns:
            c.send(settle)
        sigma_total = 0
        for c in conns:
            f = c.recv()
            if f.kind != wire.KIND_SHARE_EXCHANGE:
                raise IntegrityFailure("bad settlement frame")
            sigma_total = (sigma_total + int(wire.unpack_svecs(f.payload)[0].payload[0])) % (
                1 << 64
            )
        action = "commit" if (not self.check_macs or sigma_total == 0) else "abort"
        verdict = wire.json_frame(wire.KIND_BUDGET_EVENT, {"action": action}, sid, epoch)
        for c in conns:
            c.send(verdict)
        acks = [c.recv().json() for c in conns]
        if action == "abort":
            raise IntegrityFailure("MAC settlement failed: tampered share detected")
        receipts = {
            (a["eps_charged"], a["deleted"], round(a["remaining"], 9)) for a in acks
        }
        if len(receipts) != 1:
            raise ConfigMismatch("servers settled inconsistent receipts")
        return {
            "value": value,
            "cached": False,
            "eps_charged": acks[0]["eps_charged"],
            "remaining": acks[0]["remaining"],
            "deleted": acks[0]["deleted"],
        }


# -- HTTP app ----------------------------------------------------------


def _query_id(kind: str, q: np.ndarray, radius: float, epochs: Sequence[int]) -> str:
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(q.tobytes())
    h.update(f"{radius}:{min(epochs)}:{max(epochs)}".encode())
    return h.hexdigest()[:12]


def create_app(
    pool: ServerPool,
    projection: ProjectionMatrix,
    token: str,
    ell: Optional[int] = None,
):
    app = FastAPI(title="private trend gateway")
    ell = ell or projection.ell
    k = projection.k
    trends: Dict[str, dict] = {}
    alerts: Dict[str, dict] = {}

    def require_auth(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    def build_q(body: dict) -> np.ndarray:
        if body.get("text"):
            raw = toy_embed(body["text"], ell)
            vec = raw @ projection.matrix
        else:
            vec = np.asarray(body.get("vector", []), dtype=np.float64)
            if vec.shape == (ell,):
                vec = vec @ projection.matrix
            elif vec.shape != (k,):
                raise HTTPException(
                    status_code=422, detail=f"vector must have length {k} or {ell}"
                )
        norm = float(np.linalg.norm(vec))
        if norm < 1e-9:
            raise HTTPException(status_code=422, detail="degenerate query vector")
        return vec / norm

    def parse_epochs(body: dict) -> List[int]:
        epochs = body.get("epochs")
        if isinstance(epochs, dict):
            epochs = list(range(int(epochs["from"]), int(epochs["to"]) + 1))
        if not epochs:
            raise HTTPException(status_code=422, detail="no epochs given")
        return [int(e) for e in epochs]

    @app.post("/query")
    def post_query(body: dict, request: Request):
        require_auth(request)
        kind = str(body.get("kind", "")).upper()
        if kind not in ("FC", "FT", "CC", "CT"):
            raise HTTPException(status_code=422, detail=f"unknown kind {kind!r}")
        q = build_q(body)
        epochs = parse_epochs(body)
        radius = float(body.get("radius", 0))
        if not 0.0 < radius <= 2.0:
            raise HTTPException(status_code=422, detail="radius (cosine) must be in (0, 2]")
        radius_l2 = float(np.sqrt(2.0 * radius))
        eps = body.get("eps")
        threshold = body.get("threshold")
        if kind.startswith("F") and (eps is None or float(eps) <= 0):
            raise HTTPException(status_code=422, detail="fine queries need eps > 0")
        if kind.endswith("T") and (threshold is None or int(threshold) < 1):
            raise HTTPException(status_code=422, detail="threshold queries need t >= 1")

        session_body = {
            "kind": kind,
            "q": [float(v) for v in q],
            "radius_l2": radius_l2,
            "threshold": None if threshold is None else int(threshold),
            "eps": None if eps is None else float(eps),
        }
        series = []
        with pool.lock:
            for epoch in epochs:
                rec = {"epoch": epoch, "date": epoch_to_date(epoch)}
                try:
                    out = pool.run_epoch(session_body, epoch)
                    rec.update(
                        status="ok",
                        value=out["value"],
                        eps_charged=out["eps_charged"],
                        cached=out["cached"],
                    )
                except Refusal as exc:
                    rec.update(status="refused", value=None, eps_charged=0.0, detail=str(exc))
                except EpochDeleted as exc:
                    rec.update(status="deleted", value=None, eps_charged=0.0, detail=str(exc))
                except PeerUnreachable as exc:
                    raise HTTPException(status_code=503, detail=str(exc))
                except IntegrityFailure as exc:
                    raise HTTPException(status_code=502, detail=str(exc))
                series.append(rec)

        statuses = {r["status"] for r in series}
        if statuses == {"refused"}:
            raise HTTPException(
                status_code=409,
                detail={"error": "budget refused", "epochs": series},
            )
        if statuses == {"deleted"}:
            raise HTTPException(
                status_code=410,
                detail={"error": "fine store deleted", "epochs": series},
            )

        qid = _query_id(kind, q, radius, epochs)
        response = {
            "query_id": qid,
            "kind": kind,
            "radius": radius,
            "radius_l2": radius_l2,
            "threshold": threshold,
            "eps": eps,
            "series": series,
            "total_charged": sum(r["eps_charged"] for r in series),
        }
        trends[qid] = response
        if kind == "FT":
            _update_alert(qid, body, response)
        return response

    def _update_alert(qid: str, body: dict, response: dict) -> None:
        fired = [r for r in response["series"] if r["status"] == "ok" and r["value"] == 1]
        card = alerts.setdefault(
            qid,
            {
                "id": qid,
                "kind": "FT",
                "text": body.get("text"),
                "threshold": response["threshold"],
                "radius": response["radius"],
                "epochs_watched": [],
                "status": "armed",
                "eps_charged": 0.0,
            },
        )
        card["epochs_watched"] = sorted(
            set(card["epochs_watched"]) | {r["epoch"] for r in response["series"]}
        )
        card["eps_charged"] += response["total_charged"]
        if fired:
            card["status"] = "fired"
            card["fired_epochs"] = sorted(
                set(card.get("fired_epochs", [])) | {r["epoch"] for r in fired}
            )

    @app.get("/budget")
    def get_budget(request: Request):
        require_auth(request)
        try:
            snap = pool.snapshot()
        except PeerUnreachable as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        return snap

    @app.get("/alerts")
    def get_alerts(request: Request):
        require_auth(request)
        return {"alerts": sorted(alerts.values(), key=lambda a: a["id"])}

    @app.get("/trends/{qid}")
    def get_trend(qid: str, request: Request):
        require_auth(request)
        if qid not in trends:
            raise HTTPException(status_code=404, detail="unknown trend id")
        return trends[qid]

    return app
