import contextlib
from datetime import datetime, timezone

import numpy as np
import pytest
from fastapi.testclient import TestClient

from privtrend import projection as pj
from privtrend import wire
from privtrend.engine import cosine_to_l2
from privtrend.errors import ConfigMismatch, EpochDeleted, IntegrityFailure, PeerUnreachable, Refusal
from privtrend.gateway import ServerPool, create_app, epoch_to_date
from privtrend.mpc.dealer import Dealer
from privtrend.mpc.shares import SVec
from privtrend.node import ServerConfig, ServerNode
from tests.conftest import plaintext_count, unit_vec

K = 24
ELL = 48
EPOCH = 20500


def make_config(i, tmp_path=None, **kw):
    defaults = dict(
        party_id=i, n_parties=3, k=K, eps_f_max=3.0, eps_p=2.0, delta_p=1e-5,
        projection_seed=5, macs=True, zero_noise=True,
    )
    if tmp_path is not None:
        defaults["store_path"] = str(tmp_path / f"store{i}.bin")
        defaults["ledger_path"] = str(tmp_path / f"ledger{i}.jsonl")
    defaults.update(kw)
    return ServerConfig(**defaults)


@contextlib.contextmanager
def three_nodes(tmp_path=None, dealer=None, **kw):
    dealer = dealer or Dealer(3, seed=21, macs=True)
    nodes = []
    for i in range(3):
        node = ServerNode(
            make_config(i, tmp_path, **kw),
            tape=dealer.tapes[i],
            alpha_share=dealer.alpha_shares[i],
        )
        node.start()
        nodes.append(node)
    pool = ServerPool([("127.0.0.1", n.port) for n in nodes])
    try:
        yield nodes, pool, dealer
    finally:
        for n in nodes:
            n.stop()


def donate(nodes, dealer, n_msgs, rng, epoch=EPOCH):
    """Socket-level donations; returns the fine-store matrix."""
    proj = pj.generate_projection(ELL, K, seed=5)
    params = pj.CoarseNoiseParams(2.0, 1e-5, 0.0)
    conns = [wire.Conn("127.0.0.1", n.port) for n in nodes]
    xs = []
    for i in range(n_msgs):
        raw = pj.RawEmbedding(
            unit_vec(rng, ELL), f"m{epoch}-{i}",
            datetime.fromtimestamp(epoch * 86400, tz=timezone.utc),
        )
        pe = pj.prepare_message(raw, proj, params)
        xs.append(pe.x)
        for c, b in zip(conns, pj.share_out(pe, 3, rng, dealer.alpha)):
            ack = c.rpc(wire.Frame(wire.KIND_SUBMIT_SHARES, 0, epoch, wire.pack_bundle(b)))
            assert ack.kind == wire.KIND_ACK
    for c in conns:
        c.close()
    return np.array(xs)


def body_for(kind, q, rho=1.0, threshold=None, eps=None):
    return {
        "kind": kind,
        "q": [float(v) for v in q],
        "radius_l2": cosine_to_l2(rho),
        "threshold": threshold,
        "eps": eps,
    }


# -- ingest ------------------------------------------------------------


def test_ingest_increments_all_stores(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 5, rng)
        assert [n.stores[EPOCH].n for n in nodes] == [5, 5, 5]


def test_malformed_bundle_no_partial_write(rng):
    with three_nodes() as (nodes, _, dealer):
        donate(nodes, dealer, 2, rng)
        with wire.Conn("127.0.0.1", nodes[0].port) as conn:
            bad = conn.rpc(wire.Frame(wire.KIND_SUBMIT_SHARES, 0, EPOCH, b"\x01garbage"))
        assert bad.kind == wire.KIND_ERROR
        assert bad.json()["code"] == "malformed"
        assert nodes[0].stores[EPOCH].n == 2


def test_wrong_dimension_rejected(rng):
    with three_nodes() as (nodes, _, dealer):
        mk = lambda: SVec(rng.integers(0, 1 << 64, size=K + 3, dtype=np.uint64))
        bundle = {f: mk() for f in wire.BUNDLE_FIELDS}
        with wire.Conn("127.0.0.1", nodes[0].port) as conn:
            bad = conn.rpc(
                wire.Frame(wire.KIND_SUBMIT_SHARES, 0, EPOCH, wire.pack_bundle(bundle))
            )
        assert bad.json()["code"] == "malformed"


def test_unknown_kind_rejected():
    with three_nodes() as (nodes, _, _):
        with wire.Conn("127.0.0.1", nodes[0].port) as conn:
            reply = conn.rpc(wire.Frame(99, 0, 0, b""))
        assert reply.kind == wire.KIND_ERROR
        assert reply.json()["code"] == "unknown-kind"


def test_coarse_charge_recorded_once(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 3, rng)
        snap = pool.snapshot()
        assert snap["coarse_charge"] == [2.0, 1e-5]


# -- handshake ---------------------------------------------------------


def test_handshake_and_mismatch():
    with three_nodes() as (nodes, pool, dealer):
        info = pool.handshake()
        assert info["n_parties"] == 3
        # a fourth node with divergent k
        rogue = ServerNode(
            make_config(0, k=K + 1), tape=dealer.tapes[0], alpha_share=dealer.alpha_shares[0]
        )
        rogue.start()
        bad = ServerPool(
            [("127.0.0.1", nodes[0].port), ("127.0.0.1", rogue.port)]
        )
        with pytest.raises(ConfigMismatch):
            bad.handshake()
        rogue.stop()


def test_peer_unreachable():
    pool = ServerPool([("127.0.0.1", 1)])  # nothing listens on port 1
    with pytest.raises(PeerUnreachable):
        pool.handshake()


# -- queries -----------------------------------------------------------


def test_distributed_matches_oracle(rng):
    with three_nodes() as (nodes, pool, dealer):
        X = donate(nodes, dealer, 30, rng)
        for _ in range(3):
            q = unit_vec(rng, K)
            out = pool.run_epoch(body_for("FC", q, eps=0.2), EPOCH)
            assert out["value"] == plaintext_count(X, q, cosine_to_l2(1.0))
            cc = pool.run_epoch(body_for("CC", q), EPOCH)
            assert cc["value"] == out["value"]


def test_fc_cache_distributed(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 10, rng)
        body = body_for("FC", unit_vec(rng, K), eps=0.5)
        r1 = pool.run_epoch(body, EPOCH)
        r2 = pool.run_epoch(body, EPOCH)
        assert not r1["cached"] and r2["cached"]
        assert r1["value"] == r2["value"]
        assert pool.snapshot()["epochs"][str(EPOCH)]["remaining"] == 2.5


def test_ft_ct_distributed(rng):
    with three_nodes() as (nodes, pool, dealer):
        X = donate(nodes, dealer, 25, rng)
        q = unit_vec(rng, K)
        count = plaintext_count(X, q, cosine_to_l2(1.0))
        assert count >= 2
        out = pool.run_epoch(body_for("FT", q, threshold=count, eps=0.3), EPOCH)
        assert out["value"] == 1 and out["eps_charged"] == 0.3
        out = pool.run_epoch(body_for("FT", q, threshold=count + 1, eps=0.3), EPOCH)
        assert out["value"] == 0 and out["eps_charged"] == 0.0
        assert pool.run_epoch(body_for("CT", q, threshold=count), EPOCH)["value"] == 0
        assert pool.run_epoch(body_for("CT", q, threshold=count - 1), EPOCH)["value"] == 1


def test_tamper_aborts_without_charge(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 10, rng)
        before = pool.snapshot()

        def tamper(svecs):
            out = []
            for s in svecs:
                p = s.payload.copy()
                p.flat[0] += np.uint64(1)
                out.append(SVec(p, s.mac))
            return out

        nodes[2].tamper = tamper
        with pytest.raises(IntegrityFailure):
            pool.run_epoch(body_for("FC", unit_vec(rng, K), eps=0.5), EPOCH)
        nodes[2].tamper = None
        assert pool.snapshot()["epochs"] == before["epochs"]


def test_deletion_propagates_to_all(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 10, rng)
        out = pool.run_epoch(body_for("FC", unit_vec(rng, K), eps=3.0), EPOCH)
        assert out["deleted"]
        assert all(not n.stores[EPOCH].fine_present for n in nodes)
        assert all(n.ledger.is_deleted(EPOCH) for n in nodes)
        with pytest.raises(EpochDeleted):
            pool.run_epoch(body_for("FC", unit_vec(rng, K), eps=0.1), EPOCH)
        assert pool.run_epoch(body_for("CC", unit_vec(rng, K)), EPOCH)["value"] >= 0


def test_refusal_without_charge(rng):
    with three_nodes() as (nodes, pool, dealer):
        donate(nodes, dealer, 5, rng)
        with pytest.raises(Refusal):
            pool.run_epoch(body_for("FC", unit_vec(rng, K), eps=9.0), EPOCH)
        assert pool.snapshot()["epochs"] == {}


def test_restart_replay(tmp_path, rng):
    dealer = Dealer(3, seed=31, macs=True)
    with three_nodes(tmp_path, dealer) as (nodes, pool, _):
        X = donate(nodes, dealer, 12, rng)
        q = unit_vec(rng, K)
        v1 = pool.run_epoch(body_for("FC", q, eps=1.0), EPOCH)["value"]
        snap1 = pool.snapshot()
    ledgers1 = [
        (tmp_path / f"ledger{i}.jsonl").read_bytes() for i in range(3)
    ]
    dealer2 = Dealer(3, seed=32, macs=True, alpha=dealer.alpha)
    with three_nodes(tmp_path, dealer2) as (nodes, pool, _):
        snap2 = pool.snapshot()
        assert snap2["epochs"] == snap1["epochs"]
        assert snap2["store_sizes"] == {str(EPOCH): 12}
        # replay must not rewrite the ledger files
        for i in range(3):
            assert (tmp_path / f"ledger{i}.jsonl").read_bytes() == ledgers1[i]
        q2 = unit_vec(rng, K)
        assert (
            pool.run_epoch(body_for("CC", q2), EPOCH)["value"]
            == plaintext_count(X, q2, cosine_to_l2(1.0))
        )


def test_truncated_store_record_dropped(tmp_path, rng):
    dealer = Dealer(3, seed=33, macs=True)
    with three_nodes(tmp_path, dealer) as (nodes, pool, _):
        donate(nodes, dealer, 4, rng)
    # simulate a crash mid-write on one server
    path = tmp_path / "store0.bin"
    data = path.read_bytes()
    path.write_bytes(data + data[: len(data) // 8])
    node = ServerNode(
        make_config(0, tmp_path), tape=Dealer(3, seed=34).tapes[0], alpha_share=1
    )
    assert node.stores[EPOCH].n == 4
    node.ledger.close()


# -- HTTP gateway ------------------------------------------------------


@pytest.fixture
def http(rng):
    with three_nodes() as (nodes, pool, dealer):
        X = donate(nodes, dealer, 20, rng)
        proj = pj.generate_projection(ELL, K, seed=5)
        app = create_app(pool, proj, token="tok")
        with TestClient(app) as client:
            yield client, X, nodes, pool
        for n in nodes:
            n.tamper = None


AUTH = {"Authorization": "Bearer tok"}


def test_http_auth_required(http):
    client, *_ = http
    assert client.get("/budget").status_code == 401
    assert client.post("/query", json={}).status_code == 401
    assert client.get("/budget", headers={"Authorization": "Bearer wrong"}).status_code == 401


def test_http_cc_series(http):
    client, X, *_ = http
    resp = client.post(
        "/query",
        json={"kind": "cc", "vector": [1.0] + [0.0] * (K - 1), "radius": 1.0,
              "epochs": {"from": EPOCH, "to": EPOCH + 4}},
        headers=AUTH,
    )
    assert resp.status_code == 200
    data = resp.json()
    assert len(data["series"]) == 5
    assert data["total_charged"] == 0.0
    assert data["series"][0]["date"] == epoch_to_date(EPOCH)
    assert all(r["status"] == "ok" for r in data["series"])
    # empty epochs report zero
    assert [r["value"] for r in data["series"][1:]] == [0, 0, 0, 0]
    # stored trend retrievable
    qid = data["query_id"]
    assert client.get(f"/trends/{qid}", headers=AUTH).json() == data
    assert client.get("/trends/nope", headers=AUTH).status_code == 404


def test_http_text_query(http):
    client, *_ = http
    resp = client.post(
        "/query",
        json={"kind": "cc", "text": "anything at all", "radius": 2.0,
              "epochs": [EPOCH]},
        headers=AUTH,
    )
    assert resp.status_code == 200
    assert resp.json()["series"][0]["value"] == 20  # rho=2 matches everything


def test_http_fc_receipt_and_budget(http):
    client, X, *_ = http
    q = X[0]
    resp = client.post(
        "/query",
        json={"kind": "fc", "vector": [float(v) for v in q], "radius": 0.8,
              "epochs": [EPOCH], "eps": 0.6},
        headers=AUTH,
    )
    assert resp.status_code == 200
    rec = resp.json()["series"][0]
    assert rec["eps_charged"] == 0.6
    assert rec["value"] == plaintext_count(X, q, cosine_to_l2(0.8))
    budget = client.get("/budget", headers=AUTH).json()
    assert budget["epochs"][str(EPOCH)]["remaining"] == pytest.approx(2.4)


def test_http_409_and_410(http):
    client, X, nodes, pool = http
    base = {"kind": "fc", "vector": [float(v) for v in X[1]], "radius": 1.0,
            "epochs": [EPOCH]}
    resp = client.post("/query", json=dict(base, eps=99.0), headers=AUTH)
    assert resp.status_code == 409
    assert resp.json()["detail"]["epochs"][0]["status"] == "refused"
    # exhaust to zero -> deleted
    client.post("/query", json=dict(base, eps=3.0), headers=AUTH)
    resp = client.post(
        "/query",
        json=dict(base, vector=[float(v) for v in X[2]], eps=0.5),
        headers=AUTH,
    )
    assert resp.status_code == 410
    assert resp.json()["detail"]["error"] == "fine store deleted"


def test_http_validation(http):
    client, *_ = http
    bad = [
        {"kind": "zz", "text": "x", "radius": 1.0, "epochs": [EPOCH]},
        {"kind": "fc", "text": "x", "radius": 1.0, "epochs": [EPOCH]},  # no eps
        {"kind": "cc", "text": "x", "radius": 0.0, "epochs": [EPOCH]},
        {"kind": "cc", "text": "x", "radius": 1.0, "epochs": []},
        {"kind": "cc", "vector": [1.0, 2.0], "radius": 1.0, "epochs": [EPOCH]},
        {"kind": "ct", "text": "x", "radius": 1.0, "epochs": [EPOCH]},  # no t
    ]
    for body in bad:
        assert client.post("/query", json=body, headers=AUTH).status_code == 422


def test_http_ft_alert_lifecycle(http):
    client, X, *_ = http
    q = [float(v) for v in X[0]]
    armed = client.post(
        "/query",
        json={"kind": "ft", "vector": q, "radius": 0.7, "epochs": [EPOCH],
              "threshold": 1000, "eps": 0.4},
        headers=AUTH,
    ).json()
    alerts = client.get("/alerts", headers=AUTH).json()["alerts"]
    assert len(alerts) == 1
    assert alerts[0]["status"] == "armed"
    assert alerts[0]["eps_charged"] == 0.0
    fired = client.post(
        "/query",
        json={"kind": "ft", "vector": q, "radius": 0.7, "epochs": [EPOCH],
              "threshold": 1, "eps": 0.4},
        headers=AUTH,
    ).json()
    assert fired["total_charged"] == 0.4
    cards = {a["id"]: a for a in client.get("/alerts", headers=AUTH).json()["alerts"]}
    fired_card = cards[fired["query_id"]]
    assert fired_card["status"] == "fired"
    assert fired_card["eps_charged"] == 0.4
    assert fired_card["fired_epochs"] == [EPOCH]


def test_http_tamper_502(http):
    client, X, nodes, _ = http

    def tamper(svecs):
        return [SVec(s.payload + np.uint64(3), s.mac) for s in svecs]

    nodes[0].tamper = tamper
    resp = client.post(
        "/query",
        json={"kind": "cc", "text": "zap", "radius": 1.0, "epochs": [EPOCH]},
        headers=AUTH,
    )
    assert resp.status_code == 502
