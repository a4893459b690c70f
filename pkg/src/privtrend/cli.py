"""Operator command line: setup, serve, gateway, donate, query."""

from __future__ import annotations

import json
import signal
import sys
import threading
from pathlib import Path

import click
import numpy as np
import requests

from . import projection as pj
from . import wire
from .errors import DegenerateVector, MalformedBundle
from .mpc.dealer import Dealer, TapeCounts, save_tape
from .node import ServerConfig, ServerNode


def _parse_addrs(servers: str):
    addrs = []
    for part in servers.split(","):
        host, _, port = part.strip().rpartition(":")
        addrs.append((host or "127.0.0.1", int(port)))
    return addrs


def _parse_epochs(spec: str):
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(e) for e in spec.split(",")]


@click.group()
def main():
    """Private trend inference over donated message embeddings."""


@main.command()
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--ell", default=128, show_default=True, help="input embedding dimension")
@click.option("--k", default=None, type=int, help="projected dimension (overrides --alpha)")
@click.option("--n-messages", default=3442, show_default=True, help="expected corpus size for the JL bound")
@click.option("--alpha", default=0.5, show_default=True, help="JL distortion parameter")
@click.option("--n-servers", default=3, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--eps-f-max", default=3.0, show_default=True)
@click.option("--eps-p", default=2.0, show_default=True)
@click.option("--delta-p", default=1e-5, show_default=True)
@click.option("--base-port", default=9700, show_default=True)
@click.option("--triples", default=2_000_000, show_default=True, help="preprocessed triples per tape")
@click.option("--bits", default=8_000_000, show_default=True, help="preprocessed shared bits per tape")
@click.option("--zero-noise", is_flag=True, hidden=True)
def setup(out_dir, ell, k, n_messages, alpha, n_servers, seed, eps_f_max, eps_p,
          delta_p, base_port, triples, bits, zero_noise):
    """Generate the shared projection, server configs, and dealer tapes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if k is None:
        k = pj.choose_dimension(n_messages, alpha)
    proj = pj.generate_projection(ell, k, seed)
    pj.save_projection(out / "projection.bin", proj)
    sigma = pj.compute_sigma_delta(eps_p, delta_p, proj.omega2)

    dealer = Dealer(n_servers, seed + 1, macs=True)
    # noise pools for a few common budget settings; live servers cannot
    # extend a file tape, so be generous
    laplace = {}
    for eps in (0.2, 0.6, 1.0, 2.0, 4.0):
        laplace[1.0 / eps] = 2048   # FC noise
        laplace[2.0 / eps] = 2048   # SVT threshold noise
        laplace[4.0 / eps] = 2048   # SVT count noise
    dealer.generate(TapeCounts(triples=triples, random_bits=bits, laplace=laplace))
    for i in range(n_servers):
        save_tape(out / f"tape{i}.bin", dealer.tapes[i], dealer.alpha_shares[i])
        cfg = ServerConfig(
            party_id=i, n_parties=n_servers, k=k, eps_f_max=eps_f_max,
            eps_p=eps_p, delta_p=delta_p, projection_seed=seed,
            macs=True, zero_noise=zero_noise, port=base_port + i,
            store_path=str(out / f"store{i}.bin"),
            ledger_path=str(out / f"ledger{i}.jsonl"),
            tape_path=str(out / f"tape{i}.bin"),
        )
        cfg.save(out / f"server{i}.json")
    with open(out / "donor.json", "w") as fh:
        json.dump(
            {
                "mac_key": dealer.alpha,
                "sigma_delta": sigma,
                "eps_p": eps_p,
                "delta_p": delta_p,
                "n_servers": n_servers,
            },
            fh,
        )
    click.echo(f"setup complete: k={k}, omega2={proj.omega2:.4f}, sigma_delta={sigma:.4f}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def serve(config_path):
    """Run one MPC server node until SIGTERM/SIGINT."""
    cfg = ServerConfig.load(config_path)
    node = ServerNode(cfg)
    node.start()
    click.echo(f"server {cfg.party_id}/{cfg.n_parties} listening on {cfg.host}:{node.port}")
    stop = threading.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    node.stop()
    click.echo("server stopped, stores flushed")


@main.command(name="gateway")
@click.option("--servers", required=True, help="comma-separated host:port list")
@click.option("--projection", "proj_path", type=click.Path(exists=True), required=True)
@click.option("--token", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=9780, show_default=True)
def gateway_cmd(servers, proj_path, token, host, port):
    """Run the querier-facing HTTP gateway."""
    import uvicorn

    from .gateway import ServerPool, create_app

    pool = ServerPool(_parse_addrs(servers))
    info = pool.handshake()
    click.echo(f"handshake ok: config {info['config_hash']}")
    proj = pj.load_projection(proj_path)
    app = create_app(pool, proj, token)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True), required=True,
              help="JSONL of {message_id, timestamp, vector}")
@click.option("--projection", "proj_path", type=click.Path(exists=True), required=True)
@click.option("--donor-secret", type=click.Path(exists=True), required=True,
              help="donor.json from setup (MAC key + noise scale)")
@click.option("--servers", required=True)
@click.option("--seed", default=None, type=int, help="sharing RNG seed (default: OS entropy)")
def donate(input_path, proj_path, donor_secret, servers, seed):
    """Project, perturb, share, and submit a donation corpus."""
    proj = pj.load_projection(proj_path)
    with open(donor_secret) as fh:
        secret = json.load(fh)
    params = pj.CoarseNoiseParams(secret["eps_p"], secret["delta_p"], secret["sigma_delta"])
    n_servers = secret["n_servers"]
    rng = np.random.default_rng(seed)
    addrs = _parse_addrs(servers)
    try:
        conns = [wire.Conn(h, p) for h, p in addrs]
    except OSError as exc:
        click.echo(f"transport failure: {exc}", err=True)
        sys.exit(3)

    sent = 0
    skipped = []
    per_epoch: dict[int, int] = {}
    for raw in pj.read_embeddings_jsonl(input_path):
        if raw.x_prime.shape != (proj.ell,):
            skipped.append((raw.message_id, "DimensionError"))
            continue
        try:
            pe = pj.prepare_message(raw, proj, params)
        except DegenerateVector:
            skipped.append((raw.message_id, "NormError"))
            continue
        bundles = pj.share_out(pe, n_servers, rng, secret["mac_key"])
        ok = True
        for conn, bundle in zip(conns, bundles):
            ack = conn.rpc(
                wire.Frame(wire.KIND_SUBMIT_SHARES, 0, pe.epoch, wire.pack_bundle(bundle))
            )
            if ack.kind != wire.KIND_ACK:
                skipped.append((raw.message_id, ack.json().get("code", "error")))
                ok = False
                break
        if ok:
            sent += 1
            per_epoch[pe.epoch] = per_epoch.get(pe.epoch, 0) + 1
    for conn in conns:
        conn.close()
    click.echo(json.dumps({
        "sent": sent,
        "skipped": [{"message_id": m, "reason": r} for m, r in skipped],
        "per_epoch": {str(e): c for e, c in sorted(per_epoch.items())},
    }, indent=2))


@main.command()
@click.option("--gateway", "gateway_url", required=True)
@click.option("--token", required=True)
@click.option("--kind", type=click.Choice(["fc", "ft", "cc", "ct"]), required=True)
@click.option("--text", default=None)
@click.option("--vector-file", type=click.Path(exists=True), default=None)
@click.option("--radius", type=float, required=True, help="cosine-distance radius")
@click.option("--threshold", type=int, default=None)
@click.option("--epochs", required=True, help="FROM..TO (inclusive) or comma list")
@click.option("--eps", type=float, default=None)
@click.option("--out", "out_path", default=None,
              help="artifact path; .csv or .png by extension")
def query(gateway_url, token, kind, text, vector_file, radius, threshold, epochs,
          eps, out_path):
    """Issue a trend query via the gateway; CSV (date, value) on stdout."""
    if (text is None) == (vector_file is None):
        click.echo("give exactly one of --text / --vector-file", err=True)
        sys.exit(2)
    body = {
        "kind": kind.upper(),
        "radius": radius,
        "epochs": _parse_epochs(epochs),
        "threshold": threshold,
        "eps": eps,
    }
    if text is not None:
        body["text"] = text
    else:
        body["vector"] = [float(x) for x in np.loadtxt(vector_file, ndmin=1)]
    try:
        resp = requests.post(
            f"{gateway_url.rstrip('/')}/query",
            json=body,
            headers={"Authorization": f"Bearer {token}"},
            timeout=600,
        )
    except requests.RequestException as exc:
        click.echo(f"transport failure: {exc}", err=True)
        sys.exit(3)
    if resp.status_code in (409, 410):
        click.echo(f"refused: {resp.json()['detail']['error']}", err=True)
        sys.exit(2)
    if resp.status_code >= 500:
        click.echo(f"transport failure: HTTP {resp.status_code}", err=True)
        sys.exit(3)
    if resp.status_code != 200:
        click.echo(f"error: HTTP {resp.status_code}: {resp.text}", err=True)
        sys.exit(2)
    data = resp.json()
    series = data["series"]

    lines = ["date,value"]
    for rec in series:
        value = "" if rec["value"] is None else rec["value"]
        lines.append(f"{rec['date']},{value}")
    csv_text = "\n".join(lines) + "\n"
    click.echo(csv_text, nl=False)
    click.echo(f"# query_id={data['query_id']} total_charged={data['total_charged']}", err=True)

    if out_path:
        if out_path.endswith(".png"):
            _plot(series, data, out_path)
        else:
            with open(out_path, "w") as fh:
                fh.write(csv_text)
    if any(rec["status"] != "ok" for rec in series):
        sys.exit(2)


def _plot(series, data, out_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r["date"] for r in series]
    ys = [r["value"] if r["value"] is not None else float("nan") for r in series]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(xs, ys, marker="o", lw=1.5)
    refused = [i for i, r in enumerate(series) if r["status"] != "ok"]
    if refused:
        ax.scatter([xs[i] for i in refused], [0] * len(refused), marker="x", color="red")
    ax.set_xlabel("epoch (UTC day)")
    ax.set_ylabel("matching messages")
    ax.set_title(f"{data['kind']} trend, radius {data['radius']}")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


if __name__ == "__main__":
    main()
