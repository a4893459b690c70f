"""Length-prefixed wire protocol between donors, servers, and the gateway.

Frame layout, little-endian:

    u32 body_len | u8 version | u8 kind | u32 session_id | i64 epoch | body

Control frames carry JSON bodies; share-exchange frames carry a binary
block of uint64 arrays.  Unknown kinds are rejected with a versioned
error frame.  Peers never act on a truncated frame: the length prefix is
read fully before the body is parsed.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import MalformedBundle
from .mpc.shares import SVec

WIRE_VERSION = 1

KIND_ERROR = 0
KIND_SUBMIT_SHARES = 1
KIND_QUERY_REQUEST = 2
KIND_SHARE_EXCHANGE = 3
KIND_QUERY_RESPONSE_SHARE = 4
KIND_TAPE_SYNC = 5
KIND_BUDGET_EVENT = 6
KIND_ACK = 7

KNOWN_KINDS = frozenset(range(8))

_HEADER = struct.Struct("<IBBIq")
MAX_FRAME = 1 << 28  # 256 MiB: far above any desk-scale frame


@dataclass(frozen=True)
class Frame:
    kind: int
    session_id: int = 0
    epoch: int = 0
    payload: bytes = b""
    version: int = WIRE_VERSION

    def json(self) -> dict:
        return json.loads(self.payload.decode())


def json_frame(kind: int, obj: dict, session_id: int = 0, epoch: int = 0) -> Frame:
    return Frame(kind, session_id, epoch, json.dumps(obj).encode())


def error_frame(code: str, detail: str = "", session_id: int = 0, epoch: int = 0) -> Frame:
    return json_frame(KIND_ERROR, {"code": code, "detail": detail}, session_id, epoch)


def encode_frame(frame: Frame) -> bytes:
    header = _HEADER.pack(
        len(frame.payload), frame.version, frame.kind, frame.session_id, frame.epoch
    )
    return header + frame.payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def recv_frame(sock: socket.socket) -> Frame:
    header = _recv_exact(sock, _HEADER.size)
    body_len, version, kind, session_id, epoch = _HEADER.unpack(header)
    if body_len > MAX_FRAME:
        raise MalformedBundle(f"frame body of {body_len} bytes exceeds limit")
    payload = _recv_exact(sock, body_len) if body_len else b""
    return Frame(kind, session_id, epoch, payload, version)


# -- binary share blocks -----------------------------------------------
#
# u32 count | per SVec: u8 has_mac | u8 ndim | u32 dims... | payload | mac


def pack_svecs(svecs: Sequence[SVec]) -> bytes:
    out = [struct.pack("<I", len(svecs))]
    for s in svecs:
        has_mac = s.mac is not None
        dims = s.payload.shape
        out.append(struct.pack("<BB", 1 if has_mac else 0, len(dims)))
        out.append(struct.pack(f"<{len(dims)}I", *dims))
        out.append(s.payload.astype("<u8").tobytes())
        if has_mac:
            out.append(s.mac.astype("<u8").tobytes())
    return b"".join(out)


def unpack_svecs(data: bytes) -> List[SVec]:
    view = memoryview(data)
    try:
        (count,) = struct.unpack_from("<I", view, 0)
        off = 4
        svecs = []
        for _ in range(count):
            has_mac, ndim = struct.unpack_from("<BB", view, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}I", view, off)
            off += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            nbytes = 8 * size
            payload = np.frombuffer(view[off : off + nbytes], dtype="<u8")
            if payload.size != size:
                raise struct.error("short payload")
            payload = payload.astype(np.uint64).reshape(dims)
            off += nbytes
            mac = None
            if has_mac:
                mac = np.frombuffer(view[off : off + nbytes], dtype="<u8")
                if mac.size != size:
                    raise struct.error("short mac")
                mac = mac.astype(np.uint64).reshape(dims)
                off += nbytes
            svecs.append(SVec(payload, mac))
        if off != len(data):
            raise struct.error("trailing bytes")
        return svecs
    except (struct.error, ValueError) as exc:
        raise MalformedBundle(f"bad share block: {exc}") from exc


def pack_publics(arrays: Sequence[np.ndarray]) -> bytes:
    return pack_svecs([SVec(a) for a in arrays])


def unpack_publics(data: bytes) -> List[np.ndarray]:
    return [s.payload for s in unpack_svecs(data)]


# -- bundle frames (donor -> one server) -------------------------------

BUNDLE_FIELDS = ("x", "x_sq", "x_tilde", "x_tilde_sq")
COARSE_FIELDS = ("x_tilde", "x_tilde_sq")


def pack_bundle(bundle: dict, fine: bool = True) -> bytes:
    fields = BUNDLE_FIELDS if fine else COARSE_FIELDS
    return struct.pack("<B", 1 if fine else 0) + pack_svecs([bundle[f] for f in fields])


def unpack_bundle(data: bytes) -> dict:
    if len(data) < 1:
        raise MalformedBundle("empty bundle body")
    fine = bool(data[0])
    fields = BUNDLE_FIELDS if fine else COARSE_FIELDS
    svecs = unpack_svecs(data[1:])
    if len(svecs) != len(fields):
        raise MalformedBundle(f"bundle has {len(svecs)} fields, wanted {len(fields)}")
    return dict(zip(fields, svecs))


class Conn:
    """Tiny framed-socket wrapper used by clients and the gateway."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.addr = (host, port)
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, frame: Frame) -> None:
        send_frame(self.sock, frame)

    def recv(self) -> Frame:
        return recv_frame(self.sock)

    def rpc(self, frame: Frame) -> Frame:
        self.send(frame)
        return self.recv()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
