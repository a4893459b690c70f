"""Donor-side intake: embed, project, perturb, square, and share out.

A message embedding x' (unit-norm, length ell) is projected through a
random Gaussian matrix P down to k dimensions and renormalized to unit
length, which keeps every entry in [-1, 1] and preserves the squared-L2
vs. cosine identity the query engine relies on.  The coarse twin adds
per-coordinate Gaussian noise before renormalizing.  Both vectors and
their elementwise squares are fixed-point encoded and additively shared
for every server.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DegenerateVector, EmptyMessage, InvalidAlpha, InvalidBudget
from .fixedpoint import encode
from .mpc.shares import SVec, share_array

PROJECTION_MAGIC = b"SYNPROJ1"


@dataclass(frozen=True)
class RawEmbedding:
    x_prime: np.ndarray
    message_id: str
    timestamp: datetime

    @property
    def epoch(self) -> int:
        """UTC calendar day index (days since Unix epoch)."""
        ts = self.timestamp.astimezone(timezone.utc)
        return int(ts.timestamp() // 86400)


@dataclass(frozen=True)
class ProjectionMatrix:
    matrix: np.ndarray  # ell x k
    seed: int
    omega2: float  # max row L2 norm

    @property
    def ell(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CoarseNoiseParams:
    eps_p: float
    delta_p: float
    sigma_delta: float


@dataclass(frozen=True)
class ProjectedEmbedding:
    x: np.ndarray
    x_sq: np.ndarray
    x_tilde: np.ndarray
    x_tilde_sq: np.ndarray
    epoch: int
    message_id: str


def choose_dimension(n: int, alpha: float) -> int:
    """Projection dimension for corpus size n at distortion alpha.

    Standard JL bound: k = 4 ln(n) / (alpha^2/2 - alpha^3/3), rounded.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must be in (0, 1), got {alpha}")
    if n < 2:
        raise InvalidAlpha("corpus size must be at least 2")
    denom = alpha * alpha / 2.0 - alpha**3 / 3.0
    return int(round(4.0 * math.log(n) / denom))


def generate_projection(ell: int, k: int, seed: int) -> ProjectionMatrix:
    """Random ell x k matrix with entries N(0, 1/k), reproducible by seed."""
    if ell < 1 or k < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, 1.0 / math.sqrt(k), size=(ell, k))
    omega2 = float(np.max(np.linalg.norm(matrix, axis=1)))
    return ProjectionMatrix(matrix=matrix, seed=seed, omega2=omega2)


def compute_sigma_delta(eps_p: float, delta_p: float, omega2: float) -> float:
    """Gaussian perturbation scale: the equality case of the noise bound."""
    if eps_p <= 0:
        raise InvalidBudget("eps_p must be positive")
    if not 0.0 < delta_p < 0.5:
        raise InvalidBudget("delta_p must be in (0, 1/2)")
    return omega2 * math.sqrt(2.0 * (math.log(1.0 / (2.0 * delta_p)) + eps_p)) / eps_p


def message_rng(seed: int, message_id: str) -> np.random.Generator:
    """Per-message PRNG stream derived from (seed, message_id)."""
    digest = hashlib.sha256(f"{seed}:{message_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def prepare_message(
    raw: RawEmbedding,
    proj: ProjectionMatrix,
    params: CoarseNoiseParams,
    rng: Optional[np.random.Generator] = None,
) -> ProjectedEmbedding:
    norm = float(np.linalg.norm(raw.x_prime))
    if abs(norm - 1.0) > 1e-6:
        raise DegenerateVector(f"input embedding norm {norm:.6f} != 1")
    if rng is None:
        rng = message_rng(proj.seed, raw.message_id)
    projected = raw.x_prime @ proj.matrix
    pnorm = float(np.linalg.norm(projected))
    if pnorm < 1e-9:
        raise DegenerateVector("projected vector has near-zero norm")
    x = projected / pnorm
    if params.sigma_delta > 0.0:
        r = rng.normal(0.0, params.sigma_delta, size=proj.k)
        noisy = x + r
        nnorm = float(np.linalg.norm(noisy))
        if nnorm < 1e-9:
            raise DegenerateVector("perturbed vector has near-zero norm")
        x_tilde = noisy / nnorm
    else:
        x_tilde = x.copy()
    return ProjectedEmbedding(
        x=x,
        x_sq=x * x,
        x_tilde=x_tilde,
        x_tilde_sq=x_tilde * x_tilde,
        epoch=raw.epoch,
        message_id=raw.message_id,
    )


def share_out(
    pe: ProjectedEmbedding,
    n_servers: int,
    rng: np.random.Generator,
    alpha: Optional[int] = None,
) -> list[dict[str, SVec]]:
    """Per-server bundles of the four encoded share vectors."""
    fields = {
        "x": pe.x,
        "x_sq": pe.x_sq,
        "x_tilde": pe.x_tilde,
        "x_tilde_sq": pe.x_tilde_sq,
    }
    bundles: list[dict[str, SVec]] = [dict() for _ in range(n_servers)]
    for name, vec in fields.items():
        shares = share_array(encode(vec), n_servers, rng, alpha)
        for i, s in enumerate(shares):
            bundles[i][name] = s
    return bundles


def toy_embed(text: str, ell: int = 128) -> np.ndarray:
    """Deterministic unit vector from hashed character trigrams.

    Test stand-in for a real embedding model: similar strings share
    trigrams and therefore land near each other.
    """
    if not text:
        raise EmptyMessage("cannot embed an empty message")
    vec = np.zeros(ell, dtype=np.float64)
    padded = f"  {text.lower()}  "
    for i in range(len(padded) - 2):
        gram = padded[i : i + 3]
        h = hashlib.blake2b(gram.encode(), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "little") % ell
        sign = 1.0 if h[4] & 1 else -1.0
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise EmptyMessage("message produced no features")
    return vec / norm


# -- I/O ---------------------------------------------------------------


def read_embeddings_jsonl(path) -> Iterator[RawEmbedding]:
    """One JSON record per line: {message_id, timestamp, vector}."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ts = datetime.fromisoformat(rec["timestamp"].replace("Z", "+00:00"))
            yield RawEmbedding(
                x_prime=np.asarray(rec["vector"], dtype=np.float64),
                message_id=str(rec["message_id"]),
                timestamp=ts,
            )


def write_embeddings_jsonl(path, records: Iterable[RawEmbedding]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "message_id": rec.message_id,
                        "timestamp": rec.timestamp.astimezone(timezone.utc).isoformat(),
                        "vector": [float(v) for v in rec.x_prime],
                    }
                )
                + "\n"
            )
            n += 1
    return n


def save_projection(path, proj: ProjectionMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(PROJECTION_MAGIC)
        fh.write(struct.pack("<QIId", proj.seed, proj.ell, proj.k, proj.omega2))
        fh.write(proj.matrix.astype("<f8").tobytes())


def load_projection(path) -> ProjectionMatrix:
    with open(path, "rb") as fh:
        if fh.read(8) != PROJECTION_MAGIC:
            raise ValueError("not a projection file")
        seed, ell, k, omega2 = struct.unpack("<QIId", fh.read(24))
        matrix = np.frombuffer(fh.read(8 * ell * k), dtype="<f8").reshape(ell, k).copy()
    return ProjectionMatrix(matrix=matrix, seed=seed, omega2=omega2)
