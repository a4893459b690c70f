"""Per-epoch privacy budget ledger with append-only persistence.

Every fine-grained charge is recorded as one log line; replaying the log
rebuilds the ledger exactly.  Hitting zero emits a delete-fine-store
directive; further fine charges against that epoch are refused as
deleted.  The coarse store's one-time (eps_p, delta_p) charge is logged
once and may never be repeated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import EpochDeleted, OneTimeOnly, Refusal

# guard against float drift when repeatedly subtracting charges
_EPS_TOL = 1e-9


@dataclass(frozen=True)
class ChargeResult:
    epoch: int
    eps: float
    remaining: float
    delete_fine_store: bool


def query_hash(kind: str, q_bytes: bytes, a_enc: int, t: Optional[int], epoch: int) -> str:
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(q_bytes)
    h.update(str(a_enc).encode())
    h.update(str(t).encode())
    h.update(str(epoch).encode())
    return h.hexdigest()[:16]


class BudgetLedger:
    def __init__(self, eps_f_max: float, log_path=None):
        self.eps_f_max = float(eps_f_max)
        self.remaining: Dict[int, float] = {}
        self.spent_log: List[dict] = []
        self.coarse_charge: Optional[Tuple[float, float]] = None
        self.deleted: set[int] = set()
        self._seq = 0
        self._log_path = log_path
        self._log_fh = None
        if log_path is not None:
            self._replay()
            self._log_fh = open(log_path, "a")

    # -- persistence ---------------------------------------------------

    def _replay(self) -> None:
        try:
            fh = open(self._log_path)
        except FileNotFoundError:
            return
        with fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                self._apply(json.loads(line), record=False)

    def _append(self, rec: dict) -> None:
        self.spent_log.append(rec)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(rec) + "\n")
            self._log_fh.flush()

    def _apply(self, rec: dict, record: bool = True) -> None:
        self._seq = max(self._seq, rec["seq"])
        kind = rec["kind"]
        if kind == "coarse":
            self.coarse_charge = (rec["eps"], rec["delta"])
        else:
            epoch = rec["epoch"]
            self.remaining[epoch] = self._remaining(epoch) - rec["eps"]
            if self.remaining[epoch] <= _EPS_TOL:
                self.remaining[epoch] = 0.0
                self.deleted.add(epoch)
        if record:
            self._append(rec)
        else:
            self.spent_log.append(rec)

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # -- queries -------------------------------------------------------

    def _remaining(self, epoch: int) -> float:
        return self.remaining.get(epoch, self.eps_f_max)

    def remaining_for(self, epoch: int) -> float:
        return self._remaining(epoch)

    def is_deleted(self, epoch: int) -> bool:
        return epoch in self.deleted

    def can_charge(self, epoch: int, eps: float) -> bool:
        return not self.is_deleted(epoch) and eps <= self._remaining(epoch) + _EPS_TOL

    # -- mutation ------------------------------------------------------

    def charge(self, epoch: int, eps: float, descriptor: str = "", kind: str = "fc") -> ChargeResult:
        if eps <= 0:
            raise ValueError("charge must be positive")
        if self.is_deleted(epoch):
            raise EpochDeleted(f"fine store for epoch {epoch} was deleted")
        rem = self._remaining(epoch)
        if eps > rem + _EPS_TOL:
            raise Refusal(
                f"epoch {epoch}: requested eps {eps} exceeds remaining {rem:.6g}"
            )
        self._seq += 1
        self._apply(
            {
                "seq": self._seq,
                "epoch": epoch,
                "query": descriptor,
                "kind": kind,
                "eps": eps,
                "result": "charged",
            }
        )
        rem_after = self._remaining(epoch)
        return ChargeResult(
            epoch=epoch,
            eps=eps,
            remaining=rem_after,
            delete_fine_store=self.is_deleted(epoch),
        )

    def charge_coarse(self, eps_p: float, delta_p: float) -> None:
        if self.coarse_charge is not None:
            raise OneTimeOnly("coarse store charge was already recorded")
        self._seq += 1
        self._apply(
            {
                "seq": self._seq,
                "epoch": -1,
                "query": "coarse-store",
                "kind": "coarse",
                "eps": eps_p,
                "delta": delta_p,
                "result": "charged",
            }
        )

    # -- reporting -----------------------------------------------------

    def total_spent(self, epoch: int) -> float:
        return sum(r["eps"] for r in self.spent_log if r.get("epoch") == epoch)

    def snapshot(self) -> dict:
        return {
            "eps_f_max": self.eps_f_max,
            "coarse_charge": self.coarse_charge,
            "epochs": {
                str(e): {"remaining": self._remaining(e), "deleted": e in self.deleted}
                for e in sorted(set(self.remaining) | self.deleted)
            },
        }
