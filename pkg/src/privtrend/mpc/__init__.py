from .shares import PartyCtx, Share, SVec, reconstruct, reconstruct_array, share_array, share_scalar
from .dealer import Dealer, PartyTape, TapeCounts, load_tape, save_tape
from . import protocol
from .protocol import beaver_multiply, run_local, secure_less_than

__all__ = [
    "beaver_multiply",
    "run_local",
    "secure_less_than",
    "PartyCtx",
    "Share",
    "SVec",
    "share_scalar",
    "share_array",
    "reconstruct",
    "reconstruct_array",
    "Dealer",
    "PartyTape",
    "TapeCounts",
    "save_tape",
    "load_tape",
    "protocol",
]
