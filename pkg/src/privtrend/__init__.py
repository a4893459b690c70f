"""Private trend queries over secret-shared message embeddings.

Donors split JL-projected embedding vectors into additive secret shares
held by n non-colluding servers; journalists ask differentially private
count and threshold queries about how many donated messages fall within
a semantic radius of a query point, per UTC-day epoch.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DealerExhausted,
    EpochDeleted,
    IntegrityFailure,
    InvalidAlpha,
    InvalidBudget,
    OneTimeOnly,
    PrivtrendError,
    Refusal,
)
