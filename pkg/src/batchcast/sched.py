"""Distributed phase-2 scheduling from phase-1 reception counts.

Each user looks only at how many packets of each batch it received during the
broadcast phase and builds a matrix estimating how likely its next recoded
packet from a batch is to help a peer. Sorting the matrix entries yields the
user's whole phase-2 transmission order up front; no coordination messages
are exchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytics import NetworkParams


@dataclass
class ReceptionProfile:
    """Per-batch phase-1 reception counts for one user."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValueError("counts must be a 1-D vector")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")


@dataclass
class UsefulnessMatrix:
    """s[u, i]: chance the (u+1)th packet sent from batch i+1 helps a peer."""

    s: np.ndarray

    @property
    def num_batches(self) -> int:
        return self.s.shape[1]


@dataclass
class TransmitQueue:
    """Batch IDs (1-based) in descending usefulness order, length M*n."""

    v: np.ndarray
    values: np.ndarray


def prob_exclusive(received: int, missing: int, loss_source: float,
                   batch_size: int) -> float:
    """Chance a peer lacks exactly `missing` of this user's batch packets.

    Every packet the user holds was independently lost at the peer with the
    source-link probability, so the count is binomial over the user's own
    receptions. Counts above the user's holdings are impossible.
    """
    if missing > received or missing < 0 or missing > batch_size:
        return 0.0
    return (
        math.comb(received, missing)
        * loss_source**missing
        * (1.0 - loss_source) ** (received - missing)
    )


def usefulness(received: int, already_sent: int, loss_source: float,
               loss_peer: float, batch_size: int) -> float:
    """Chance the next recoded packet from a batch is innovative at a peer.

    Marginalizes over how many of the user's packets the peer is missing. If
    the peer misses more than the user has already sent, the next packet
    surely helps. Otherwise it helps only if peer-link erasures swallowed
    enough of the earlier transmissions to leave a gap open.
    """
    m = batch_size
    u = already_sent
    total = 0.0
    for miss in range(u + 1, m + 1):
        total += prob_exclusive(received, miss, loss_source, m)
    for miss in range(1, min(u, m) + 1):
        p_miss = prob_exclusive(received, miss, loss_source, m)
        if p_miss == 0.0:
            continue
        got_through = 0.0
        for l in range(miss):
            got_through += (
                math.comb(u, l) * (1.0 - loss_peer) ** l * loss_peer ** (u - l)
            )
        total += p_miss * got_through
    return total


def build_matrix(profile: ReceptionProfile, params: NetworkParams) -> UsefulnessMatrix:
    """Assemble the full M x n usefulness matrix for one user."""
    m = params.batch_size
    counts = profile.counts
    if np.any(counts > m):
        raise ValueError("reception counts cannot exceed the batch size")
    cache = {}
    s = np.zeros((m, counts.size))
    for i, c in enumerate(counts):
        c = int(c)
        if c not in cache:
            cache[c] = [
                usefulness(c, u, params.loss_source, params.loss_peer, m)
                for u in range(m)
            ]
        s[:, i] = cache[c]
    return UsefulnessMatrix(s=s)


def build_queue(matrix: UsefulnessMatrix) -> TransmitQueue:
    """Flatten the matrix into the user's transmission order.

    Entries are sorted by descending usefulness; exact ties go to the entry
    with fewer packets already sent, then to the lower batch index. Batch IDs
    are 1-based.
    """
    s = matrix.s
    m, n = s.shape
    u_idx, b_idx = np.divmod(np.arange(m * n), n)
    flat = s.ravel()
    # lexsort uses the last key as primary
    order = np.lexsort((b_idx, u_idx, -flat))
    return TransmitQueue(v=b_idx[order] + 1, values=flat[order])


def exhaustion_order(matrix: UsefulnessMatrix) -> np.ndarray:
    """Batch IDs cycled after the queue runs dry, by final-row usefulness.

    The last row holds each batch's usefulness after M sends; cycling in its
    descending order keeps the priority intuition once every queued entry has
    been transmitted. Ties go to the lower batch ID.
    """
    last = matrix.s[-1]
    order = np.lexsort((np.arange(last.size), -last))
    return order + 1
