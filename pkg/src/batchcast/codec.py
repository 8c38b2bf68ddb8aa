"""Batch-structured fountain coding over GF(2^8).

The outer code picks, per batch, a random degree-d subset of the file and a
random d x M generator; the source emits the M resulting packets with one-hot
coefficient vectors. Peers recode freely inside a batch, so a receiver only
ever tracks an M-wide coefficient space per batch. Joint decoding peels
batches whose unresolved contributors fit under the received rank, falls back
to marking packets as symbolic unknowns when peeling stalls, and closes the
symbolic system by elimination at the end. That fallback makes the decoder
exact: it recovers the file precisely when the stacked linear system has full
rank, and otherwise reports exactly how many packets remain undetermined.

Descriptors never travel. Each batch's degree, contributor set, and generator
are redrawn from a deterministic stream seeded by (session seed, batch id),
in that draw order, so a two-byte batch id in the packet header is enough for
any receiver to rebuild them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import gf


# ------------------------------------------------------------------ packets


@dataclass
class Packet:
    """One coded packet: batch id, M-wide coefficient vector, payload."""

    batch_id: int
    coeff: np.ndarray
    payload: np.ndarray


def packet_wire_size(batch_size: int, payload_len: int) -> int:
    """Bytes one packet occupies on the simulated wire."""
    return 2 + batch_size + payload_len


def pack_packet(p: Packet) -> bytes:
    """Serialize as batch_id (2 bytes, big endian) + coeff + payload."""
    return struct.pack(">H", p.batch_id) + p.coeff.tobytes() + p.payload.tobytes()


def unpack_packet(data: bytes, batch_size: int, payload_len: int) -> Packet:
    if len(data) != packet_wire_size(batch_size, payload_len):
        raise ValueError("wire data has wrong length")
    (batch_id,) = struct.unpack(">H", data[:2])
    coeff = np.frombuffer(data[2 : 2 + batch_size], dtype=np.uint8).copy()
    payload = np.frombuffer(data[2 + batch_size :], dtype=np.uint8).copy()
    return Packet(batch_id=batch_id, coeff=coeff, payload=payload)


# ------------------------------------------------------- degree distribution


class DegreeDistribution:
    """Probability vector over batch degrees 1..max_degree."""

    def __init__(self, psi):
        psi = np.asarray(psi, dtype=float)
        if psi.ndim != 1 or psi.size == 0:
            raise ValueError("psi must be a nonempty 1-D probability vector")
        if np.any(psi < 0):
            raise ValueError("degree probabilities must be nonnegative")
        total = float(psi.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(
                "degree probabilities must sum to 1 within 1e-9, got %.12f" % total
            )
        self.psi = psi
        support = np.nonzero(psi)[0]
        self._degrees = support + 1
        # exact renormalization so the sampler never trips on float residue
        self._probs = psi[support] / psi[support].sum()

    @property
    def max_degree(self) -> int:
        return int(self._degrees[-1])

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        picked = rng.choice(self._degrees, size=size, p=self._probs)
        return int(picked) if size is None else picked.astype(np.int64)

    def to_file(self, path: str) -> None:
        """Write one "degree probability" pair per line."""
        with open(path, "w") as fh:
            for d, p in zip(self._degrees, self._probs):
                fh.write("%d %.17g\n" % (d, p))

    @classmethod
    def from_file(cls, path: str) -> "DegreeDistribution":
        degrees: List[int] = []
        probs: List[float] = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ValueError(
                        "%s:%d: expected 'degree probability'" % (path, lineno)
                    )
                d = int(parts[0])
                p = float(parts[1])
                if d < 1:
                    raise ValueError("%s:%d: degree must be >= 1" % (path, lineno))
                degrees.append(d)
                probs.append(p)
        if not degrees:
            raise ValueError("%s: no degree entries" % path)
        psi = np.zeros(max(degrees))
        for d, p in zip(degrees, probs):
            psi[d - 1] += p
        return cls(psi)


def sample_degree(dist: DegreeDistribution, rng: np.random.Generator) -> int:
    return dist.sample(rng)


def default_distribution(batch_size: int) -> DegreeDistribution:
    """Fallback degree law: a robust-soliton shape capped at 4M.

    Good enough for small files and desk tests. Transmission plans sized for
    large files should use design_distribution instead, which adapts the
    degree range to the file and batch count.
    """
    cap = 4 * batch_size
    psi = np.zeros(cap)
    psi[0] = 1.0 / cap
    for d in range(2, cap + 1):
        psi[d - 1] = 1.0 / (d * (d - 1))
    c, delta = 0.1, 0.05
    r = c * math.log(cap / delta) * math.sqrt(cap)
    spike = min(cap, max(2, int(round(cap / r))))
    for d in range(1, spike):
        psi[d - 1] += r / (d * cap)
    psi[spike - 1] += r * math.log(r / delta) / cap
    return DegreeDistribution(psi / psi.sum())


def design_distribution(
    file_packets: int,
    batches: int,
    batch_size: int,
    expected_rank: Optional[float] = None,
) -> DegreeDistribution:
    """Degree law sized for a planned transmission.

    Two ingredients. An inverse-square ramp over [d_lo, F] spreads batch
    release points across the whole peeling timeline: a degree-d batch
    becomes solvable once its unresolved count falls to its received rank,
    so the ramp is anchored just above the rank a batch is expected to hold
    at decode time (the natural spread of realized ranks lets the lowest
    ramp degrees start the cascade) and decays slowly enough that batches
    keep releasing until the very end. On top of that, a sliver of full-mix
    batches (degree F) guarantees every packet is covered by received
    equations, which is what keeps the reception overhead needed for full
    rank near zero; sized so that even rare plans draw several.

    expected_rank should be the mean per-batch rank anticipated at the
    moment decoding starts. When omitted it is inferred from the plan,
    assuming decoding triggers right above file_packets worth of rank.
    """
    f, n, m = file_packets, batches, batch_size
    if f < 1 or n < 1 or m < 1:
        raise ValueError("file_packets, batches, batch_size must be positive")
    if f <= m:
        psi = np.zeros(f)
        psi[f - 1] = 1.0
        return DegreeDistribution(psi)
    if expected_rank is None:
        expected_rank = 1.01 * f / n
    r = min(max(float(expected_rank), 2.0), float(m))
    d_lo = min(max(4, int(math.ceil(r)) + 2), m, f)
    w_cov = min(0.25, 12.0 / n)
    degrees = np.arange(d_lo, f + 1, dtype=float)
    ramp = 1.0 / (degrees * degrees)
    ramp *= (1.0 - w_cov) / ramp.sum()
    psi = np.zeros(f)
    psi[d_lo - 1 :] = ramp
    psi[f - 1] += w_cov
    return DegreeDistribution(psi)


# ---------------------------------------------------------------- descriptor


@dataclass
class BatchDescriptor:
    """Recipe for one batch: which packets went in and how they were mixed."""

    batch_id: int
    degree: int
    contributor_ids: np.ndarray  # 1-based, distinct
    generator: np.ndarray  # degree x M

    def __post_init__(self):
        if self.generator.shape != (self.degree, self.generator.shape[1]):
            raise ValueError("generator must have one row per contributor")
        if self.contributor_ids.size != self.degree:
            raise ValueError("contributor count must equal the degree")


def descriptor_rng(session_seed: int, batch_id: int) -> np.random.Generator:
    """Deterministic per-batch stream shared by source and receivers."""
    return np.random.default_rng(np.random.SeedSequence((session_seed, batch_id)))


def make_descriptor(
    file_packets: int,
    dist: DegreeDistribution,
    batch_id: int,
    rng: np.random.Generator,
    batch_size: int,
) -> BatchDescriptor:
    """Draw a batch recipe: degree, then contributors, then generator."""
    d = sample_degree(dist, rng)
    if d > file_packets:
        raise ValueError(
            "degree %d exceeds the file's %d packets" % (d, file_packets)
        )
    contributors = rng.choice(file_packets, size=d, replace=False).astype(np.int64) + 1
    generator = rng.integers(0, 256, size=(d, batch_size), dtype=np.uint8)
    return BatchDescriptor(
        batch_id=batch_id, degree=d, contributor_ids=contributors, generator=generator
    )


# --------------------------------------------------------------- batch state


class BatchState:
    """One receiver's buffer for one batch, with innovation filtering.

    Keeps every innovative row raw (for recoding) plus a reduced basis used
    to test innovation. One-hot rows, the common case during the broadcast
    phase, short-circuit to a received-slot mask so phase 1 costs almost
    nothing per packet.
    """

    def __init__(self, batch_id: int, batch_size: int, payload_len: int):
        self.batch_id = batch_id
        self.batch_size = batch_size
        self.payload_len = payload_len
        self.coeffs = np.zeros((batch_size, batch_size), dtype=np.uint8)
        self.payloads = np.zeros((batch_size, payload_len), dtype=np.uint8)
        self.rank = 0
        self._slot_mask = np.zeros(batch_size, dtype=bool)
        # reduced general rows: pivot column -> row (slot-masked, pivot = 1)
        self._pivot_rows: Dict[int, np.ndarray] = {}

    @property
    def received_coeffs(self) -> np.ndarray:
        return self.coeffs[: self.rank]

    @property
    def received_payloads(self) -> np.ndarray:
        return self.payloads[: self.rank]

    def _store(self, packet: Packet) -> None:
        self.coeffs[self.rank] = packet.coeff
        self.payloads[self.rank] = packet.payload
        self.rank += 1

    def _mask_slot(self, slot: int) -> None:
        self._slot_mask[slot] = True
        if not self._pivot_rows:
            return
        # keep stored rows clean of masked slots; a row that loses its pivot
        # is reinserted so the basis stays reduced
        if slot in self._pivot_rows:
            row = self._pivot_rows.pop(slot)
            row[slot] = 0
            self._reduce_and_keep(row)
        else:
            for row in self._pivot_rows.values():
                row[slot] = 0

    def _reduce(self, row: np.ndarray) -> np.ndarray:
        work = row.copy()
        work[self._slot_mask] = 0
        for pivot, basis in self._pivot_rows.items():
            factor = work[pivot]
            if factor:
                work ^= gf.MUL_TABLE[factor, basis]
        return work

    def _reduce_and_keep(self, row: np.ndarray) -> bool:
        work = self._reduce(row)
        nz = np.nonzero(work)[0]
        if nz.size == 0:
            return False
        pivot = int(nz[0])
        work = gf.MUL_TABLE[gf._INV[work[pivot]], work]
        for other in self._pivot_rows.values():
            factor = other[pivot]
            if factor:
                other ^= gf.MUL_TABLE[factor, work]
        self._pivot_rows[pivot] = work
        return True

    def absorb(self, packet: Packet) -> bool:
        """Keep the packet iff it raises this batch's rank."""
        if packet.batch_id != self.batch_id:
            raise ValueError(
                "packet for batch %d absorbed into batch %d"
                % (packet.batch_id, self.batch_id)
            )
        if packet.coeff.shape != (self.batch_size,):
            raise ValueError("coefficient vector has wrong length")
        if self.rank == self.batch_size:
            return False
        nz = np.nonzero(packet.coeff)[0]
        if nz.size == 0:
            return False
        if nz.size == 1:
            slot = int(nz[0])
            if self._slot_mask[slot]:
                return False
            if self._pivot_rows and self._reduce(packet.coeff).max() == 0:
                return False
            self._mask_slot(slot)
            self._store(packet)
            return True
        if not self._reduce_and_keep(packet.coeff):
            return False
        self._store(packet)
        return True


def recode(state: BatchState, rng: np.random.Generator) -> Packet:
    """Random nonzero combination of everything buffered for the batch."""
    if state.rank == 0:
        raise ValueError("cannot recode from an empty batch buffer")
    while True:
        mix = rng.integers(0, 256, size=state.rank, dtype=np.uint8)
        if mix.any():
            break
    coeff = gf.matmul(mix[None, :], state.received_coeffs)[0]
    payload = gf.matmul(mix[None, :], state.received_payloads)[0]
    return Packet(batch_id=state.batch_id, coeff=coeff, payload=payload)


def encode_batch(
    file: np.ndarray,
    dist: DegreeDistribution,
    batch_id: int,
    rng: np.random.Generator,
    batch_size: int,
) -> Tuple[BatchDescriptor, List[Packet]]:
    """Produce one batch of M source packets from the (F, L) file array."""
    file = np.asarray(file, dtype=np.uint8)
    desc = make_descriptor(file.shape[0], dist, batch_id, rng, batch_size)
    m = desc.generator.shape[1]
    payloads = gf.matmul(desc.generator.T, file[desc.contributor_ids - 1])
    packets = []
    for j in range(m):
        coeff = np.zeros(m, dtype=np.uint8)
        coeff[j] = 1
        packets.append(Packet(batch_id=batch_id, coeff=coeff, payload=payloads[j]))
    return desc, packets


# ------------------------------------------------------------------ decoding


@dataclass
class DecodeResult:
    success: bool
    payloads: Optional[np.ndarray]
    unresolved: int
    inactivated: int


class _ZSystem:
    """Incremental elimination over the symbolic unknowns.

    Rows are constraints z_coeffs . Z = rhs gathered from surplus receptions.
    Kept fully reduced so rank queries are free and the final solve is a
    read-off.
    """

    def __init__(self, payload_len: int):
        self.payload_len = payload_len
        self.zrows = np.zeros((0, 0), dtype=np.uint8)
        self.brows = np.zeros((0, payload_len), dtype=np.uint8)
        self.pivot_cols: List[int] = []

    @property
    def rank(self) -> int:
        return len(self.pivot_cols)

    def _widen(self, width: int) -> None:
        if width > self.zrows.shape[1]:
            pad = np.zeros((self.zrows.shape[0], width - self.zrows.shape[1]), np.uint8)
            self.zrows = np.hstack([self.zrows, pad])

    def add(self, zrow: np.ndarray, brow: np.ndarray) -> bool:
        self._widen(zrow.size)
        w = np.zeros(self.zrows.shape[1], dtype=np.uint8)
        w[: zrow.size] = zrow
        b = brow.astype(np.uint8, copy=True)
        if self.pivot_cols:
            factors = w[self.pivot_cols]
            hit = np.nonzero(factors)[0]
            if hit.size:
                w ^= np.bitwise_xor.reduce(
                    gf.MUL_TABLE[factors[hit, None], self.zrows[hit]], axis=0
                )
                if self.payload_len:
                    b ^= np.bitwise_xor.reduce(
                        gf.MUL_TABLE[factors[hit, None], self.brows[hit]], axis=0
                    )
        nz = np.nonzero(w)[0]
        if nz.size == 0:
            if b.any():
                raise gf.InconsistentSystemError(
                    "received data is internally inconsistent"
                )
            return False
        pivot = int(nz[0])
        scale = gf._INV[w[pivot]]
        w = gf.MUL_TABLE[scale, w]
        b = gf.MUL_TABLE[scale, b]
        col = self.zrows[:, pivot].copy()
        hit = np.nonzero(col)[0]
        if hit.size:
            self.zrows[hit] ^= gf.MUL_TABLE[col[hit, None], w[None, :]]
            if self.payload_len:
                self.brows[hit] ^= gf.MUL_TABLE[col[hit, None], b[None, :]]
        self.zrows = np.vstack([self.zrows, w[None, :]])
        self.brows = np.vstack([self.brows, b[None, :]])
        self.pivot_cols.append(pivot)
        return True

    def solve(self, num_z: int) -> np.ndarray:
        if self.rank != num_z:
            raise gf.UnderdeterminedSystemError(
                "symbolic system is not fully determined"
            )
        out = np.zeros((num_z, self.payload_len), dtype=np.uint8)
        for row, col in enumerate(self.pivot_cols):
            out[col] = self.brows[row]
        return out


class _DecoderBatch:
    __slots__ = (
        "desc",
        "contribs",
        "gen_t",
        "c_rows",
        "rhs_base",
        "rhs_tail",
        "rows",
        "unres",
        "u",
        "fired",
        "drained",
        "queued",
    )

    def __init__(self, desc: BatchDescriptor, batch_size: int, payload_len: int):
        self.desc = desc
        self.contribs = desc.contributor_ids.astype(np.int64) - 1
        self.gen_t = np.ascontiguousarray(desc.generator.T)
        self.c_rows = np.zeros((batch_size, desc.degree), dtype=np.uint8)
        self.rhs_base = np.zeros((batch_size, payload_len), dtype=np.uint8)
        self.rhs_tail = np.zeros((batch_size, 0), dtype=np.uint8)
        self.rows = 0
        self.unres = np.ones(desc.degree, dtype=bool)
        self.u = desc.degree
        self.fired = False
        self.drained = False
        self.queued = False


class IncrementalDecoder:
    """Joint decoder fed one innovative reception at a time.

    attempt() advances peeling as far as possible, marking packets symbolic
    when nothing can peel, and reports whether the file is fully determined.
    State persists between attempts, so feeding more receptions and retrying
    is cheap. unresolved always equals file_packets minus the rank of every
    constraint received so far.
    """

    def __init__(
        self,
        file_packets: int,
        payload_len: int,
        descriptors: Dict[int, BatchDescriptor],
    ):
        self.file_packets = file_packets
        self.payload_len = payload_len
        self.batches: Dict[int, _DecoderBatch] = {}
        for bid, desc in descriptors.items():
            self.batches[bid] = _DecoderBatch(
                desc, desc.generator.shape[1], payload_len
            )
        self.resolved = np.zeros(file_packets, dtype=bool)
        self.resolved_count = 0
        self.base = np.zeros((file_packets, payload_len), dtype=np.uint8)
        self.tails = np.zeros((file_packets, 0), dtype=np.uint8)
        self.tail_width = np.zeros(file_packets, dtype=np.int64)
        self.num_z = 0
        self.zsys = _ZSystem(payload_len)
        self.total_rows = 0
        # how many data-bearing pending batches contain each packet
        self.stall_counts = np.zeros(file_packets, dtype=np.int64)
        # batches within two resolutions of becoming solvable; entries may be
        # stale and are rechecked when an inactivation is picked
        self._near: set = set()
        self._fire_queue: List[int] = []
        self._subst_queue: List[int] = []
        # packet -> [(batch_id, local column), ...]
        self._incidence: Dict[int, List[Tuple[int, int]]] = {}
        for bid, b in self.batches.items():
            for col, pkt in enumerate(b.contribs):
                self._incidence.setdefault(int(pkt), []).append((bid, col))

    # -- feeding ------------------------------------------------------------

    def _grow_tails(self, width: int) -> None:
        if width > self.tails.shape[1]:
            new = max(width, 2 * self.tails.shape[1], 32)
            pad = np.zeros((self.file_packets, new - self.tails.shape[1]), np.uint8)
            self.tails = np.hstack([self.tails, pad])

    def _batch_tail(self, b: _DecoderBatch) -> np.ndarray:
        if self.num_z > b.rhs_tail.shape[1]:
            cap = max(self.num_z, 2 * b.rhs_tail.shape[1], 16)
            pad = np.zeros((b.rhs_base.shape[0], cap - b.rhs_tail.shape[1]), np.uint8)
            b.rhs_tail = np.hstack([b.rhs_tail, pad])
        return b.rhs_tail

    def _residual_of(self, b: _DecoderBatch, c_row: np.ndarray, payload) -> None:
        """Fold a row for an already-finished batch straight into the
        symbolic system."""
        zrow = np.zeros(self.num_z, dtype=np.uint8)
        brow = np.array(payload, dtype=np.uint8, copy=True)
        nz = np.nonzero(c_row)[0]
        if nz.size:
            pkts = b.contribs[nz]
            if self.num_z:
                zrow ^= np.bitwise_xor.reduce(
                    gf.MUL_TABLE[c_row[nz, None], self.tails[pkts, : self.num_z]],
                    axis=0,
                )
            if self.payload_len:
                brow ^= np.bitwise_xor.reduce(
                    gf.MUL_TABLE[c_row[nz, None], self.base[pkts]], axis=0
                )
        self.zsys.add(zrow, brow)

    def add_row(self, batch_id: int, coeff: np.ndarray, payload=None) -> None:
        """Feed one innovative reception (M-wide coefficient vector)."""
        if payload is None:
            payload = np.zeros(self.payload_len, dtype=np.uint8)
        b = self.batches[batch_id]
        c_row = gf.matmul(coeff[None, :], b.gen_t)[0]
        self.total_rows += 1
        if b.fired or b.drained:
            self._residual_of(b, c_row, payload)
            return
        i = b.rows
        b.c_rows[i] = c_row
        b.rows += 1
        if self.payload_len:
            b.rhs_base[i] = payload
        # fold contributors that resolved before this row arrived
        done = np.nonzero(~b.unres & (c_row != 0))[0]
        if done.size:
            pkts = b.contribs[done]
            if self.payload_len:
                b.rhs_base[i] ^= np.bitwise_xor.reduce(
                    gf.MUL_TABLE[c_row[done, None], self.base[pkts]], axis=0
                )
            if self.num_z:
                tail = self._batch_tail(b)
                tail[i, : self.num_z] ^= np.bitwise_xor.reduce(
                    gf.MUL_TABLE[c_row[done, None], self.tails[pkts, : self.num_z]],
                    axis=0,
                )
        if b.rows == 1:
            np.add.at(self.stall_counts, b.contribs[b.unres], 1)
        if b.u == 0:
            self._drain(b)
        elif b.u <= b.rows and not b.queued:
            b.queued = True
            self._fire_queue.append(batch_id)
        elif b.u - b.rows <= 2:
            self._near.add(batch_id)

    def load_state(self, state: BatchState) -> None:
        """Bulk-feed a receiver buffer, the fast path at end of phase 1."""
        b = self.batches[state.batch_id]
        if state.rank == 0:
            return
        if b.rows or self.resolved_count or b.fired or b.drained:
            for i in range(state.rank):
                self.add_row(state.batch_id, state.coeffs[i], state.payloads[i])
            return
        block = gf.matmul(state.received_coeffs, b.gen_t)
        b.c_rows[: state.rank] = block
        if self.payload_len:
            b.rhs_base[: state.rank] = state.received_payloads
        b.rows = state.rank
        self.total_rows += state.rank
        np.add.at(self.stall_counts, b.contribs[b.unres], 1)
        if b.u <= b.rows and not b.queued:
            b.queued = True
            self._fire_queue.append(state.batch_id)
        elif b.u - b.rows <= 2:
            self._near.add(state.batch_id)

    # -- resolution ---------------------------------------------------------

    def _assign(self, pkt: int, base_row, tail_row) -> None:
        if self.payload_len:
            self.base[pkt] = base_row
        w = tail_row.size
        if w:
            self._grow_tails(w)
            self.tails[pkt, :w] = tail_row
        self.tail_width[pkt] = w
        self.resolved[pkt] = True
        self.resolved_count += 1
        self._subst_queue.append(pkt)

    def _inactivate(self, pkt: int) -> None:
        j = self.num_z
        self.num_z += 1
        self._grow_tails(self.num_z)
        self.tails[pkt, :] = 0
        self.tails[pkt, j] = 1
        self.tail_width[pkt] = j + 1
        if self.payload_len:
            self.base[pkt] = 0
        self.resolved[pkt] = True
        self.resolved_count += 1
        self._subst_queue.append(pkt)

    def _drain(self, b: _DecoderBatch) -> None:
        """Everything this batch constrains is symbolic; hand its rows over."""
        b.drained = True
        tail = b.rhs_tail
        for i in range(b.rows):
            zrow = tail[i, : self.num_z] if tail.shape[1] else np.zeros(0, np.uint8)
            self.zsys.add(zrow, b.rhs_base[i])

    def _flush_substitutions(self) -> None:
        """Apply all queued resolutions to the batches that contain them.

        Grouping by batch lets each batch take one blocked update per flush
        instead of one small update per packet, which is what keeps the
        cascade cheap when coverage is wide.
        """
        pending = self._subst_queue
        self._subst_queue = []
        per_batch: Dict[int, List[Tuple[int, int]]] = {}
        for pkt in pending:
            for bid, col in self._incidence.get(pkt, ()):
                b = self.batches[bid]
                if b.fired or b.drained or not b.unres[col]:
                    continue
                b.unres[col] = False
                b.u -= 1
                per_batch.setdefault(bid, []).append((col, pkt))
        for bid, items in per_batch.items():
            b = self.batches[bid]
            if b.rows:
                cols = np.array([c for c, _ in items], dtype=np.int64)
                pkts = np.array([p for _, p in items], dtype=np.int64)
                factors = b.c_rows[: b.rows][:, cols]
                if factors.any():
                    if self.payload_len:
                        b.rhs_base[: b.rows] ^= gf.matmul(factors, self.base[pkts])
                    wmax = int(self.tail_width[pkts].max())
                    if wmax:
                        tail = self._batch_tail(b)
                        tail[: b.rows, :wmax] ^= gf.matmul(
                            factors, self.tails[pkts, :wmax]
                        )
            if b.u == 0:
                if b.rows:
                    self._drain(b)
                else:
                    b.drained = True
            elif b.u <= b.rows and not b.queued:
                b.queued = True
                self._fire_queue.append(bid)
            elif b.rows and b.u - b.rows <= 2:
                self._near.add(bid)

    def _fire(self, bid: int) -> None:
        b = self.batches[bid]
        b.queued = False
        if b.fired or b.drained or b.u == 0 or b.u > b.rows:
            return
        active = np.nonzero(b.unres)[0]
        u = active.size
        upper = b.rows
        tail = b.rhs_tail[:upper, : self.num_z]
        aug = np.concatenate(
            [b.c_rows[:upper][:, active], b.rhs_base[:upper], tail], axis=1
        )
        rref, pivots = gf.row_reduce(aug)
        in_c = sum(1 for p in pivots if p < u)
        if in_c < u:
            return
        lp = self.payload_len
        for row_i in range(u):
            pkt = int(b.contribs[active[pivots[row_i]]])
            self._assign(pkt, rref[row_i, u : u + lp], rref[row_i, u + lp :])
        for row_i in range(u, len(pivots)):
            zrow = rref[row_i, u + lp :]
            brow = rref[row_i, u : u + lp]
            self.zsys.add(zrow, brow)
        b.fired = True
        b.unres[:] = False
        b.u = 0
        b.c_rows = b.rhs_base = b.rhs_tail = np.zeros((0, 0), dtype=np.uint8)

    def _cascade(self) -> None:
        while self._subst_queue or self._fire_queue:
            if self._subst_queue:
                self._flush_substitutions()
            elif self._fire_queue:
                self._fire(self._fire_queue.pop())

    def _pick_inactivation(self) -> Optional[int]:
        # prefer the packet that unblocks the most batches sitting one or two
        # resolutions short of solvable; freeing one tends to chain
        if self._near:
            counts: Dict[int, int] = {}
            stale = []
            for bid in self._near:
                b = self.batches[bid]
                gap = b.u - b.rows
                if b.fired or b.drained or not b.rows or gap < 1 or gap > 2:
                    stale.append(bid)
                    continue
                w = 2 if gap == 1 else 1
                for col in np.nonzero(b.unres)[0]:
                    pkt = int(b.contribs[col])
                    counts[pkt] = counts.get(pkt, 0) + w
            self._near.difference_update(stale)
            if counts:
                best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
                return best[0]
        masked = np.where(self.resolved, -1, self.stall_counts)
        pkt = int(np.argmax(masked))
        if masked[pkt] <= 0:
            return None
        return pkt

    def attempt(self) -> bool:
        """Push decoding as far as current receptions allow."""
        self._cascade()
        while self.resolved_count < self.file_packets:
            pkt = self._pick_inactivation()
            if pkt is None:
                return False
            self._inactivate(pkt)
            self._cascade()
        return self.zsys.rank == self.num_z

    @property
    def unresolved(self) -> int:
        return (self.file_packets - self.resolved_count) + (
            self.num_z - self.zsys.rank
        )

    @property
    def inactivated(self) -> int:
        return self.num_z

    def extract(self) -> np.ndarray:
        """Concrete payloads after a successful attempt."""
        z = self.zsys.solve(self.num_z)
        out = self.base.copy()
        if self.num_z:
            out ^= gf.matmul(self.tails[:, : self.num_z], z)
        return out


def decode(
    states: Dict[int, BatchState],
    descriptors: Dict[int, BatchDescriptor],
    file_packets: int,
) -> DecodeResult:
    """One-shot joint decode of everything received."""
    payload_len = 0
    for st in states.values():
        payload_len = st.payload_len
        break
    dec = IncrementalDecoder(file_packets, payload_len, descriptors)
    for st in states.values():
        dec.load_state(st)
    ok = dec.attempt()
    payloads = dec.extract() if ok else None
    return DecodeResult(
        success=ok,
        payloads=payloads,
        unresolved=dec.unresolved,
        inactivated=dec.inactivated,
    )
