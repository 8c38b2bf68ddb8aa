"""Monte-Carlo engine for the two-phase cooperative broadcast protocol.

Phase 1 sends every batch's source packets through a channel with one
correlated loss draw shared by the group plus an independent per-user draw.
Phase 2 lets users repair each other: each slot, one user transmits a
recoded packet from the batch its usefulness queue names next, every other
user receives it independently, and decoding runs incrementally until the
whole group has the file.

Randomness is split into tagged substreams of the session seed (file bytes,
phase-1 channel, phase-2 channel, recode mixing, access policy), so a report
is bit-identical given the same seed and configuration, and the coded
session (descriptors, payloads) is shared across channel realizations.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import codec
from .analytics import NetworkParams, optimize_batches
from .sched import ReceptionProfile, build_matrix, build_queue, exhaustion_order

_FILE_TAG = 0
_PHASE1_TAG = 1
_PHASE2_TAG = 2
_MIX_TAG = 3
_ACCESS_TAG = 4
_SINGLE_TAG = 5


class SimulationStallError(RuntimeError):
    """Raised when phase 2 exceeds its slot cap without finishing."""


@dataclass
class ChannelModel:
    """Erasure probabilities for both phases plus the session seed."""

    loss_common: float
    loss_source: float
    loss_peer: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.loss_common <= 1.0):
            raise ValueError("loss_common must lie in [0, 1]")
        for name in ("loss_source", "loss_peer"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError("%s must lie in [0, 1), got %r" % (name, v))

    @classmethod
    def from_params(cls, params: NetworkParams, seed: int = 0) -> "ChannelModel":
        return cls(
            loss_common=params.loss_common,
            loss_source=params.loss_source,
            loss_peer=params.loss_peer,
            seed=seed,
        )


def _substream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag)))


@dataclass
class CodingSession:
    """Source-side coding context shared by every user and channel run."""

    file_packets: int
    batch_size: int
    num_batches: int
    payload_len: int
    seed: int
    dist: codec.DegreeDistribution
    file: np.ndarray
    descriptors: Dict[int, codec.BatchDescriptor] = field(default_factory=dict)

    def batch_packets(self, batch_id: int) -> List[codec.Packet]:
        """Deterministically regenerate one batch; records its descriptor."""
        desc, packets = codec.encode_batch(
            self.file,
            self.dist,
            batch_id,
            codec.descriptor_rng(self.seed, batch_id),
            self.batch_size,
        )
        self.descriptors[batch_id] = desc
        return packets


def new_session(
    params: NetworkParams,
    seed: int,
    num_batches: int,
    payload_len: int = 0,
    expected_rank: Optional[float] = None,
    dist: Optional[codec.DegreeDistribution] = None,
) -> CodingSession:
    if num_batches < 0:
        raise ValueError("num_batches must be nonnegative")
    if dist is None:
        if expected_rank is None and num_batches > 0:
            expected_rank = 1.01 * params.file_packets / num_batches
        dist = codec.design_distribution(
            params.file_packets,
            max(num_batches, 1),
            params.batch_size,
            expected_rank=expected_rank,
        )
    file = _substream(seed, _FILE_TAG).integers(
        0, 256, (params.file_packets, payload_len), dtype=np.uint8
    )
    return CodingSession(
        file_packets=params.file_packets,
        batch_size=params.batch_size,
        num_batches=num_batches,
        payload_len=payload_len,
        seed=seed,
        dist=dist,
        file=file,
    )


@dataclass
class UserState:
    """Everything one receiver accumulates across both phases."""

    user_id: int
    batches: Dict[int, codec.BatchState] = field(default_factory=dict)
    profile: Optional[ReceptionProfile] = None
    queue: Optional[np.ndarray] = None
    tail: Optional[np.ndarray] = None
    queue_pos: int = 0
    tail_pos: int = 0
    decoder: Optional[codec.IncrementalDecoder] = None
    decoded: bool = False
    decode_slot: int = -1
    receptions: int = 0
    innovative: int = 0
    redundant: int = 0
    innovative_at_decode: int = -1
    rank_hist: Optional[np.ndarray] = None

    def batch_ranks(self, num_batches: int) -> np.ndarray:
        return np.array(
            [self.batches[bid].rank for bid in range(1, num_batches + 1)],
            dtype=np.int64,
        )


@dataclass
class SimReport:
    """Counters and distributions from one full protocol run."""

    seed: int
    num_users: int
    num_batches: int
    phase1_tx: int
    phase2_tx: int
    total_tx: int
    decode_slots: List[int]
    innovative_at_decode: List[int]
    innovative: List[int]
    redundant: List[int]
    receptions: List[int]
    rank_distribution: np.ndarray
    trace: Optional[List[Tuple]] = None

    @property
    def redundant_total(self) -> int:
        return int(sum(self.redundant))


def make_users(num_users: int, session: CodingSession) -> List[UserState]:
    users = []
    for uid in range(num_users):
        u = UserState(user_id=uid)
        for bid in range(1, session.num_batches + 1):
            u.batches[bid] = codec.BatchState(
                bid, session.batch_size, session.payload_len
            )
        users.append(u)
    return users


def broadcast_source(
    packet: codec.Packet,
    users: List[UserState],
    channel: ChannelModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """One source transmission: shared loss draw, then per-user draws."""
    k = len(users)
    if rng.random() < channel.loss_common:
        return np.zeros(k, dtype=bool)
    return rng.random(k) >= channel.loss_source


def run_phase1(
    session: CodingSession,
    users: List[UserState],
    channel: ChannelModel,
    rng: np.random.Generator,
    group_distinct: Optional[np.ndarray] = None,
) -> int:
    """Broadcast every batch once; returns the transmission count n*M."""
    transmissions = 0
    for bid in range(1, session.num_batches + 1):
        packets = session.batch_packets(bid)
        for p in packets:
            transmissions += 1
            flags = broadcast_source(p, users, channel, rng)
            for u, delivered in zip(users, flags):
                if not delivered:
                    continue
                u.receptions += 1
                if u.batches[bid].absorb(p):
                    u.innovative += 1
                else:
                    u.redundant += 1
            if group_distinct is not None and flags.any():
                group_distinct[bid - 1] += 1
    for u in users:
        u.profile = ReceptionProfile(counts=u.batch_ranks(session.num_batches))
    return transmissions


def _check_group_bound(
    u: UserState, batch_id: int, group_distinct: np.ndarray
) -> None:
    rank = u.batches[batch_id].rank
    bound = int(group_distinct[batch_id - 1])
    if rank > bound:
        raise RuntimeError(
            "user %d holds rank %d for batch %d but the group only ever "
            "received %d distinct packets" % (u.user_id, rank, batch_id, bound)
        )


def _mark_decoded(u: UserState, slot: int) -> None:
    u.decoded = True
    u.decode_slot = slot
    u.innovative_at_decode = u.innovative


def prepare_phase2(
    session: CodingSession,
    users: List[UserState],
    params: NetworkParams,
    observe: Optional[List[int]] = None,
) -> None:
    """Queues for every sender, decoders for every observed user."""
    watch = set(range(len(users))) if observe is None else set(observe)
    for u in users:
        matrix = build_matrix(u.profile, params)
        u.queue = build_queue(matrix).v
        u.tail = exhaustion_order(matrix)
        if u.user_id in watch:
            u.decoder = codec.IncrementalDecoder(
                session.file_packets, session.payload_len, session.descriptors
            )
            for st in u.batches.values():
                u.decoder.load_state(st)
            if u.innovative >= session.file_packets and u.decoder.attempt():
                _mark_decoded(u, 0)


def _next_send(u: UserState) -> Optional[int]:
    """Next batch this user can actually recode from, or None."""
    queue = u.queue
    while u.queue_pos < queue.size:
        bid = int(queue[u.queue_pos])
        u.queue_pos += 1
        if u.batches[bid].rank:
            return bid
    tail = u.tail
    for _ in range(tail.size):
        bid = int(tail[u.tail_pos % tail.size])
        u.tail_pos += 1
        if u.batches[bid].rank:
            return bid
    return None


def run_phase2(
    session: CodingSession,
    users: List[UserState],
    channel: ChannelModel,
    rng: np.random.Generator,
    mix_rng: np.random.Generator,
    group_distinct: np.ndarray,
    access: str = "round_robin",
    access_rng: Optional[np.random.Generator] = None,
    cap: Optional[int] = None,
    trace: Optional[List[Tuple]] = None,
    until_tx: Optional[int] = None,
) -> int:
    """Cooperative repair until every observed user decodes.

    Returns the number of peer transmissions. Slots where the scheduled
    sender has an empty buffer pass without a transmission. When until_tx
    is given the phase instead runs for exactly that transmission budget,
    which evaluates the repair process at a planned stopping point.
    """
    k = len(users)
    if cap is None:
        cap = 10 * session.num_batches * session.batch_size
        if until_tx is not None:
            cap = max(cap, 2 * until_tx)
    if access == "uniform" and access_rng is None:
        raise ValueError("uniform access needs an access_rng")
    if any(u.queue is None for u in users):
        raise ValueError("phase 2 requires prepared queues; run phase 1 first")
    watched = [u for u in users if u.decoder is not None]
    pending = sum(1 for u in watched if not u.decoded)
    transmissions = 0
    slot = 0
    while pending or (until_tx is not None and transmissions < until_tx):
        if slot >= cap:
            stuck = [
                (u.user_id, u.innovative, u.decoder.unresolved)
                for u in watched
                if not u.decoded
            ]
            raise SimulationStallError(
                "phase 2 passed %d slots with users (id, innovative, "
                "unresolved) still pending: %s" % (cap, stuck)
            )
        if access == "round_robin":
            sender = users[slot % k]
        else:
            sender = users[int(access_rng.integers(k))]
        slot += 1
        bid = _next_send(sender)
        if bid is None:
            continue
        transmissions += 1
        pkt = codec.recode(sender.batches[bid], mix_rng)
        delivered = rng.random(k) >= channel.loss_peer
        delivered[sender.user_id] = False
        for u in users:
            if not delivered[u.user_id]:
                continue
            u.receptions += 1
            if u.batches[bid].absorb(pkt):
                u.innovative += 1
                _check_group_bound(u, bid, group_distinct)
                if u.decoder is not None and not u.decoded:
                    u.decoder.add_row(bid, pkt.coeff, pkt.payload)
                    if u.innovative >= session.file_packets and u.decoder.attempt():
                        _mark_decoded(u, transmissions)
                        pending -= 1
            else:
                u.redundant += 1
        if trace is not None:
            trace.append(
                (slot, sender.user_id, bid)
                + tuple(int(d) for d in delivered)
                + tuple(u.innovative for u in users)
            )
    # The batch-rank histogram is read off once repair stops, i.e. at the
    # moment the whole observed group can recover the file, and every user
    # contributes regardless of whether it carried a decoder.
    for u in users:
        ranks = u.batch_ranks(session.num_batches)
        u.rank_hist = np.bincount(
            ranks, minlength=session.batch_size + 1
        ) / float(max(session.num_batches, 1))
    return transmissions


def run_session(
    params: NetworkParams,
    seed: int,
    num_batches: Optional[int] = None,
    payload_len: int = 0,
    expected_rank: Optional[float] = None,
    access: str = "round_robin",
    observe: Optional[List[int]] = None,
    cap: Optional[int] = None,
    with_trace: bool = False,
    dist: Optional[codec.DegreeDistribution] = None,
    phase2_budget: Optional[int] = None,
) -> SimReport:
    """Full protocol: plan-sized phase 1, cooperative phase 2, report.

    observe selects which users run decoders (default: all). Limiting
    observation to one user keeps large rank-statistics batteries cheap;
    the remaining users still receive and transmit. phase2_budget runs
    the repair phase for a fixed transmission count instead of stopping
    at group decode (pass observe=[] to skip decoders entirely then).
    """
    if num_batches is None:
        num_batches = optimize_batches(params).n_opt
    session = new_session(
        params, seed, num_batches, payload_len, expected_rank=expected_rank, dist=dist
    )
    users = make_users(params.num_users, session)
    group_distinct = np.zeros(num_batches, dtype=np.int64)
    phase1_rng = _substream(seed, _PHASE1_TAG)
    channel = ChannelModel.from_params(params, seed)
    phase1_tx = run_phase1(session, users, channel, phase1_rng, group_distinct)
    for u in users:
        for bid in range(1, num_batches + 1):
            _check_group_bound(u, bid, group_distinct)
    prepare_phase2(session, users, params, observe)
    trace: Optional[List[Tuple]] = [] if with_trace else None
    phase2_tx = run_phase2(
        session,
        users,
        channel,
        _substream(seed, _PHASE2_TAG),
        _substream(seed, _MIX_TAG),
        group_distinct,
        access=access,
        access_rng=_substream(seed, _ACCESS_TAG),
        cap=cap,
        trace=trace,
        until_tx=phase2_budget,
    )
    observed = [u for u in users if u.rank_hist is not None]
    if observed:
        rank_distribution = np.mean([u.rank_hist for u in observed], axis=0)
    else:
        rank_distribution = np.zeros(params.batch_size + 1)
    return SimReport(
        seed=seed,
        num_users=params.num_users,
        num_batches=num_batches,
        phase1_tx=phase1_tx,
        phase2_tx=phase2_tx,
        total_tx=phase1_tx + phase2_tx,
        decode_slots=[u.decode_slot for u in users],
        innovative_at_decode=[u.innovative_at_decode for u in users],
        innovative=[u.innovative for u in users],
        redundant=[u.redundant for u in users],
        receptions=[u.receptions for u in users],
        rank_distribution=rank_distribution,
        trace=trace,
    )


def run_single_phase(
    params: NetworkParams, seed: int, cap: Optional[int] = None
) -> int:
    """Source-only baseline with an ideal rateless code.

    The source transmits until every user has collected the coded length
    (file plus outer-code margin); returns the transmission count.
    """
    needed = int(np.ceil((1.0 + params.code_overhead) * params.file_packets))
    k = params.num_users
    rate = (1.0 - params.loss_common) * (1.0 - params.loss_source)
    if cap is None:
        cap = int(50 * needed / max(rate, 1e-6))
    rng = _substream(seed, _SINGLE_TAG)
    counts = np.zeros(k, dtype=np.int64)
    sent = 0
    block = 4096
    while counts.min() < needed:
        common = rng.random(block) >= params.loss_common
        per_user = rng.random((block, k)) >= params.loss_source
        hits = per_user & common[:, None]
        cum = np.cumsum(hits, axis=0) + counts[None, :]
        done_at = np.nonzero(cum.min(axis=1) >= needed)[0]
        if done_at.size:
            total = sent + int(done_at[0]) + 1
            if total > cap:
                break
            return total
        counts = cum[-1]
        sent += block
        if sent >= cap:
            break
    raise SimulationStallError(
        "single-phase baseline passed %d transmissions" % cap
    )


def run_robustness(
    design_params: NetworkParams,
    actual_users: int,
    seed: int,
    payload_len: int = 0,
    observe: Optional[List[int]] = None,
    cap: Optional[int] = None,
) -> SimReport:
    """Plan for the design group size, then simulate a larger group.

    Batch count, degree distribution, and queue policy all come from the
    design-time parameters; only the simulated user count changes.
    """
    if actual_users < design_params.num_users:
        raise ValueError("actual_users must be at least the design size")
    plan = optimize_batches(design_params)
    actual = NetworkParams(
        num_users=actual_users,
        loss_common=design_params.loss_common,
        loss_source=design_params.loss_source,
        loss_peer=design_params.loss_peer,
        batch_size=design_params.batch_size,
        file_packets=design_params.file_packets,
        code_overhead=design_params.code_overhead,
        outage_tolerance=design_params.outage_tolerance,
    )
    expected = 1.01 * design_params.file_packets / plan.n_opt
    return run_session(
        actual,
        seed,
        num_batches=plan.n_opt,
        payload_len=payload_len,
        expected_rank=expected,
        observe=observe,
        cap=cap,
    )


def trace_to_csv(report: SimReport) -> str:
    """Per-slot trace as CSV text; empty string when tracing was off."""
    if report.trace is None:
        return ""
    k = report.num_users
    head = ["slot", "sender", "batch_id"]
    head += ["delivered_u%d" % u for u in range(k)]
    head += ["innovative_u%d" % u for u in range(k)]
    lines = [",".join(head)]
    for row in report.trace:
        lines.append(",".join(str(x) for x in row))
    return "\n".join(lines) + "\n"
