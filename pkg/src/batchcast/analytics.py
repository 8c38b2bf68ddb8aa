"""Closed-form planning for two-phase cooperative broadcasting.

Everything here is deterministic math on channel parameters: how many batches
the source must send, how many peer transmissions phase 2 needs, how much of
phase 2 is wasted on redundant receptions, and what per-batch rank law a
receiver sees at decode time. The simulator and CLI consume these planners;
the test suite checks them against discrete-sum and Monte-Carlo oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.special import ndtri
from scipy.stats import binom


@dataclass(frozen=True)
class NetworkParams:
    """Channel and protocol configuration.

    num_users        size of the receiver group
    loss_common      correlated erasure probability shared by all receivers
                     during source broadcast
    loss_source      independent per-receiver erasure probability on the
                     source links
    loss_peer        erasure probability on the user-to-user links
    batch_size       packets per coded batch
    file_packets     number of source packets in the file
    code_overhead    fraction of extra received packets the outer code needs
    outage_tolerance target probability that the group cannot recover the file
    """

    num_users: int
    loss_common: float
    loss_source: float
    loss_peer: float
    batch_size: int
    file_packets: int
    code_overhead: float = 0.01
    outage_tolerance: float = 1e-8

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("num_users must be at least 1")
        for name in ("loss_common", "loss_source", "loss_peer"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError("%s must lie in [0, 1), got %r" % (name, v))
        if self.loss_peer > self.loss_source:
            raise ValueError("loss_peer must not exceed loss_source")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.file_packets < 1:
            raise ValueError("file_packets must be at least 1")
        if self.code_overhead < 0:
            raise ValueError("code_overhead must be nonnegative")
        if not (0.0 < self.outage_tolerance < 1.0):
            raise ValueError("outage_tolerance must lie in (0, 1)")


@dataclass
class RankDistribution:
    """Probability vector over per-batch ranks 0..batch_size."""

    pr: np.ndarray

    def __post_init__(self):
        self.pr = np.asarray(self.pr, dtype=float)
        if np.any(self.pr < -1e-12):
            raise ValueError("rank probabilities must be nonnegative")
        if abs(float(self.pr.sum()) - 1.0) > 1e-9:
            raise ValueError("rank probabilities must sum to 1")


@dataclass
class PlanResult:
    n_min: int
    n_max: int
    n_opt: int
    t_of_n: Dict[int, int] = field(default_factory=dict)
    total_of_n: Dict[int, int] = field(default_factory=dict)


def _coded_length(params: NetworkParams) -> float:
    return (1.0 + params.code_overhead) * params.file_packets


def _user_erasure(params: NetworkParams) -> float:
    """Probability a given user misses a given source packet."""
    return (
        params.loss_common
        + params.loss_source
        - params.loss_common * params.loss_source
    )


def _peer_gap_prob(params: NetworkParams) -> float:
    """Probability a packet is missed by a user but held by some peer."""
    return (1.0 - params.loss_source ** (params.num_users - 1)) * _user_erasure(params)


def _gauss_upper_tail(x: float) -> float:
    """P(N(0,1) > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _min_order_quantile(num_users: int) -> float:
    """Normal quantile locating the mean of the minimum of num_users iid draws."""
    return float(ndtri(0.625 / (num_users + 0.25)))


def effective_erasure(params: NetworkParams) -> float:
    """Probability that a source packet reaches no user at all."""
    return 1.0 - (1.0 - params.loss_common) * (
        1.0 - params.loss_source ** params.num_users
    )


def min_batches(params: NetworkParams) -> int:
    """Fewest batches the source can send while the group still recovers.

    Normal approximation of the group-level reception count, with the outage
    tolerance entering through the upper-tail quantile (negative here, so the
    correction adds batches).
    """
    p_none = effective_erasure(params)
    coded = _coded_length(params)
    alpha = float(ndtri(params.outage_tolerance))
    numerator = 2.0 * coded - alpha * math.sqrt(4.0 * p_none * coded)
    return math.ceil(numerator / (2.0 * params.batch_size * (1.0 - p_none)))


def max_batches(params: NetworkParams) -> int:
    """Batch count at which every user decodes from phase 1 alone.

    Uses the order-statistics approximation for the mean of the worst user's
    reception count.
    """
    miss = _user_erasure(params)
    coded = _coded_length(params)
    beta = _min_order_quantile(params.num_users)
    b2 = beta * beta
    numerator = (
        2.0 * coded
        + miss * b2
        + math.sqrt(4.0 * miss * b2 * coded + miss * b2 * b2)
    )
    return math.ceil(numerator / (2.0 * params.batch_size * (1.0 - miss)))


def expected_peer_receptions(transmissions: float, params: NetworkParams) -> float:
    """Mean packets a user collects from its peers across phase 2."""
    k = params.num_users
    return (1.0 - params.loss_peer) * (k - 1) * transmissions / k


def delta_distribution(params: NetworkParams) -> np.ndarray:
    """Distribution of per-batch packets a user can still gain from peers.

    Closed form: binomial over the batch size with success probability
    "missed by this user but captured by some peer".
    """
    if params.num_users < 2:
        raise ValueError("delta_distribution requires at least 2 users")
    m = params.batch_size
    return binom.pmf(np.arange(m + 1), m, _peer_gap_prob(params))


def delta_distribution_convolution(params: NetworkParams) -> np.ndarray:
    """Same law as delta_distribution via the explicit two-stage sum.

    Marginalizes the per-user reception count against the conditional law of
    the group-level count; kept as an independently coded cross-check of the
    closed form.
    """
    if params.num_users < 2:
        raise ValueError("requires at least 2 users")
    m = params.batch_size
    own = 1.0 - _user_erasure(params)
    miss = _user_erasure(params)
    peer_hold = 1.0 - params.loss_source ** (params.num_users - 1)
    peer_miss = params.loss_source ** (params.num_users - 1)
    out = np.zeros(m + 1)
    for delta in range(m + 1):
        acc = 0.0
        for i in range(m - delta + 1):
            cond = (
                math.comb(m - i, delta)
                * peer_hold**delta
                * peer_miss ** (m - i - delta)
            )
            acc += cond * math.comb(m, i) * own**i * miss ** (m - i)
        out[delta] = acc
    return out


def redundancy(transmissions: float, batches: int, params: NetworkParams) -> float:
    """Expected phase-2 receptions that arrive after their batch is saturated.

    Normal-approximation mean of the positive part of (per-batch peer
    receptions minus per-batch peer capacity), scaled by the batch count.
    """
    n = batches
    m = params.batch_size
    gap = _peer_gap_prob(params)
    per_batch = expected_peer_receptions(transmissions, params) / n
    mu = per_batch - m * gap
    var = per_batch * (1.0 - 1.0 / n) + m * gap * (1.0 - gap)
    if var <= 0.0:
        return float(n * max(mu, 0.0))
    sd = math.sqrt(var)
    tail = _gauss_upper_tail(-mu / sd)
    return float(
        n * (sd / math.sqrt(2.0 * math.pi)) * math.exp(-(mu * mu) / (2.0 * var))
        + mu * n * tail
    )


def _innovative_margin(transmissions: float, batches: int, params: NetworkParams) -> float:
    """Worst-user innovative-count estimate minus the decode threshold."""
    k = params.num_users
    m = params.batch_size
    own = (1.0 - params.loss_common) * (1.0 - params.loss_source)
    mu = (
        own * batches * m
        + expected_peer_receptions(transmissions, params)
        - redundancy(transmissions, batches, params)
    )
    var = (
        batches * m * own * _user_erasure(params)
        + transmissions * (k - 1) * (1.0 - params.loss_peer) * params.loss_peer / k
    )
    beta = _min_order_quantile(k)
    return mu + beta * math.sqrt(max(var, 0.0)) - _coded_length(params)


def stopping_time(batches: int, params: NetworkParams) -> int:
    """Smallest phase-2 slot count after which every user should decode.

    Bisection on the monotone decode margin over [0, batches*batch_size],
    widening the bracket upward by doubling if needed, then an integer
    refinement so the returned value is minimal.
    """
    n = batches
    lo = 0.0
    hi = float(n * params.batch_size)
    if hi <= 0:
        hi = 1.0
    f_lo = _innovative_margin(lo, n, params)
    f_hi = _innovative_margin(hi, n, params)
    grow = 0
    while f_hi <= 0.0:
        grow += 1
        nxt = _innovative_margin(hi * 2.0, n, params)
        # The margin rises while peer packets still help, then sinks once the
        # worst-user spread outgrows the gain. A shrinking margin that is
        # still negative can never cross zero.
        if grow > 60 or nxt <= f_hi:
            raise ValueError(
                "no phase-2 stopping time exists for %d batches" % n
            )
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = nxt
    while f_hi - f_lo > 1.0:
        mid = 0.5 * (lo + hi)
        f_mid = _innovative_margin(mid, n, params)
        if f_mid > 0.0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
        if hi - lo < 1e-9:
            break
    t = max(0, math.ceil(hi))
    while t > 0 and _innovative_margin(t - 1, n, params) >= 0.0:
        t -= 1
    while _innovative_margin(t, n, params) < 0.0:
        t += 1
    return t


def rank_distribution(
    batches: int,
    transmissions: float,
    params: NetworkParams,
    approximate: bool = False,
) -> np.ndarray:
    """Per-batch rank law a user sees at decode time, over ranks 0..batch_size.

    The exact form composes three ingredients: the user's own phase-1
    receptions, the group-level captures conditioned on them, and the phase-2
    receptions for a typical batch. The approximate form collapses to a
    binomial on the group capture probability, valid when the source sends
    the minimum batch count so decoding exhausts the group's packets.
    """
    m = params.batch_size
    ranks = np.arange(m + 1)
    if approximate:
        p_none = effective_erasure(params)
        return binom.pmf(ranks, m, 1.0 - p_none)

    n = batches
    own = (1.0 - params.loss_common) * (1.0 - params.loss_source)
    peer_hold = 1.0 - params.loss_source ** (params.num_users - 1)
    own_pmf = binom.pmf(ranks, m, own)
    peer_trials = int(round(expected_peer_receptions(transmissions, params)))

    # cond[i, j] = P(group holds j | user holds i), a shifted binomial
    cond = np.zeros((m + 1, m + 1))
    for i in range(m + 1):
        cond[i, i:] = binom.pmf(np.arange(m - i + 1), m - i, peer_hold)

    phase2_pmf = binom.pmf(np.arange(m + 1), peer_trials, 1.0 / n)
    # survival[x] = P(phase-2 receptions >= x)
    survival = binom.sf(np.arange(m + 1) - 1, peer_trials, 1.0 / n)

    out = np.zeros(m + 1)
    for r in range(m + 1):
        total = 0.0
        for i in range(r + 1):
            group_above = float(cond[i, r + 1 :].sum())
            total += own_pmf[i] * group_above * phase2_pmf[r - i]
            total += own_pmf[i] * cond[i, r] * survival[r - i]
        out[r] = total
    return out


def optimize_batches(params: NetworkParams) -> PlanResult:
    """Scan the feasible batch-count range for the lowest total transmissions.

    Evaluates the stopping time for every integer in [min_batches,
    max_batches]; no convexity is assumed, the full curve is retained. Ties
    resolve to the smallest batch count.
    """
    n_lo = min_batches(params)
    n_hi = max_batches(params)
    m = params.batch_size
    t_of_n: Dict[int, int] = {}
    total_of_n: Dict[int, int] = {}
    best_n = n_hi
    best_total = None
    for n in range(n_lo, n_hi + 1):
        try:
            t = stopping_time(n, params)
        except ValueError:
            # phase 2 cannot finish at this batch count; skip it
            continue
        t_of_n[n] = t
        total = n * m + t
        total_of_n[n] = total
        if best_total is None or total < best_total:
            best_total = total
            best_n = n
    return PlanResult(
        n_min=n_lo, n_max=n_hi, n_opt=best_n, t_of_n=t_of_n, total_of_n=total_of_n
    )


def plan_table_csv(result: PlanResult) -> str:
    """Plan curve as CSV text with a header row: n, T, total."""
    lines = ["n,T,total"]
    for n in sorted(result.t_of_n):
        lines.append("%d,%d,%d" % (n, result.t_of_n[n], result.total_of_n[n]))
    return "\n".join(lines) + "\n"


def tv_distance(p, q) -> float:
    """Total variation distance between two probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("shape mismatch")
    return 0.5 * float(np.abs(p - q).sum())
