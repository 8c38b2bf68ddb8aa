"""End-to-end library drive: plan, broadcast, repair, decode, byte-compare.

Exercises every module on one realistic session. Exits nonzero on any
shortfall so it can gate a commit.

Usage: python3 tools/e2e_drive.py [seed]
"""

import sys

import numpy as np

from batchcast import analytics, codec, sched


def main() -> int:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 424242
    params = analytics.NetworkParams(
        num_users=3,
        loss_common=0.05,
        loss_source=0.5,
        loss_peer=0.1,
        batch_size=16,
        file_packets=1600,
    )
    plan = analytics.optimize_batches(params)
    n = plan.n_opt
    print(
        "plan: n_l=%d n_u=%d n*=%d total=%d"
        % (plan.n_min, plan.n_max, plan.n_opt, plan.total_of_n[plan.n_opt])
    )

    payload_len = 64
    rng = np.random.default_rng(seed)
    file = rng.integers(0, 256, (params.file_packets, payload_len), dtype=np.uint8)
    rbar = 1.01 * params.file_packets / n
    dist = codec.design_distribution(
        params.file_packets, n, params.batch_size, expected_rank=rbar
    )

    # phase 1: one-hot broadcast through common + per-user source loss
    descs = {}
    user_states = [dict() for _ in range(params.num_users)]
    for bid in range(1, n + 1):
        desc, pkts = codec.encode_batch(
            file, dist, bid, codec.descriptor_rng(seed, bid), params.batch_size
        )
        descs[bid] = desc
        for u in range(params.num_users):
            user_states[u][bid] = codec.BatchState(bid, params.batch_size, payload_len)
        for p in pkts:
            if rng.random() < params.loss_common:
                continue
            for u in range(params.num_users):
                if rng.random() >= params.loss_source:
                    user_states[u][bid].absorb(p)

    # phase 2: usefulness-ordered round-robin repair with recoded packets
    decoders = []
    done = [False] * params.num_users
    for u in range(params.num_users):
        dec = codec.IncrementalDecoder(params.file_packets, payload_len, descs)
        for st in user_states[u].values():
            dec.load_state(st)
        decoders.append(dec)
    queues, tails = [], []
    cursor = [0] * params.num_users
    tail_cursor = [0] * params.num_users
    for u in range(params.num_users):
        counts = np.array([user_states[u][bid].rank for bid in range(1, n + 1)])
        matrix = sched.build_matrix(sched.ReceptionProfile(counts=counts), params)
        queues.append(sched.build_queue(matrix).v)
        tails.append(sched.exhaustion_order(matrix))

    slots = 0
    while not all(done) and slots < 60000:
        sender = slots % params.num_users
        slots += 1
        if cursor[sender] < len(queues[sender]):
            bid = int(queues[sender][cursor[sender]])
            cursor[sender] += 1
        else:
            tail = tails[sender]
            bid = int(tail[tail_cursor[sender] % len(tail)])
            tail_cursor[sender] += 1
        src = user_states[sender][bid]
        if src.rank == 0:
            continue
        pkt = codec.recode(src, rng)
        for u in range(params.num_users):
            if u == sender or done[u]:
                continue
            if rng.random() < params.loss_peer:
                continue
            if user_states[u][bid].absorb(pkt):
                decoders[u].add_row(bid, pkt.coeff, pkt.payload)
                total_rank = sum(st.rank for st in user_states[u].values())
                if total_rank >= params.file_packets and decoders[u].attempt():
                    done[u] = True

    bad = 0
    for u in range(params.num_users):
        if not done[u]:
            print("user %d still short" % u)
            bad += 1
        elif not np.array_equal(decoders[u].extract(), file):
            print("user %d bytes differ" % u)
            bad += 1
    if bad:
        return 1
    print(
        "phase 2 complete in %d slots; all %d users byte-exact"
        % (slots, params.num_users)
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
