"""batchcast: two-phase cooperative broadcasting with batch-coded repair.

Library layout:
    gf         field arithmetic and dense linear algebra over GF(2^8)
    codec      batch encoder, peer recoder, joint BP + inactivation decoder
    sched      usefulness matrices and the distributed transmit queue
    analytics  closed-form planning (batch counts, stopping time, rank law)
    sim        Monte-Carlo engine for the full two-phase protocol
    cli        experiment front end emitting CSV reports
"""

__version__ = "0.1.0"
