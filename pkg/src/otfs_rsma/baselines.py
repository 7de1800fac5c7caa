"""Multiple-access strategies expressed as stream layouts.

Rate splitting, SDMA and layered SIC (NOMA) all reduce to instances of
:class:`~otfs_rsma.signal.StreamLayout`, so the whole WMMSE/alternating
optimization machinery is reused unchanged across strategies.
"""

from __future__ import annotations

import numpy as np

from .signal import Stream, StreamLayout

STRATEGIES = ("rsma", "sdma", "noma")


def build_layout(
    strategy: str,
    num_users: int,
    mn: int,
    channel_gains=None,
) -> StreamLayout:
    """Build the stream layout of a multiple-access strategy.

    Parameters
    ----------
    strategy : {"rsma", "sdma", "noma"}
    num_users : int
    mn : int
        Delay-Doppler grid size (arrangements default to all-identity).
    channel_gains : sequence of float, optional
        Per-user ordering metric (e.g. Frobenius norm of the estimated
        effective channel).  Required for NOMA: the weakest user's layer is
        decoded by everyone, and each stronger user removes the layers of
        all weaker users before decoding its own.
    """
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if num_users < 1:
        raise ValueError(f"need at least one user, got {num_users}")
    identity = np.ones(mn)
    everyone = tuple(range(num_users))

    if strategy == "sdma":
        streams = [
            Stream("private", (i,), (i,), identity.copy()) for i in range(num_users)
        ]
        return StreamLayout(num_users, streams, "sdma")

    if strategy == "rsma":
        streams = [Stream("common", everyone, everyone, identity.copy(), allocation="split")]
        streams += [
            Stream("private", (i,), (i,), identity.copy()) for i in range(num_users)
        ]
        return StreamLayout(num_users, streams, "rsma")

    # layered SIC: order users weakest first; layer k carries the k-th
    # weakest user's message and is decoded by that user and all stronger ones
    if channel_gains is None:
        raise ValueError("NOMA needs per-user channel gains to fix the decoding order")
    gains = np.asarray(channel_gains, dtype=float)
    if gains.shape != (num_users,):
        raise ValueError(f"expected {num_users} gains, got shape {gains.shape}")
    order = np.argsort(gains, kind="stable")
    streams = []
    for pos, owner in enumerate(order):
        decoders = tuple(sorted(int(u) for u in order[pos:]))
        streams.append(Stream("layered", (int(owner),), decoders, identity.copy()))
    return StreamLayout(num_users, streams, "noma")
