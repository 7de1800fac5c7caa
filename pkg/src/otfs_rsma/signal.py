"""Stream structure, effective precoders, covariances and achievable rates.

A :class:`StreamLayout` lists the transmitted streams in decoding order and
records, per stream, who owns it, who decodes it, and its binary diagonal
delay-Doppler arrangement.  Rate-splitting, SDMA and layered SIC schemes are
all instances of the same structure, so every function below is written
against the layout rather than a particular multiple-access scheme.

Rates are computed per stream and user as log2 det(T)/det(K) through
Cholesky factorizations; the interference-plus-noise matrix K is never
inverted explicitly.  Unnormalized rates are bits per frame; the public
reports divide by MN (bits per delay-Doppler symbol).  That normalization
boundary lives here and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .transforms import GridConfig, dd_to_td

LN2 = float(np.log(2.0))

_POWER_TOL = 1e-9


# ---------------------------------------------------------------------------
# Streams and layouts
# ---------------------------------------------------------------------------

@dataclass
class Stream:
    """One transmitted stream.

    kind          "common", "private" or "layered"
    owners        users whose message the stream carries
    decoding_set  users that must decode the stream (SIC order is the stream
                  order in the layout)
    psi           (MN,) binary diagonal arrangement over the DD grid
    allocation    "split": the granted rate is shared across users;
                  "owner": the granted rate goes wholly to the owner
    """

    kind: str
    owners: tuple[int, ...]
    decoding_set: tuple[int, ...]
    psi: np.ndarray
    allocation: str = "owner"

    @property
    def is_shared(self) -> bool:
        return len(self.decoding_set) > 1


@dataclass
class StreamLayout:
    """Ordered stream list (decoding order) for a set of users."""

    num_users: int
    streams: list[Stream]
    strategy: str = "custom"

    @property
    def num_streams(self) -> int:
        return len(self.streams)

    def decoded_streams(self, user: int) -> list[int]:
        """Indices of the streams user must decode, in decoding order."""
        return [j for j, s in enumerate(self.streams) if user in s.decoding_set]

    def interferers(self, user: int, stream: int) -> list[int]:
        """Streams still present when ``user`` decodes ``stream``.

        Streams the user decoded earlier in the layout order have been
        removed; everything else except the decoded stream interferes.
        """
        if user not in self.streams[stream].decoding_set:
            raise ValueError(f"user {user} does not decode stream {stream}")
        removed = {
            j
            for j in range(stream)
            if user in self.streams[j].decoding_set
        }
        return [j for j in range(self.num_streams) if j != stream and j not in removed]

    def decode_pairs(self) -> list[tuple[int, int]]:
        """All (user, stream) pairs with the user in the stream's decoding set."""
        return [
            (i, j)
            for j, s in enumerate(self.streams)
            for i in s.decoding_set
        ]

    def shared_streams(self) -> list[int]:
        return [j for j, s in enumerate(self.streams) if s.is_shared]

    def single_streams(self) -> list[int]:
        return [j for j, s in enumerate(self.streams) if not s.is_shared]

    def common_stream(self) -> int | None:
        for j, s in enumerate(self.streams):
            if s.kind == "common":
                return j
        return None

    def private_stream_of(self, user: int) -> int | None:
        for j, s in enumerate(self.streams):
            if s.kind == "private" and s.owners == (user,):
                return j
        return None

    def with_psi(self, psi_list: list[np.ndarray]) -> "StreamLayout":
        if len(psi_list) != self.num_streams:
            raise ValueError("one arrangement per stream required")
        streams = [replace(s, psi=np.asarray(p, dtype=float)) for s, p in zip(self.streams, psi_list)]
        return StreamLayout(self.num_users, streams, self.strategy)


@dataclass
class PrecoderSet:
    """Spatial precoders, one row per stream, plus the transmit power budget."""

    p_bf: np.ndarray  # (num_streams, n_t) complex
    power_budget: float

    def __post_init__(self) -> None:
        self.p_bf = np.atleast_2d(np.asarray(self.p_bf, dtype=complex))
        used = self.power_used
        if used > self.power_budget + _POWER_TOL:
            raise ValueError(f"precoder power {used:.6g} exceeds budget {self.power_budget:.6g}")

    @property
    def power_used(self) -> float:
        return float(np.sum(np.abs(self.p_bf) ** 2))

    @property
    def num_streams(self) -> int:
        return self.p_bf.shape[0]


# ---------------------------------------------------------------------------
# Effective (time-domain) precoders
# ---------------------------------------------------------------------------

def effective_arrangement(psi: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Time-domain image of a binary diagonal arrangement, (MN, MN)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (grid.mn,):
        raise ValueError(f"expected ({grid.mn},) diagonal, got shape {psi.shape}")
    return dd_to_td(np.diag(psi), grid)


def effective_precoder(p: np.ndarray, psi: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Expand a spatial precoder to the (n_t*MN, MN) effective TD precoder."""
    p = np.asarray(p, dtype=complex).reshape(-1, 1)
    return np.kron(p, effective_arrangement(psi, grid))


def effective_precoders(pset: PrecoderSet, layout: StreamLayout, grid: GridConfig) -> list[np.ndarray]:
    if pset.num_streams != layout.num_streams:
        raise ValueError(
            f"{pset.num_streams} precoders for {layout.num_streams} streams"
        )
    return [
        effective_precoder(pset.p_bf[j], s.psi, grid)
        for j, s in enumerate(layout.streams)
    ]


# ---------------------------------------------------------------------------
# Covariances and rates
# ---------------------------------------------------------------------------

def _ct(x: np.ndarray) -> np.ndarray:
    return x.conj().swapaxes(-1, -2)


def _logdet_pd(a: np.ndarray) -> np.ndarray:
    """log-determinant (natural) of Hermitian PD matrices via Cholesky; batched."""
    chol = np.linalg.cholesky(a)
    diag = np.diagonal(chol, axis1=-2, axis2=-1).real
    return 2.0 * np.sum(np.log(diag), axis=-1)


def stream_gains(heff: np.ndarray, ptilde: list[np.ndarray]) -> list[np.ndarray]:
    """Per-stream received-signal maps heff @ ptilde_j; heff may be batched."""
    return [np.asarray(heff) @ pt for pt in ptilde]


def interference_covariance(
    gains: list[np.ndarray],
    interferer_idx: list[int],
    mn: int,
    noise_var: float,
) -> np.ndarray:
    shape = gains[0].shape[:-2] + (mn, mn)
    k = np.zeros(shape, dtype=complex)
    for j in interferer_idx:
        k = k + gains[j] @ _ct(gains[j])
    return k + noise_var * np.eye(mn)


def received_covariances(
    heff: np.ndarray,
    pset: PrecoderSet,
    layout: StreamLayout,
    user: int,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """(T, K) covariance pairs for every stream the user decodes.

    T is the full received covariance seen while decoding the stream and
    K = T - S is the interference-plus-noise part, with already-removed
    streams excluded according to the layout's SIC order.
    """
    gains = stream_gains(heff, effective_precoders(pset, layout, grid))
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for j in layout.decoded_streams(user):
        k = interference_covariance(gains, layout.interferers(user, j), grid.mn, noise_var)
        t = k + gains[j] @ _ct(gains[j])
        out[j] = (t, k)
    return out


def _stream_rates_for_user(
    heff: np.ndarray,
    pset: PrecoderSet,
    layout: StreamLayout,
    user: int,
    grid: GridConfig,
    noise_var: float,
) -> dict[int, np.ndarray]:
    """Unnormalized (bits/frame) rates per decoded stream; batched over heff."""
    if not np.all(np.isfinite(heff)):
        raise ValueError("channel matrix contains non-finite entries")
    rates: dict[int, np.ndarray] = {}
    for j, (t, k) in received_covariances(heff, pset, layout, user, grid, noise_var).items():
        rates[j] = (_logdet_pd(t) - _logdet_pd(k)) / LN2
    return rates


def instantaneous_rate_matrix(
    heff_by_user: list[np.ndarray],
    pset: PrecoderSet,
    layout: StreamLayout,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> np.ndarray:
    """(num_streams, num_users) unnormalized rates; NaN where the user does
    not decode the stream."""
    out = np.full((layout.num_streams, layout.num_users), np.nan)
    for i in range(layout.num_users):
        for j, r in _stream_rates_for_user(heff_by_user[i], pset, layout, i, grid, noise_var).items():
            out[j, i] = float(r)
    return out


def instantaneous_rates(
    heff: np.ndarray,
    pset: PrecoderSet,
    layout: StreamLayout,
    user: int,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> tuple[float | None, float]:
    """Normalized (bits/symbol) common and private rates of one user.

    The common entry is None for layouts without a common stream.
    """
    rates = _stream_rates_for_user(heff, pset, layout, user, grid, noise_var)
    jc = layout.common_stream()
    jp = layout.private_stream_of(user)
    if jp is None:
        raise ValueError(f"user {user} owns no private stream in this layout")
    r_c = float(rates[jc]) / grid.mn if jc is not None else None
    return r_c, float(rates[jp]) / grid.mn


def sample_average_rate_matrix(
    heff_stacks: list[np.ndarray],
    pset: PrecoderSet,
    layout: StreamLayout,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> np.ndarray:
    """Sample-averaged unnormalized rates, (num_streams, num_users).

    heff_stacks[i] is user i's (L, MN, n_t*MN) stack of conditional channel
    realizations; entries are arithmetic means over the L samples and NaN
    where the user does not decode the stream.
    """
    out = np.full((layout.num_streams, layout.num_users), np.nan)
    for i in range(layout.num_users):
        stack = np.asarray(heff_stacks[i])
        if stack.ndim == 2:
            stack = stack[None]
        if stack.shape[0] < 1:
            raise ValueError("empty sample stack")
        for j, r in _stream_rates_for_user(stack, pset, layout, i, grid, noise_var).items():
            out[j, i] = float(np.mean(r))
    return out


# ---------------------------------------------------------------------------
# Common-rate sharing and reports
# ---------------------------------------------------------------------------

def split_common_rate(common_rates: np.ndarray, mu: np.ndarray | None = None) -> np.ndarray:
    """Per-user shares of the common rate.

    With optimizer multipliers ``mu`` the share vector is -mu (validated
    against the min-rate budget).  The fallback policy grants the entire
    min-rate to the first user, which maximizes the sum rate like any other
    feasible split.
    """
    rates = np.asarray(common_rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("common rates must be nonnegative")
    budget = float(np.min(rates))
    if mu is None:
        c = np.zeros_like(rates)
        c[0] = budget
        return c
    c = -np.asarray(mu, dtype=float)
    if np.any(c < -1e-12):
        raise ValueError("multipliers must be nonpositive")
    c = np.clip(c, 0.0, None)
    if c.sum() > budget + 1e-9:
        raise ValueError(
            f"common split {c.sum():.6g} exceeds the min common rate {budget:.6g}"
        )
    return c


@dataclass
class RateReport:
    """Per-user rate bookkeeping in bits per DD symbol.

    common_rates holds each user's achievable common-stream rate (zeros when
    the layout has no shared split stream); common_split is the per-user
    share of the delivered common rate.  For layered layouts the granted
    min-rate of each layer is credited to its owner's private entry.
    """

    common_rates: np.ndarray
    private_rates: np.ndarray
    common_split: np.ndarray
    totals: np.ndarray
    sum_rate: float


def saf_sum_rate(avg_matrix: np.ndarray, layout: StreamLayout) -> float:
    """Sum rate from an averaged rate matrix (same units as the matrix).

    Shared streams contribute the minimum over their decoding set; single
    streams contribute their owner's rate.
    """
    total = 0.0
    for j, s in enumerate(layout.streams):
        vals = [avg_matrix[j, i] for i in s.decoding_set]
        total += min(vals)
    return float(total)


def rate_report(
    avg_matrix: np.ndarray,
    layout: StreamLayout,
    mn: int,
    mu: np.ndarray | None = None,
) -> RateReport:
    """Assemble the normalized per-user report from an unnormalized rate matrix."""
    users = layout.num_users
    common = np.zeros(users)
    split = np.zeros(users)
    private = np.zeros(users)
    for j, s in enumerate(layout.streams):
        granted = min(avg_matrix[j, i] for i in s.decoding_set) / mn
        if s.allocation == "split" and s.is_shared:
            for i in s.decoding_set:
                common[i] = avg_matrix[j, i] / mn
            split = split + split_common_rate(common, mu)
        else:
            for owner in s.owners:
                private[owner] += granted / len(s.owners)
    totals = split + private
    return RateReport(common, private, split, totals, float(np.sum(totals)))
