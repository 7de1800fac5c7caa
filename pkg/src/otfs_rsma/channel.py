"""LEO satellite delay-Doppler channel generation and statistical CSIT sampling.

Builds per-user time-domain channel operators from path parameters with
fractional delay and Doppler (sinc interpolation kernel and per-sample phase
ramp), models estimation uncertainty on the path gains, and produces the
conditional channel sample sets consumed by the sample-average optimizer.

Row/column indexing of the per-path Doppler and delay matrices follows the
(n' + N*m') convention: for row index p, the Doppler sub-index is p % N and
the delay sub-index is p // N.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .transforms import GridConfig, sinc, td_to_dd

SPEED_OF_LIGHT = 299_792_458.0  # m/s

_MAGIC = b"OTFSMAT1"


# ---------------------------------------------------------------------------
# Path parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathParams:
    """One propagation path of the delay-Doppler channel.

    gain          complex path gain (dimensionless, Rician scaling included)
    aod           angle of departure in radians, in [-pi/2, pi/2)
    delay_int     integer delay index (bins), >= 0
    delay_frac    fractional delay, in [-1/2, 1/2)
    doppler_int   integer Doppler index (bins)
    doppler_frac  fractional Doppler, in [-1/2, 1/2)
    is_los        True for the line-of-sight path (index 0 by convention)
    """

    gain: complex
    aod: float
    delay_int: int
    delay_frac: float
    doppler_int: int
    doppler_frac: float
    is_los: bool = False

    def __post_init__(self) -> None:
        if self.delay_int < 0:
            raise ValueError(f"integer delay must be >= 0, got {self.delay_int}")
        if not -0.5 <= self.delay_frac <= 0.5:
            raise ValueError(f"fractional delay out of [-1/2, 1/2]: {self.delay_frac}")
        if not -0.5 <= self.doppler_frac <= 0.5:
            raise ValueError(f"fractional Doppler out of [-1/2, 1/2]: {self.doppler_frac}")

    @property
    def delay_bins(self) -> float:
        return self.delay_int + self.delay_frac

    @property
    def doppler_bins(self) -> float:
        return self.doppler_int + self.doppler_frac


def split_fractional(x: float) -> tuple[int, float]:
    """Split a bin coordinate into nearest integer and fractional remainder.

    Uses round-half-up so the fractional part always lands in [-1/2, 1/2).
    """
    i = int(math.floor(x + 0.5))
    return i, x - i


def sample_paths(
    grid: GridConfig,
    rician: float,
    num_nlos: int,
    rng,
    *,
    max_delay_fraction: float = 0.5,
    satellite_speed: float = 7.58e3,
    carrier_freq: float = 7.6e9,
    nlos_path_var: float | None = None,
) -> list[PathParams]:
    """Draw the path parameters of one user's downlink channel.

    Parameters
    ----------
    grid : GridConfig
    rician : float
        Rician factor (linear power ratio of the LoS to total scattered power).
    num_nlos : int
        Number of non-line-of-sight paths.
    rng : int | SeedSequence | Generator
        Seed or generator; fixed seeds reproduce the path list bit-exactly.
    max_delay_fraction : float
        Upper delay bound as a fraction of the slot duration (delays are
        assumed compensated to the symbol level, so they stay within a slot).
    satellite_speed, carrier_freq : float
        Doppler shifts are v/c * f_c * cos(chi) with a uniform ray angle chi
        per path, clipped to the one-subcarrier bound.
    nlos_path_var : float, optional
        Per-path scattered gain variance before Rician scaling.  Defaults to
        1/num_nlos so the LoS-to-total-scattered power ratio equals the
        Rician factor.

    Returns
    -------
    list[PathParams] with the LoS path at index 0.
    """
    if num_nlos < 0:
        raise ValueError(f"number of NLoS paths must be >= 0, got {num_nlos}")
    if rician <= 0:
        raise ValueError(f"Rician factor must be positive, got {rician}")
    gen = np.random.default_rng(rng)
    q = num_nlos
    per_path_var = (1.0 / q if q > 0 else 1.0) if nlos_path_var is None else nlos_path_var

    tau_max = max_delay_fraction * grid.t_slot
    nu_bound = grid.delta_f

    def draw_doppler() -> tuple[int, float]:
        chi = gen.uniform(0.0, np.pi)
        nu = satellite_speed / SPEED_OF_LIGHT * carrier_freq * np.cos(chi)
        nu = float(np.clip(nu, -nu_bound, nu_bound))
        return split_fractional(nu * grid.n * grid.t_slot)

    paths: list[PathParams] = []

    phi = gen.uniform(0.0, 2.0 * np.pi)
    los_gain = np.sqrt(rician / (rician + 1.0)) * np.exp(1j * phi)
    los_aod = gen.uniform(-np.pi / 2, np.pi / 2)
    tau_los = gen.uniform(0.0, tau_max)
    l_i, l_f = split_fractional(tau_los * grid.m * grid.delta_f)
    k_i, k_f = draw_doppler()
    paths.append(PathParams(complex(los_gain), float(los_aod), l_i, l_f, k_i, k_f, is_los=True))

    for _ in range(q):
        std = np.sqrt(per_path_var / (rician + 1.0) / 2.0)
        g = std * (gen.standard_normal() + 1j * gen.standard_normal())
        aod = gen.uniform(-np.pi / 2, np.pi / 2)
        tau = gen.uniform(tau_los, tau_max)
        l_i, l_f = split_fractional(tau * grid.m * grid.delta_f)
        k_i, k_f = draw_doppler()
        paths.append(PathParams(complex(g), float(aod), l_i, l_f, k_i, k_f))

    return paths


# ---------------------------------------------------------------------------
# Per-path operators and channel assembly
# ---------------------------------------------------------------------------

def steering_vector(aod: float, n_t: int) -> np.ndarray:
    """Uniform linear array response at half-wavelength spacing.

    Entry a = exp(-j*pi*sin(aod)*a) for a = 0..n_t-1; all entries have unit
    modulus.
    """
    if n_t < 1:
        raise ValueError(f"antenna count must be >= 1, got {n_t}")
    return np.exp(-1j * np.pi * np.sin(aod) * np.arange(n_t))


def _row_subindices(grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    p = np.arange(grid.mn)
    return p % grid.n, p // grid.n


def doppler_phase_diagonal(path: PathParams, grid: GridConfig) -> np.ndarray:
    """Diagonal of the Doppler progression matrix (unit-modulus phases)."""
    n_sub, m_sub = _row_subindices(grid)
    k = path.doppler_bins
    return np.exp(2j * np.pi * k / grid.n * (n_sub + m_sub / grid.m))


def doppler_matrix(path: PathParams, grid: GridConfig) -> np.ndarray:
    """Dense MN x MN diagonal Doppler progression matrix."""
    return np.diag(doppler_phase_diagonal(path, grid))


def delay_matrix(path: PathParams, grid: GridConfig) -> np.ndarray:
    """MN x MN delay interpolation matrix.

    Entry (n' + N*m', n + N*m) = sinc(M*(n' - n) + m' - m - delay_bins).
    At integer delays this reduces to a (non-cyclic) sample shift; fractional
    delays leak energy across bins through the sinc kernel.
    """
    n_sub, m_sub = _row_subindices(grid)
    arg = (
        grid.m * (n_sub[:, None] - n_sub[None, :])
        + (m_sub[:, None] - m_sub[None, :])
        - path.delay_bins
    )
    return sinc(arg)


def path_structure_td(path: PathParams, grid: GridConfig, n_t: int) -> np.ndarray:
    """Unit-gain time-domain operator of one path, shape (MN, n_t*MN).

    Includes the Doppler-delay phase coupling factor and the Kronecker
    expansion across transmit antennas; multiply by the path gain to get the
    path's contribution to the channel.
    """
    phase = np.exp(-2j * np.pi * path.doppler_bins * path.delay_bins / grid.mn)
    core = doppler_phase_diagonal(path, grid)[:, None] * delay_matrix(path, grid)
    steer = steering_vector(path.aod, n_t)
    return phase * np.kron(steer[None, :], core)


def td_channel(paths: list[PathParams], grid: GridConfig, n_t: int) -> np.ndarray:
    """Assemble the multi-antenna time-domain channel, shape (MN, n_t*MN).

    Column block a (size MN) acts on antenna a's time-domain signal.
    """
    if not paths:
        raise ValueError("path list must not be empty")
    h = np.zeros((grid.mn, n_t * grid.mn), dtype=complex)
    for p in paths:
        h += p.gain * path_structure_td(p, grid, n_t)
    if h.shape != (grid.mn, n_t * grid.mn):
        raise AssertionError(f"channel assembly produced shape {h.shape}")
    return h


def effective_dd_channel(h_td: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Apply the receive-side DD map to a TD channel (columns transformed).

    The map is unitary, so the Frobenius norm is preserved.
    """
    h_td = np.asarray(h_td)
    if h_td.ndim != 2 or h_td.shape[0] != grid.mn:
        raise ValueError(f"expected (MN, K) with MN={grid.mn}, got shape {h_td.shape}")
    return td_to_dd(h_td, grid)


# ---------------------------------------------------------------------------
# User channel and CSIT model
# ---------------------------------------------------------------------------

@dataclass
class UserChannel:
    """Assembled channel of one user plus the parameters that generated it."""

    grid: GridConfig
    n_t: int
    paths: list[PathParams]
    rician_factor: float
    h_td: np.ndarray
    noise_var: float = 1.0

    @classmethod
    def assemble(
        cls,
        grid: GridConfig,
        n_t: int,
        paths: list[PathParams],
        rician_factor: float,
        noise_var: float = 1.0,
    ) -> "UserChannel":
        return cls(grid, n_t, list(paths), rician_factor, td_channel(paths, grid, n_t), noise_var)

    @property
    def num_nlos(self) -> int:
        return sum(not p.is_los for p in self.paths)

    def effective_dd(self) -> np.ndarray:
        return effective_dd_channel(self.h_td, self.grid)

    def with_integer_bins(self) -> "UserChannel":
        """Copy with fractional delay/Doppler parts zeroed (idealized model)."""
        ideal = [replace(p, delay_frac=0.0, doppler_frac=0.0) for p in self.paths]
        return UserChannel.assemble(self.grid, self.n_t, ideal, self.rician_factor, self.noise_var)


def csit_error_variance(rho: float, pilot_snr: float, num_nlos: int) -> float:
    """Path-gain estimation error variance, literal model.

    rho is the correlation coefficient between estimated and actual gains and
    pilot_snr is the linear pilot SNR.  Note the direct dependence on the
    pilot SNR; callers wanting an error that shrinks with better pilots can
    specify the variance directly (see CsitModel).
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"correlation coefficient must be in [0, 1], got {rho}")
    if pilot_snr <= 0:
        raise ValueError(f"pilot SNR must be positive, got {pilot_snr}")
    if num_nlos < 1:
        raise ValueError(f"NLoS path count must be >= 1, got {num_nlos}")
    return rho**2 * pilot_snr + (1.0 - rho**2) / num_nlos


@dataclass(frozen=True)
class CsitModel:
    """Statistical CSIT description: correlation, pilot SNR, error variance,
    and the conditional sample count L."""

    rho: float
    pilot_snr: float
    error_var: float
    num_samples: int

    def __post_init__(self) -> None:
        if self.error_var < 0:
            raise ValueError(f"error variance must be >= 0, got {self.error_var}")
        if self.num_samples < 1:
            raise ValueError(f"sample count must be >= 1, got {self.num_samples}")

    @classmethod
    def from_quality(cls, rho: float, pilot_snr: float, num_nlos: int, num_samples: int) -> "CsitModel":
        """Build with the error variance computed from the literal model."""
        return cls(rho, pilot_snr, csit_error_variance(rho, pilot_snr, num_nlos), num_samples)


def path_structures_dd(estimate: UserChannel) -> np.ndarray:
    """Unit-gain effective DD operators of the estimate's paths, (Q+1, MN, n_t*MN)."""
    return np.stack(
        [
            effective_dd_channel(path_structure_td(p, estimate.grid, estimate.n_t), estimate.grid)
            for p in estimate.paths
        ]
    )


def sample_csit_realizations(estimate: UserChannel, csit: CsitModel, rng_seed) -> np.ndarray:
    """Draw L conditional effective DD channel realizations for one user.

    Each realization perturbs the per-path complex gains with i.i.d. complex
    Gaussian errors of variance ``csit.error_var`` while reusing the
    estimate's path geometry (steering, delay/Doppler operators, phase
    coupling).  Per-sample RNG streams are derived from the seed, so samples
    are reproducible and order-independent.

    Returns
    -------
    (L, MN, n_t*MN) complex ndarray.
    """
    h_dd = estimate.effective_dd()
    ell = csit.num_samples
    if csit.error_var == 0.0:
        return np.broadcast_to(h_dd, (ell, *h_dd.shape)).copy()

    structures = path_structures_dd(estimate)
    num_paths = len(estimate.paths)
    std = np.sqrt(csit.error_var / 2.0)
    children = np.random.SeedSequence(rng_seed).spawn(ell)
    errors = np.empty((ell, num_paths), dtype=complex)
    for l, child in enumerate(children):
        g = np.random.default_rng(child)
        errors[l] = std * (g.standard_normal(num_paths) + 1j * g.standard_normal(num_paths))
    return h_dd[None, :, :] + np.einsum("lq,qrc->lrc", errors, structures)


@dataclass
class SampleSet:
    """Conditional channel realizations for all users.

    heff[i] holds user i's (L, MN, n_t*MN) stack of effective DD channels.
    """

    grid: GridConfig
    n_t: int
    heff: list[np.ndarray]
    seeds: tuple = ()

    @property
    def num_users(self) -> int:
        return len(self.heff)

    @property
    def num_samples(self) -> int:
        return self.heff[0].shape[0]


def build_sample_set(
    estimates: list[UserChannel],
    csit: CsitModel,
    seeds,
    *,
    include_estimate: bool = False,
) -> SampleSet:
    """Build a SampleSet from per-user estimates.

    seeds is either one seed per user or a single master entropy value from
    which per-user seeds are derived.  With ``include_estimate`` the nominal
    estimate replaces sample 0 (useful for perfect-CSIT degenerate runs).
    """
    if not estimates:
        raise ValueError("need at least one user estimate")
    if isinstance(seeds, (int, np.integer)):
        seeds = [(int(seeds), u) for u in range(len(estimates))]
    seeds = list(seeds)
    if len(seeds) != len(estimates):
        raise ValueError(f"got {len(seeds)} seeds for {len(estimates)} users")
    heff = []
    for est, seed in zip(estimates, seeds):
        stack = sample_csit_realizations(est, csit, seed)
        if include_estimate:
            stack = stack.copy()
            stack[0] = est.effective_dd()
        heff.append(stack)
    recorded = tuple(tuple(s) if isinstance(s, (list, tuple)) else s for s in seeds)
    return SampleSet(estimates[0].grid, estimates[0].n_t, heff, recorded)


# ---------------------------------------------------------------------------
# Binary matrix interchange format
# ---------------------------------------------------------------------------

def write_matrix_file(path, mat: np.ndarray) -> None:
    """Dump a complex matrix for cross-implementation diffing.

    Format: 16-byte header (magic ``OTFSMAT1``, u32 rows, u32 cols, both
    little-endian) followed by row-major little-endian complex64 pairs.
    """
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    rows, cols = mat.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(mat, dtype="<c8").tobytes())


def read_matrix_file(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix_file`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != rows * cols:
        raise ValueError(f"payload holds {data.size} entries, header says {rows}x{cols}")
    return data.reshape(rows, cols).astype(complex)
