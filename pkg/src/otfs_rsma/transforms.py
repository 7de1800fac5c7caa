"""Unitary DFT matrices and delay-Doppler <-> time-domain maps for OTFS frames.

Vectorization convention (single source of truth for the whole package):
an M x N delay-Doppler grid (M delay rows, N Doppler columns) is flattened
column-major with the delay index fastest, i.e. grid entry (m, n) sits at
vector position m + M*n.  Every reshape below relies on this convention;
other modules must never re-derive it.

Transforms are applied by reshaping to the M x N grid and multiplying by
small DFT factors instead of materializing MN x MN Kronecker operators.
Explicit Kronecker matrices appear only in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridConfig:
    """OTFS frame geometry.

    Parameters
    ----------
    m : int
        Number of delay bins (subcarriers).
    n : int
        Number of Doppler bins (time slots).
    delta_f : float
        Subcarrier spacing in Hz.  The slot duration is 1/delta_f, so the
        time-bandwidth product per bin is exactly 1.
    """

    m: int
    n: int
    delta_f: float = 480e3

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"delay bin count must be >= 1, got {self.m}")
        if self.n < 1:
            raise ValueError(f"Doppler bin count must be >= 1, got {self.n}")
        if self.delta_f <= 0:
            raise ValueError(f"subcarrier spacing must be positive, got {self.delta_f}")

    @property
    def mn(self) -> int:
        """Total number of delay-Doppler bins per frame."""
        return self.m * self.n

    @property
    def t_slot(self) -> float:
        """Slot duration in seconds (1/delta_f exactly)."""
        return 1.0 / self.delta_f

    @property
    def frame_duration(self) -> float:
        """Frame duration in seconds (n slots)."""
        return self.n * self.t_slot

    @property
    def bandwidth(self) -> float:
        """Occupied bandwidth in Hz (m subcarriers)."""
        return self.m * self.delta_f


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries exp(-j*2*pi*r*c/n)/sqrt(n).

    Parameters
    ----------
    n : int
        Transform size, must be >= 1.

    Returns
    -------
    (n, n) complex ndarray, unitary.
    """
    if n < 1:
        raise ValueError(f"DFT size must be >= 1, got {n}")
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def sinc(x) -> np.ndarray:
    """Normalized sinc, sin(pi*x)/(pi*x) with sinc(0) = 1.

    The normalized convention makes the delay interpolation kernel collapse
    to a 0/1 selection at integer offsets.
    """
    return np.sinc(x)


def vec(x: np.ndarray) -> np.ndarray:
    """Column-major flatten of a delay-Doppler grid (delay index fastest)."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(x: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Inverse of :func:`vec`: reshape a length-MN vector to the M x N grid."""
    x = np.asarray(x)
    if x.size != grid.mn:
        raise ValueError(f"expected length {grid.mn}, got {x.size}")
    return x.reshape(grid.m, grid.n, order="F")


def _as_grid_stack(x: np.ndarray, grid: GridConfig) -> tuple[np.ndarray, bool]:
    """Reshape a (MN,) vector or (MN, K) matrix to an (M, N, K) stack."""
    x = np.asarray(x)
    one_dim = x.ndim == 1
    if one_dim:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != grid.mn:
        raise ValueError(
            f"expected leading dimension {grid.mn} (= {grid.m} x {grid.n}), got shape {x.shape}"
        )
    return x.reshape(grid.m, grid.n, -1, order="F"), one_dim


def dd_to_td(x_dd: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Map delay-Doppler symbols to time-domain samples (rectangular pulses).

    Applies the inverse Doppler DFT along the Doppler axis, which is the
    composition of the DD->TF spreading and the transmit pulse map when the
    pulse is rectangular.  Accepts a length-MN vector or an (MN, K) matrix
    (columns transformed independently).
    """
    stack, one_dim = _as_grid_stack(x_dd, grid)
    f_n = dft_matrix(grid.n)
    out = np.einsum("mnk,rn->mrk", stack, f_n.conj())
    out = out.reshape(grid.mn, -1, order="F")
    return out[:, 0] if one_dim else out


def td_to_dd(y_td: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Adjoint (and inverse) of :func:`dd_to_td`: time domain back to DD.

    Accepts a length-MN vector or an (MN, K) matrix.
    """
    stack, one_dim = _as_grid_stack(y_td, grid)
    f_n = dft_matrix(grid.n)
    out = np.einsum("mnk,nr->mrk", stack, f_n)
    out = out.reshape(grid.mn, -1, order="F")
    return out[:, 0] if one_dim else out


def isfft(x_dd: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Inverse symplectic FFT: DD vector -> M x N time-frequency grid.

    Diagnostic map; the transmit pipeline composes transforms directly in
    :func:`dd_to_td`.
    """
    x = unvec(x_dd, grid)
    f_m = dft_matrix(grid.m)
    f_n = dft_matrix(grid.n)
    return f_m @ x @ f_n.conj().T


def sfft(x_tf: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Symplectic FFT: M x N time-frequency grid -> DD vector (inverse of isfft)."""
    x_tf = np.asarray(x_tf)
    if x_tf.shape != (grid.m, grid.n):
        raise ValueError(f"expected shape {(grid.m, grid.n)}, got {x_tf.shape}")
    f_m = dft_matrix(grid.m)
    f_n = dft_matrix(grid.n)
    return vec(f_m.conj().T @ x_tf @ f_n)
