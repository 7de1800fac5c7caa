"""MMSE equalizers/weights and the weighted-MSE machinery of the optimizer.

Scale convention.  The augmented weighted MSE is computed from natural-log
primitives and reported on an affine "bits" scale,

    xi_bits = (tr(B E) - ln det B - MN) / ln 2 + MN,

which is a positive affine image of the natural-log objective.  On this
scale the inverse-MSE weight is the exact block minimizer (so alternating
updates are monotone) and at the MMSE equalizer/weight pair

    xi_bits = MN - R,

with R the unnormalized log2-det rate of the stream.  The quadratic forms
below carry the same scale so the vectorized objective reproduces xi_bits
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .signal import (
    LN2,
    PrecoderSet,
    StreamLayout,
    _ct,
    received_covariances,
)
from .transforms import GridConfig

_HERMITIAN_TOL = 1e-8


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + _ct(a))


def _check_hermitian(b: np.ndarray, what: str = "weight matrix") -> None:
    scale = max(float(np.max(np.abs(b))), 1.0)
    dev = float(np.max(np.abs(b - _ct(b))))
    if dev > _HERMITIAN_TOL * scale:
        raise ValueError(f"{what} is not Hermitian (max deviation {dev:.3g})")


# ---------------------------------------------------------------------------
# Spec-surface single-matrix operations
# ---------------------------------------------------------------------------

def mmse_equalizer(
    heff: np.ndarray,
    pset: PrecoderSet,
    layout: StreamLayout,
    user: int,
    stream: int,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> np.ndarray:
    """MMSE receive filter for one (user, stream) pair, (MN, MN).

    Solves A = G^H T^{-1} through a linear solve; T is never inverted
    explicitly.
    """
    if not np.all(np.isfinite(heff)):
        raise ValueError("channel matrix contains non-finite entries")
    t, _ = received_covariances(heff, pset, layout, user, grid, noise_var)[stream]
    from .signal import effective_precoders, stream_gains

    g = stream_gains(heff, effective_precoders(pset, layout, grid))[stream]
    return _ct(np.linalg.solve(t, g))


def mse_matrix(
    a: np.ndarray,
    heff: np.ndarray,
    pset: PrecoderSet,
    layout: StreamLayout,
    user: int,
    stream: int,
    grid: GridConfig,
    noise_var: float = 1.0,
) -> np.ndarray:
    """Error covariance of the stream estimate under equalizer ``a``.

    With unit-power symbols: E = A T A^H - A G - G^H A^H + I.
    """
    t, _ = received_covariances(heff, pset, layout, user, grid, noise_var)[stream]
    from .signal import effective_precoders, stream_gains

    g = stream_gains(heff, effective_precoders(pset, layout, grid))[stream]
    ag = a @ g
    mn = grid.mn
    return a @ t @ _ct(a) - ag - _ct(ag) + np.eye(mn)


def mmse_weight(e_mmse: np.ndarray) -> np.ndarray:
    """Inverse of the MMSE error covariance, Hermitian-symmetrized."""
    try:
        b = np.linalg.inv(e_mmse)
    except np.linalg.LinAlgError as exc:  # K >= noise keeps E away from singular
        raise ValueError("MMSE error covariance is numerically singular") from exc
    return _hermitize(b)


def awmse(b: np.ndarray, e: np.ndarray) -> float:
    """Weighted MSE objective of one stream on the bits scale (see module
    docstring); equals MN - R at the MMSE equalizer/weight pair."""
    mn = b.shape[-1]
    tr = float(np.trace(b @ e).real)
    _, logdet = np.linalg.slogdet(b)
    return (tr - float(logdet) - mn) / LN2 + mn


# ---------------------------------------------------------------------------
# Quadratic forms over the effective precoder space
# ---------------------------------------------------------------------------

@dataclass
class QuadraticForms:
    """Bits-scaled quadratic data of one (user, stream, sample) triple.

    The full quadratic operator is I_MN (x) core over vec'd effective
    precoders; only the (n_t*MN, n_t*MN) core is stored.  d_mat is the
    un-vectorized linear term and d_scalar the constant.  For fixed
    arrangements each stream's contribution reduces to an n_t x n_t form via
    :meth:`reduced_quad` / :meth:`reduced_lin`.
    """

    core: np.ndarray      # (n_t*MN, n_t*MN) Hermitian PSD
    d_mat: np.ndarray     # (n_t*MN, MN)
    d_scalar: float
    mn: int
    n_t: int

    def reduced_quad(self, psi_t: np.ndarray) -> np.ndarray:
        """n_t x n_t Hermitian form of a stream with TD arrangement psi_t."""
        w = psi_t @ _ct(psi_t)
        g4 = self.core.reshape(self.n_t, self.mn, self.n_t, self.mn)
        q = np.einsum("aibj,ji->ab", g4, w)
        return _hermitize(q)

    def reduced_lin(self, psi_t: np.ndarray) -> np.ndarray:
        """Length-n_t linear term of the decoded stream."""
        d3 = self.d_mat.reshape(self.n_t, self.mn, self.mn)
        return np.einsum("rc,arc->a", psi_t.conj(), d3)


def quadratic_forms(
    a: np.ndarray,
    b: np.ndarray,
    heff: np.ndarray,
    grid: GridConfig,
    n_t: int,
    noise_var: float = 1.0,
) -> QuadraticForms:
    """Quadratic data reproducing the bits-scaled weighted MSE.

    For any precoders, xi_bits equals the decoded stream's quadratic term
    plus the interferers' quadratic terms minus twice the real linear term
    plus d_scalar; the weight must be Hermitian for the two linear terms to
    merge.
    """
    _check_hermitian(b)
    mn = grid.mn
    m1 = a @ heff
    d_nat = _ct(m1) @ b
    core_nat = d_nat @ m1
    aah = a @ _ct(a)
    tr_baah = float(np.trace(b @ aah).real)
    tr_b = float(np.trace(b).real)
    _, logdet_b = np.linalg.slogdet(b)
    dsc = (noise_var * tr_baah + tr_b - float(logdet_b) - mn) / LN2 + mn
    return QuadraticForms(
        core=_hermitize(core_nat) / LN2,
        d_mat=d_nat / LN2,
        d_scalar=dsc,
        mn=mn,
        n_t=n_t,
    )


def saf_average(forms: Sequence[QuadraticForms]) -> QuadraticForms:
    """Entrywise arithmetic mean of per-sample quadratic forms."""
    forms = list(forms)
    if not forms:
        raise ValueError("cannot average an empty form collection")
    return QuadraticForms(
        core=np.mean([f.core for f in forms], axis=0),
        d_mat=np.mean([f.d_mat for f in forms], axis=0),
        d_scalar=float(np.mean([f.d_scalar for f in forms])),
        mn=forms[0].mn,
        n_t=forms[0].n_t,
    )


def evaluate_phi(
    forms: QuadraticForms,
    p_bf: np.ndarray,
    psi_t: list[np.ndarray],
    decoded: int,
    interferers: list[int],
) -> float:
    """Bits-scaled weighted-MSE value at the given spatial precoders."""
    val = forms.d_scalar
    for j in [decoded, *interferers]:
        q = forms.reduced_quad(psi_t[j])
        p = p_bf[j]
        val += float((p.conj() @ q @ p).real)
    v = forms.reduced_lin(psi_t[decoded])
    val -= 2.0 * float((v.conj() @ p_bf[decoded]).real)
    return val


# ---------------------------------------------------------------------------
# Batched per-sample pipeline (used by the alternating optimizer)
# ---------------------------------------------------------------------------

@dataclass
class EqualizerWeightSet:
    """Per-sample MMSE equalizers and weights keyed by (user, stream)."""

    pairs: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]

    def __getitem__(self, key: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        return self.pairs[key]


def mmse_pairs_batched(
    g_decoded: np.ndarray,
    k_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched MMSE equalizer and weight stacks from (L, MN, MN) inputs."""
    mn = g_decoded.shape[-1]
    t = k_cov + g_decoded @ _ct(g_decoded)
    x = np.linalg.solve(t, g_decoded)  # T^{-1} G
    a = _ct(x)
    e = np.eye(mn) - _ct(g_decoded) @ x
    e = _hermitize(e)
    b = _hermitize(np.linalg.inv(e))
    return a, b


def saf_forms_batched(
    a: np.ndarray,
    b: np.ndarray,
    heff_stack: np.ndarray,
    n_t: int,
    noise_var: float,
) -> QuadraticForms:
    """Sample-averaged quadratic forms from batched equalizer/weight stacks."""
    mn = a.shape[-1]
    m1 = a @ heff_stack
    d_nat = _ct(m1) @ b
    core_nat = d_nat @ m1
    tr_baah = np.einsum("lij,lji->l", b, a @ _ct(a)).real
    tr_b = np.einsum("lii->l", b).real
    _, logdet_b = np.linalg.slogdet(b)
    dsc = (noise_var * tr_baah + tr_b - logdet_b - mn) / LN2 + mn
    return QuadraticForms(
        core=_hermitize(np.mean(core_nat, axis=0)) / LN2,
        d_mat=np.mean(d_nat, axis=0) / LN2,
        d_scalar=float(np.mean(dsc)),
        mn=mn,
        n_t=n_t,
    )
