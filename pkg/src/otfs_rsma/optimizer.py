"""Alternating optimization of precoders, rate split and arrangements.

Each iteration (1) refreshes the per-sample MMSE equalizers and weights at
the current precoders, (2) averages the induced quadratic forms over the
conditional channel samples, (3) re-optimizes the spatial precoders and the
common-rate multipliers through a convex QCQP, and (4) optionally improves
the binary diagonal arrangements by discrete local search.  Every step is a
block descent on the same sample-averaged weighted-MSE objective, so the
recorded objective trace is non-increasing.

The objective value ``t`` lives on the bits scale of :mod:`otfs_rsma.wmmse`;
at a fixed point ``num_users * MN - t`` equals the sample-averaged sum rate
in bits per frame.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .channel import SampleSet
from .qcqp import QcqpResult, QuadConstraint, SolverError, solve_qcqp
from .signal import StreamLayout, effective_arrangement
from .transforms import GridConfig
from .wmmse import (
    QuadraticForms,
    mmse_pairs_batched,
    saf_forms_batched,
)
from .signal import interference_covariance

_ARRANGEMENT_MODES = ("fixed", "greedy-flip", "exhaustive")
_EXHAUSTIVE_CAP = 12
_FEAS_SLACK = 1e-9


@dataclass
class AoConfig:
    """Alternating-optimization settings."""

    epsilon: float = 1e-4
    max_iters: int = 50
    qcqp_gap_tol: float = 1e-8
    qcqp_feas_tol: float = 1e-9
    qcqp_max_newton: int = 600
    arrangement_mode: str = "fixed"
    common_power_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"convergence threshold must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.arrangement_mode not in _ARRANGEMENT_MODES:
            raise ValueError(
                f"arrangement mode {self.arrangement_mode!r} not in {_ARRANGEMENT_MODES}"
            )


@dataclass
class PrecoderSolution:
    """Result of the alternating optimization."""

    p_bf: np.ndarray                      # (num_streams, n_t)
    mu: np.ndarray                        # per rate-split slot, <= 0
    mu_slots: tuple[tuple[int, int], ...]  # (stream, user) per slot
    psi: list[np.ndarray]
    objective_trace: list[float]
    converged: bool
    iterations: int
    layout: StreamLayout
    qcqp_accurate: bool = True
    records: list[dict] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def common_mu(self) -> np.ndarray | None:
        """Per-user multipliers of the split stream, or None if there is none."""
        split = [j for j, s in enumerate(self.layout.streams) if s.allocation == "split" and s.is_shared]
        if not split:
            return None
        s = split[0]
        out = np.zeros(self.layout.num_users)
        for val, (stream, user) in zip(self.mu, self.mu_slots):
            if stream == s:
                out[user] += val
        return out

    def write_trace_csv(self, path) -> None:
        """Dump the per-iteration trace (objective, power, stream norms)."""
        j = self.p_bf.shape[0]
        header = ["iteration", "objective", "power"] + [f"norm_{k}" for k in range(j)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in self.records:
                writer.writerow(
                    [rec["iteration"], repr(rec["objective"]), repr(rec["power"])]
                    + [repr(x) for x in rec["stream_norms"]]
                )


# ---------------------------------------------------------------------------
# Rate-split slots and surrogate objective
# ---------------------------------------------------------------------------

def mu_slots(layout: StreamLayout) -> list[tuple[int, int]]:
    """Rate multipliers of the program: one per user for a split stream,
    one per owner for other shared streams."""
    slots: list[tuple[int, int]] = []
    for j in layout.shared_streams():
        s = layout.streams[j]
        if s.allocation == "split":
            slots.extend((j, i) for i in range(layout.num_users))
        else:
            slots.append((j, s.owners[0]))
    return slots


def _phi_value(
    forms: QuadraticForms,
    p_bf: np.ndarray,
    psi_t: list[np.ndarray],
    decoded: int,
    interferers: list[int],
) -> float:
    val = forms.d_scalar
    for j in [decoded, *interferers]:
        q = forms.reduced_quad(psi_t[j])
        p = p_bf[j]
        val += float((p.conj() @ q @ p).real)
    v = forms.reduced_lin(psi_t[decoded])
    return val - 2.0 * float((v.conj() @ p_bf[decoded]).real)


def surrogate_objective(
    p_bf: np.ndarray,
    forms: dict[tuple[int, int], QuadraticForms],
    layout: StreamLayout,
    psi_t: list[np.ndarray],
    mn: int,
) -> tuple[float, np.ndarray | None]:
    """Objective value with the rate multipliers at their optimum.

    Returns (value, per-slot multipliers); value is +inf (multipliers None)
    when some shared stream's constraint cannot be met at these precoders.
    """
    slots = mu_slots(layout)
    mu = np.zeros(len(slots))
    total = 0.0
    for j in layout.single_streams():
        owner = layout.streams[j].owners[0]
        total += _phi_value(forms[(owner, j)], p_bf, psi_t, j, layout.interferers(owner, j))
    for j in layout.shared_streams():
        worst = max(
            _phi_value(forms[(i, j)], p_bf, psi_t, j, layout.interferers(i, j))
            for i in layout.streams[j].decoding_set
        )
        gap = worst - mn
        if gap > _FEAS_SLACK:
            return float("inf"), None
        gap = min(gap, 0.0)
        total += gap
        members = [k for k, (stream, _) in enumerate(slots) if stream == j]
        for k in members:
            mu[k] = gap / len(members)
    return total, mu


# ---------------------------------------------------------------------------
# Precoder update (convex QCQP)
# ---------------------------------------------------------------------------

def _real_quad(q: np.ndarray) -> np.ndarray:
    re, im = q.real, q.imag
    return np.block([[re, -im], [im, re]])


def _real_lin(v: np.ndarray) -> np.ndarray:
    return 2.0 * np.concatenate([v.real, v.imag])


def _check_psd(q: np.ndarray) -> np.ndarray:
    """Validate near-PSD reduced forms and clip tiny negative curvature."""
    w, v = np.linalg.eigh(q)
    scale = max(float(w[-1]), 1.0)
    if w[0] < -1e-8 * scale:
        raise SolverError(f"quadratic form is not PSD (min eigenvalue {w[0]:.3g})")
    if w[0] < 0:
        q = (v * np.clip(w, 0.0, None)) @ v.conj().T
    return q


def _assemble_qcqp(
    forms: dict[tuple[int, int], QuadraticForms],
    layout: StreamLayout,
    psi_t: list[np.ndarray],
    p_t: float,
    mn: int,
    n_t: int,
) -> tuple[np.ndarray, list[QuadConstraint], list[tuple[int, int]], int]:
    num_streams = layout.num_streams
    nx = 2 * n_t * num_streams
    slots = mu_slots(layout)
    n = nx + len(slots) + 1
    t_idx = n - 1

    def block(j: int) -> slice:
        return slice(2 * n_t * j, 2 * n_t * (j + 1))

    def quad_blocks(i: int, s: int) -> tuple[dict[int, np.ndarray], np.ndarray, float]:
        f = forms[(i, s)]
        quads = {}
        for j in [s, *layout.interferers(i, s)]:
            quads[j] = _real_quad(_check_psd(f.reduced_quad(psi_t[j])))
        return quads, _real_lin(f.reduced_lin(psi_t[s])), f.d_scalar

    constraints: list[QuadConstraint] = []

    # epigraph constraint: sum of multipliers + single-stream objectives <= t
    h1 = np.zeros((n, n))
    g1 = np.zeros(n)
    r1 = 0.0
    for s in layout.single_streams():
        owner = layout.streams[s].owners[0]
        quads, v, dsc = quad_blocks(owner, s)
        for j, q in quads.items():
            h1[block(j), block(j)] += 2.0 * q
        g1[block(s)] -= v
        r1 += dsc
    for k in range(len(slots)):
        g1[nx + k] += 1.0
    g1[t_idx] = -1.0
    constraints.append(QuadConstraint(h1, g1, r1))

    # shared-stream decodability constraints
    for s in layout.shared_streams():
        members = [nx + k for k, (stream, _) in enumerate(slots) if stream == s]
        for i in layout.streams[s].decoding_set:
            h = np.zeros((n, n))
            g = np.zeros(n)
            quads, v, dsc = quad_blocks(i, s)
            for j, q in quads.items():
                h[block(j), block(j)] += 2.0 * q
            g[block(s)] -= v
            for k in members:
                g[k] = -1.0
            constraints.append(QuadConstraint(h, g, dsc - mn))

    # nonpositive multipliers
    for k in range(len(slots)):
        g = np.zeros(n)
        g[nx + k] = 1.0
        constraints.append(QuadConstraint(None, g, 0.0))

    # transmit power budget
    hp = np.zeros((n, n))
    hp[:nx, :nx] = 2.0 * np.eye(nx)
    constraints.append(QuadConstraint(hp, np.zeros(n), -p_t))

    c = np.zeros(n)
    c[t_idx] = 1.0
    return c, constraints, slots, nx


def _strictly_feasible_start(
    p_warm: np.ndarray,
    forms: dict[tuple[int, int], QuadraticForms],
    layout: StreamLayout,
    psi_t: list[np.ndarray],
    p_t: float,
    mn: int,
    slots: list[tuple[int, int]],
) -> tuple[np.ndarray, np.ndarray, float]:
    """Shrink the warm start into the interior and center the multipliers."""
    power = float(np.sum(np.abs(p_warm) ** 2))
    if power <= 0 and layout.shared_streams():
        raise SolverError("warm start must power every shared stream")
    for shrink in (1e-3, 1e-2, 0.1):
        scale = np.sqrt(min(power, p_t) * (1.0 - shrink) / power) if power > 0 else 0.0
        p0 = p_warm * scale
        mu0 = np.zeros(len(slots))
        ok = True
        total = 0.0
        for s in layout.shared_streams():
            worst = max(
                _phi_value(forms[(i, s)], p0, psi_t, s, layout.interferers(i, s))
                for i in layout.streams[s].decoding_set
            )
            gap = worst - mn
            if gap >= 0:
                ok = False
                break
            members = [k for k, (stream, _) in enumerate(slots) if stream == s]
            target = 0.5 * gap
            for k in members:
                mu0[k] = target / len(members)
            total += target
        if not ok:
            continue
        for s in layout.single_streams():
            owner = layout.streams[s].owners[0]
            total += _phi_value(forms[(owner, s)], p0, psi_t, s, layout.interferers(owner, s))
        t0 = total + max(1.0, 0.1 * abs(total))
        return p0, mu0, t0
    raise SolverError("could not construct a strictly feasible starting point")


def precoder_update(
    forms: dict[tuple[int, int], QuadraticForms],
    layout: StreamLayout,
    psi_t: list[np.ndarray],
    p_t: float,
    mn: int,
    n_t: int,
    cfg: AoConfig,
    p_warm: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, QcqpResult]:
    """Solve the convex precoder/rate-split program at fixed equalizers,
    weights and arrangements."""
    if p_t <= 0:
        raise SolverError("precoder update requires a positive power budget")
    c, constraints, slots, nx = _assemble_qcqp(forms, layout, psi_t, p_t, mn, n_t)
    p0, mu0, t0 = _strictly_feasible_start(p_warm, forms, layout, psi_t, p_t, mn, slots)
    x0 = np.zeros(c.size)
    for j in range(layout.num_streams):
        x0[2 * n_t * j : 2 * n_t * j + n_t] = p0[j].real
        x0[2 * n_t * j + n_t : 2 * n_t * (j + 1)] = p0[j].imag
    x0[nx : nx + len(slots)] = mu0
    x0[-1] = t0
    res = solve_qcqp(
        c,
        constraints,
        x0,
        gap_tol=cfg.qcqp_gap_tol,
        feas_tol=cfg.qcqp_feas_tol,
        max_newton=cfg.qcqp_max_newton,
    )
    p_new = np.empty_like(p_warm)
    for j in range(layout.num_streams):
        re = res.x[2 * n_t * j : 2 * n_t * j + n_t]
        im = res.x[2 * n_t * j + n_t : 2 * n_t * (j + 1)]
        p_new[j] = re + 1j * im
    mu_new = res.x[nx : nx + len(slots)]
    return p_new, mu_new, res


# ---------------------------------------------------------------------------
# Arrangement update (discrete search over binary diagonals)
# ---------------------------------------------------------------------------

def arrangement_update(
    p_bf: np.ndarray,
    forms: dict[tuple[int, int], QuadraticForms],
    layout: StreamLayout,
    psi: list[np.ndarray],
    grid: GridConfig,
    mode: str,
) -> tuple[list[np.ndarray], float]:
    """Update the binary diagonal arrangements at fixed precoders and forms.

    ``fixed`` returns the input unchanged; ``greedy-flip`` accepts
    single-entry flips while the objective strictly decreases
    (first-improvement, deterministic scan order); ``exhaustive`` enumerates
    every assignment and is refused above 12 total bits.
    """
    if mode not in _ARRANGEMENT_MODES:
        raise ValueError(f"unknown arrangement mode {mode!r}")
    mn = grid.mn
    psi = [np.asarray(p, dtype=float).copy() for p in psi]
    psi_t = [effective_arrangement(p, grid) for p in psi]
    t_cur, _ = surrogate_objective(p_bf, forms, layout, psi_t, mn)
    if mode == "fixed":
        return psi, t_cur

    num_streams = layout.num_streams
    if mode == "exhaustive":
        bits = mn * num_streams
        if bits > _EXHAUSTIVE_CAP:
            raise ValueError(
                f"exhaustive arrangement search needs 2^{bits} evaluations; "
                f"allowed only up to {_EXHAUSTIVE_CAP} total bits"
            )
        best_t, best = t_cur, psi
        for assignment in itertools.product((0.0, 1.0), repeat=bits):
            cand = [
                np.array(assignment[s * mn : (s + 1) * mn], dtype=float)
                for s in range(num_streams)
            ]
            cand_t_list = [effective_arrangement(p, grid) for p in cand]
            t_c, _ = surrogate_objective(p_bf, forms, layout, cand_t_list, mn)
            if t_c < best_t:
                best_t, best = t_c, cand
        return best, best_t

    # greedy-flip
    for _ in range(64):
        improved = False
        for s in range(num_streams):
            for d in range(mn):
                cand = psi[s].copy()
                cand[d] = 1.0 - cand[d]
                cand_t = effective_arrangement(cand, grid)
                saved = psi_t[s]
                psi_t[s] = cand_t
                t_c, _ = surrogate_objective(p_bf, forms, layout, psi_t, mn)
                if t_c < t_cur:
                    psi[s] = cand
                    t_cur = t_c
                    improved = True
                else:
                    psi_t[s] = saved
        if not improved:
            break
    return psi, t_cur


# ---------------------------------------------------------------------------
# Alternating optimization
# ---------------------------------------------------------------------------

def _initial_precoders(
    samples: SampleSet,
    layout: StreamLayout,
    p_t: float,
    cfg: AoConfig,
) -> np.ndarray:
    """Matched-direction warm start with a configurable common power share."""
    n_t = samples.n_t
    mn = samples.grid.mn
    grams = []
    for stack in samples.heff:
        mean = np.mean(stack, axis=0)
        h3 = mean.reshape(mn, n_t, mn)
        grams.append(np.einsum("rac,rbc->ab", h3.conj(), h3))

    def top_dir(gram: np.ndarray) -> np.ndarray:
        _, vecs = np.linalg.eigh(gram)
        return vecs[:, -1]

    split_streams = [
        j for j, s in enumerate(layout.streams) if s.allocation == "split" and s.is_shared
    ]
    frac = cfg.common_power_fraction if split_streams else 0.0
    if split_streams and not 0.0 < frac < 1.0:
        raise ValueError(
            "common_power_fraction must be in (0, 1) for layouts with a shared split stream"
        )
    others = [j for j in range(layout.num_streams) if j not in split_streams]
    p_bf = np.zeros((layout.num_streams, n_t), dtype=complex)
    for j in split_streams:
        p_bf[j] = np.sqrt(frac * p_t) * top_dir(sum(grams))
    share = (1.0 - frac) * p_t / max(len(others), 1)
    for j in others:
        owner = layout.streams[j].owners[0]
        p_bf[j] = np.sqrt(share) * top_dir(grams[owner])
    return p_bf


def _compute_forms(
    samples: SampleSet,
    p_bf: np.ndarray,
    psi_t: list[np.ndarray],
    layout: StreamLayout,
    noise_var: float,
) -> dict[tuple[int, int], QuadraticForms]:
    mn = samples.grid.mn
    n_t = samples.n_t
    ptilde = [np.kron(p_bf[j].reshape(-1, 1), psi_t[j]) for j in range(layout.num_streams)]
    forms: dict[tuple[int, int], QuadraticForms] = {}
    for i in range(layout.num_users):
        stack = samples.heff[i]
        gains = [stack @ pt for pt in ptilde]
        for j in layout.decoded_streams(i):
            k_cov = interference_covariance(gains, layout.interferers(i, j), mn, noise_var)
            a, b = mmse_pairs_batched(gains[j], k_cov)
            forms[(i, j)] = saf_forms_batched(a, b, stack, n_t, noise_var)
    return forms


def _zero_power_solution(samples: SampleSet, layout: StreamLayout, cfg: AoConfig) -> PrecoderSolution:
    mn = samples.grid.mn
    n_t = samples.n_t
    slots = mu_slots(layout)
    t = len(layout.single_streams()) * mn  # shared streams contribute zero gap
    p_bf = np.zeros((layout.num_streams, n_t), dtype=complex)
    return PrecoderSolution(
        p_bf=p_bf,
        mu=np.zeros(len(slots)),
        mu_slots=tuple(slots),
        psi=[s.psi.copy() for s in layout.streams],
        objective_trace=[float(t)],
        converged=True,
        iterations=0,
        layout=layout,
        records=[],
    )


def alternating_optimize(
    samples: SampleSet,
    layout: StreamLayout,
    p_t: float,
    cfg: AoConfig | None = None,
    noise_var: float = 1.0,
) -> PrecoderSolution:
    """Run the alternating optimization on a conditional channel sample set.

    Stops when the objective improvement falls below ``cfg.epsilon`` or after
    ``cfg.max_iters`` iterations; the returned trace ends with a refreshed
    evaluation at the final precoders (own MMSE pair, tight multipliers).
    """
    cfg = cfg or AoConfig()
    if layout.num_streams < 1:
        raise ValueError("layout has no streams")
    if p_t <= 0:
        return _zero_power_solution(samples, layout, cfg)

    grid = samples.grid
    mn = grid.mn
    n_t = samples.n_t
    p_bf = _initial_precoders(samples, layout, p_t, cfg)
    psi = [s.psi.copy() for s in layout.streams]
    trace: list[float] = []
    records: list[dict] = []
    mu = np.zeros(len(mu_slots(layout)))
    converged = False
    accurate = True
    iterations = 0

    for k in range(1, cfg.max_iters + 1):
        psi_t = [effective_arrangement(p, grid) for p in psi]
        forms = _compute_forms(samples, p_bf, psi_t, layout, noise_var)
        t_base, mu_base = surrogate_objective(p_bf, forms, layout, psi_t, mn)
        if not np.isfinite(t_base):
            raise SolverError(f"iteration {k}: current point left the feasible region")
        if k == 1:
            trace.append(t_base)
        try:
            p_new, _, qres = precoder_update(forms, layout, psi_t, p_t, mn, n_t, cfg, p_bf)
        except SolverError as exc:
            raise SolverError(f"iteration {k}: {exc}") from exc
        accurate = accurate and qres.accurate
        t_new, mu_new = surrogate_objective(p_new, forms, layout, psi_t, mn)
        if not t_new <= t_base:  # block descent safeguard near convergence
            p_new, t_new, mu_new = p_bf, t_base, mu_base
        if cfg.arrangement_mode != "fixed":
            psi, t_new = arrangement_update(p_new, forms, layout, psi, grid, cfg.arrangement_mode)
            psi_t = [effective_arrangement(p, grid) for p in psi]
            _, mu_new = surrogate_objective(p_new, forms, layout, psi_t, mn)
        p_bf = p_new
        mu = mu_new
        trace.append(t_new)
        iterations = k
        records.append(
            {
                "iteration": k,
                "objective": t_new,
                "power": float(np.sum(np.abs(p_bf) ** 2)),
                "stream_norms": [float(np.linalg.norm(p_bf[j])) for j in range(layout.num_streams)],
            }
        )
        if abs(trace[-1] - trace[-2]) < cfg.epsilon:
            converged = True
            break

    # refreshed evaluation at the final precoders
    psi_t = [effective_arrangement(p, grid) for p in psi]
    forms = _compute_forms(samples, p_bf, psi_t, layout, noise_var)
    t_fin, mu_fin = surrogate_objective(p_bf, forms, layout, psi_t, mn)
    if np.isfinite(t_fin):
        trace.append(t_fin)
        mu = mu_fin

    return PrecoderSolution(
        p_bf=p_bf,
        mu=mu,
        mu_slots=tuple(mu_slots(layout)),
        psi=psi,
        objective_trace=trace,
        converged=converged,
        iterations=iterations,
        layout=layout.with_psi(psi),
        qcqp_accurate=accurate,
        records=records,
    )
