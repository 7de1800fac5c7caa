"""Experiment runner: config ingestion, seeded Monte-Carlo sweeps, CSV output.

Configuration is a flat INI-style text file with fixed sections and keys;
unknown sections or keys are hard errors because silent typos are the main
failure mode of simulation studies.  Seeds follow a counter discipline
(master seed -> draw -> purpose -> user), so channel draws are identical
across strategies and adding a strategy never perturbs them.

Outer Monte-Carlo draws can run in parallel worker processes; the worker
count is capped by the OTFS_RSMA_THREADS environment variable (serial when
unset).  Rows are emitted in deterministic (strategy, power, draw) order, so
reruns produce byte-identical CSV files.
"""

from __future__ import annotations

import configparser
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import STRATEGIES, build_layout
from .channel import (
    CsitModel,
    SampleSet,
    UserChannel,
    csit_error_variance,
    sample_csit_realizations,
    sample_paths,
)
from .optimizer import AoConfig, PrecoderSolution, alternating_optimize
from .qcqp import SolverError
from .signal import PrecoderSet, rate_report, sample_average_rate_matrix
from .transforms import GridConfig

ROW_HEADER = (
    "strategy,Pt_dB,rho,M,N,Nt,I,L,draw,"
    "esr_saf_bits_per_symbol,esr_oos_bits_per_symbol,iters,converged"
)
AGG_HEADER = (
    "strategy,Pt_dB,rho,M,N,Nt,I,L,num_draws,"
    "esr_saf_mean,esr_saf_stderr,esr_oos_mean,esr_oos_stderr"
)
MISMATCH_HEADER = (
    "strategy,Pt_dB,rho,M,N,Nt,I,L,draw,"
    "esr_ideal_on_ideal,esr_ideal_on_real,esr_robust_on_real,"
    "iters_ideal,iters_robust,converged"
)
MISMATCH_AGG_HEADER = (
    "strategy,Pt_dB,rho,M,N,Nt,I,L,num_draws,"
    "esr_ideal_on_ideal_mean,esr_ideal_on_real_mean,esr_robust_on_real_mean"
)

_PURPOSE_CHANNEL = 0
_PURPOSE_TRAIN = 1
_PURPOSE_EVAL = 2


class ConfigError(Exception):
    """Invalid or unknown configuration content (maps to exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed view of a parsed configuration file."""

    # [grid]
    m: int = 4
    n: int = 4
    delta_f_hz: float = 480e3
    # [system]
    n_t: int = 2
    num_users: int = 2
    noise_var: float = 1.0
    # [channel]
    num_nlos: tuple[int, ...] = (2,)
    rician_db: float = 10.0
    max_delay_fraction: float = 0.5
    satellite_speed_mps: float = 7.58e3
    carrier_freq_hz: float = 7.6e9
    # [csit]
    rho: float = 0.7
    pilot_snr_db: float = 30.0
    error_var: float | str = "literal"
    num_samples: int = 1000
    # [optimizer]
    epsilon: float = 1e-4
    max_iters: int = 50
    qcqp_gap_tol: float = 1e-8
    qcqp_feas_tol: float = 1e-9
    arrangement_mode: str = "fixed"
    common_power_fraction: float = 0.5
    # [experiment]
    strategies: tuple[str, ...] = ("rsma", "sdma")
    pt_db: tuple[float, ...] = (10.0, 15.0, 20.0, 25.0, 30.0)
    num_draws: int = 100
    master_seed: int = 1
    out_dir: str = "results"

    def nlos_for_user(self, user: int) -> int:
        if len(self.num_nlos) == 1:
            return self.num_nlos[0]
        return self.num_nlos[user]

    def ao_config(self) -> AoConfig:
        return AoConfig(
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            qcqp_gap_tol=self.qcqp_gap_tol,
            qcqp_feas_tol=self.qcqp_feas_tol,
            arrangement_mode=self.arrangement_mode,
            common_power_fraction=self.common_power_fraction,
        )

    def grid(self) -> GridConfig:
        return GridConfig(self.m, self.n, self.delta_f_hz)


def _parse_int(raw: str) -> int:
    return int(raw)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(","))


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(","))


def _parse_strategies(raw: str) -> tuple[str, ...]:
    vals = tuple(tok.strip().lower() for tok in raw.split(",") if tok.strip())
    for v in vals:
        if v not in STRATEGIES:
            raise ValueError(f"unknown strategy {v!r}")
    return vals


def _parse_error_var(raw: str):
    token = raw.strip().lower()
    if token in ("literal", "inverse"):
        return token
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw.strip()


_SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"m": (_parse_int,), "n": (_parse_int,), "delta_f_hz": (_parse_float,)},
    "system": {
        "n_t": (_parse_int,),
        "num_users": (_parse_int,),
        "noise_var": (_parse_float,),
    },
    "channel": {
        "num_nlos": (_parse_int_list,),
        "rician_db": (_parse_float,),
        "max_delay_fraction": (_parse_float,),
        "satellite_speed_mps": (_parse_float,),
        "carrier_freq_hz": (_parse_float,),
    },
    "csit": {
        "rho": (_parse_float,),
        "pilot_snr_db": (_parse_float,),
        "error_var": (_parse_error_var,),
        "num_samples": (_parse_int,),
    },
    "optimizer": {
        "epsilon": (_parse_float,),
        "max_iters": (_parse_int,),
        "qcqp_gap_tol": (_parse_float,),
        "qcqp_feas_tol": (_parse_float,),
        "arrangement_mode": (_parse_str,),
        "common_power_fraction": (_parse_float,),
    },
    "experiment": {
        "strategies": (_parse_strategies,),
        "pt_db": (_parse_float_list,),
        "num_draws": (_parse_int,),
        "master_seed": (_parse_int,),
        "out_dir": (_parse_str,),
    },
}


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    checks = [
        (cfg.m >= 1, "grid.m must be >= 1"),
        (cfg.n >= 1, "grid.n must be >= 1"),
        (cfg.delta_f_hz > 0, "grid.delta_f_hz must be positive"),
        (cfg.n_t >= 1, "system.n_t must be >= 1"),
        (cfg.num_users >= 1, "system.num_users must be >= 1"),
        (cfg.noise_var > 0, "system.noise_var must be positive"),
        (all(q >= 1 for q in cfg.num_nlos), "channel.num_nlos entries must be >= 1"),
        (
            len(cfg.num_nlos) in (1, cfg.num_users),
            "channel.num_nlos must have one entry or one per user",
        ),
        (0.0 <= cfg.rho <= 1.0, "csit.rho must be in [0, 1]"),
        (cfg.num_samples >= 1, "csit.num_samples must be >= 1"),
        (cfg.epsilon > 0, "optimizer.epsilon must be positive"),
        (cfg.max_iters >= 1, "optimizer.max_iters must be >= 1"),
        (
            cfg.arrangement_mode in ("fixed", "greedy-flip", "exhaustive"),
            "optimizer.arrangement_mode must be fixed, greedy-flip or exhaustive",
        ),
        (len(cfg.pt_db) >= 1, "experiment.pt_db must not be empty"),
        (len(cfg.strategies) >= 1, "experiment.strategies must not be empty"),
        (cfg.num_draws >= 1, "experiment.num_draws must be >= 1"),
    ]
    if isinstance(cfg.error_var, float) and cfg.error_var < 0:
        raise ConfigError("csit.error_var must be >= 0")
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse a configuration string; unknown sections/keys are hard errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            parse = _SCHEMA[section][key][0]
            try:
                values[key] = parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"invalid value for {section}.{key}: {raw!r} ({exc})") from exc
    return _validate(ExperimentConfig(**values))


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def config_to_text(cfg: ExperimentConfig) -> str:
    """Render a config back to its file form (parse(config_to_text(c)) == c)."""

    def fmt(v) -> str:
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, tuple):
            return ",".join(fmt(x) for x in v)
        return str(v)

    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key in keys:
            out.write(f"{key} = {fmt(getattr(cfg, key))}\n")
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Seeded pipeline pieces
# ---------------------------------------------------------------------------

def _db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)

def _error_variance(cfg: ExperimentConfig, num_nlos: int) -> float:
    if isinstance(cfg.error_var, float):
        return cfg.error_var
    pilot = _db_to_linear(cfg.pilot_snr_db)
    if cfg.error_var == "literal":
        return csit_error_variance(cfg.rho, pilot, num_nlos)
    # "inverse": residual error shrinks with pilot SNR and grows as the
    # estimate decorrelates
    return cfg.rho**2 / pilot + (1.0 - cfg.rho**2) / num_nlos


def _draw_estimates(cfg: ExperimentConfig, grid: GridConfig, draw: int) -> list[UserChannel]:
    rician = _db_to_linear(cfg.rician_db)
    estimates = []
    for user in range(cfg.num_users):
        seed = np.random.SeedSequence([cfg.master_seed, draw, _PURPOSE_CHANNEL, user])
        paths = sample_paths(
            grid,
            rician,
            cfg.nlos_for_user(user),
            seed,
            max_delay_fraction=cfg.max_delay_fraction,
            satellite_speed=cfg.satellite_speed_mps,
            carrier_freq=cfg.carrier_freq_hz,
        )
        estimates.append(UserChannel.assemble(grid, cfg.n_t, paths, rician, cfg.noise_var))
    return estimates


def _conditional_samples(
    cfg: ExperimentConfig,
    grid: GridConfig,
    estimates: list[UserChannel],
    draw: int,
    purpose: int,
) -> SampleSet:
    pilot = _db_to_linear(cfg.pilot_snr_db)
    heff = []
    seeds = []
    for user, est in enumerate(estimates):
        csit = CsitModel(
            cfg.rho, pilot, _error_variance(cfg, cfg.nlos_for_user(user)), cfg.num_samples
        )
        seed = (cfg.master_seed, draw, purpose, user)
        heff.append(sample_csit_realizations(est, csit, list(seed)))
        seeds.append(seed)
    return SampleSet(grid, cfg.n_t, heff, tuple(seeds))


def _layout_for(cfg: ExperimentConfig, strategy: str, estimates: list[UserChannel]):
    gains = [float(np.linalg.norm(est.effective_dd())) for est in estimates]
    return build_layout(strategy, cfg.num_users, cfg.m * cfg.n, gains)


def evaluate_solution(
    solution: PrecoderSolution,
    sample_set: SampleSet,
    p_t: float,
    noise_var: float,
    use_optimizer_split: bool = False,
) -> float:
    """Sum rate (bits/symbol) of a solution on a channel sample set.

    With ``use_optimizer_split`` the common-rate shares come from the
    optimizer's multipliers (valid on the training set); otherwise the
    min-rate sharing policy is applied, which is the right out-of-sample
    estimate.
    """
    grid = sample_set.grid
    pset = PrecoderSet(solution.p_bf, p_t)
    avg = sample_average_rate_matrix(sample_set.heff, pset, solution.layout, grid, noise_var)
    mu = None
    if use_optimizer_split:
        mu_users = solution.common_mu()
        if mu_users is not None:
            mu = mu_users / grid.mn
    report = rate_report(avg, solution.layout, grid.mn, mu=mu)
    return report.sum_rate


# ---------------------------------------------------------------------------
# Standard experiment
# ---------------------------------------------------------------------------

def _run_standard_task(task: tuple) -> dict:
    cfg, strategy, pt_db, draw = task
    grid = cfg.grid()
    p_t = _db_to_linear(pt_db)
    estimates = _draw_estimates(cfg, grid, draw)
    layout = _layout_for(cfg, strategy, estimates)
    train = _conditional_samples(cfg, grid, estimates, draw, _PURPOSE_TRAIN)
    solution = alternating_optimize(train, layout, p_t, cfg.ao_config(), cfg.noise_var)
    esr_saf = evaluate_solution(solution, train, p_t, cfg.noise_var, use_optimizer_split=True)
    eval_set = _conditional_samples(cfg, grid, estimates, draw, _PURPOSE_EVAL)
    esr_oos = evaluate_solution(solution, eval_set, p_t, cfg.noise_var)
    return {
        "strategy": strategy,
        "Pt_dB": float(pt_db),
        "rho": cfg.rho,
        "M": cfg.m,
        "N": cfg.n,
        "Nt": cfg.n_t,
        "I": cfg.num_users,
        "L": cfg.num_samples,
        "draw": draw,
        "esr_saf_bits_per_symbol": esr_saf,
        "esr_oos_bits_per_symbol": esr_oos,
        "iters": solution.iterations,
        "converged": solution.converged,
    }


def _worker_count() -> int:
    raw = os.environ.get("OTFS_RSMA_THREADS", "")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_tasks(tasks: list[tuple], worker) -> list[dict]:
    workers = min(_worker_count(), len(tasks))
    if workers <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks))


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _write_csv(path, header: str, rows: list[dict]) -> None:
    cols = header.split(",")
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row[c]) for c in cols) + "\n")


def _aggregate(rows: list[dict], value_cols: list[str], with_stderr: bool) -> list[dict]:
    keys: list[tuple] = []
    grouped: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["strategy"], row["Pt_dB"])
        if key not in grouped:
            grouped[key] = []
            keys.append(key)
        grouped[key].append(row)
    out = []
    for key in keys:
        group = grouped[key]
        first = group[0]
        agg = {
            k: first[k] for k in ("strategy", "Pt_dB", "rho", "M", "N", "Nt", "I", "L")
        }
        agg["num_draws"] = len(group)
        for col in value_cols:
            vals = np.array([r[col] for r in group], dtype=float)
            agg[f"{col.replace('_bits_per_symbol', '')}_mean"] = float(np.mean(vals))
            if with_stderr:
                stderr = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                agg[f"{col.replace('_bits_per_symbol', '')}_stderr"] = stderr
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> tuple[list[dict], list[dict]]:
    """Run the seeded sweep over (strategy, transmit power, draw).

    Writes ``results.csv`` (one row per task) and ``results_agg.csv`` (means
    and standard errors per strategy/power cell) under the output directory
    and returns the rows.
    """
    out_dir = cfg.out_dir if out_dir is None else out_dir
    tasks = [
        (cfg, strategy, pt, draw)
        for strategy in cfg.strategies
        for pt in cfg.pt_db
        for draw in range(cfg.num_draws)
    ]
    rows = _run_tasks(tasks, _run_standard_task)
    agg = _aggregate(rows, ["esr_saf_bits_per_symbol", "esr_oos_bits_per_symbol"], True)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "results.csv"), ROW_HEADER, rows)
        _write_csv(os.path.join(out_dir, "results_agg.csv"), AGG_HEADER, agg)
    return rows, agg


# ---------------------------------------------------------------------------
# Model-mismatch experiment
# ---------------------------------------------------------------------------

def _run_mismatch_task(task: tuple) -> dict:
    cfg, strategy, pt_db, draw = task
    grid = cfg.grid()
    p_t = _db_to_linear(pt_db)
    estimates = _draw_estimates(cfg, grid, draw)
    ideal_estimates = [est.with_integer_bins() for est in estimates]
    layout = _layout_for(cfg, strategy, estimates)

    train_real = _conditional_samples(cfg, grid, estimates, draw, _PURPOSE_TRAIN)
    train_ideal = _conditional_samples(cfg, grid, ideal_estimates, draw, _PURPOSE_TRAIN)
    eval_real = _conditional_samples(cfg, grid, estimates, draw, _PURPOSE_EVAL)
    eval_ideal = _conditional_samples(cfg, grid, ideal_estimates, draw, _PURPOSE_EVAL)

    sol_robust = alternating_optimize(train_real, layout, p_t, cfg.ao_config(), cfg.noise_var)
    sol_ideal = alternating_optimize(train_ideal, layout, p_t, cfg.ao_config(), cfg.noise_var)

    return {
        "strategy": strategy,
        "Pt_dB": float(pt_db),
        "rho": cfg.rho,
        "M": cfg.m,
        "N": cfg.n,
        "Nt": cfg.n_t,
        "I": cfg.num_users,
        "L": cfg.num_samples,
        "draw": draw,
        "esr_ideal_on_ideal": evaluate_solution(sol_ideal, eval_ideal, p_t, cfg.noise_var),
        "esr_ideal_on_real": evaluate_solution(sol_ideal, eval_real, p_t, cfg.noise_var),
        "esr_robust_on_real": evaluate_solution(sol_robust, eval_real, p_t, cfg.noise_var),
        "iters_ideal": sol_ideal.iterations,
        "iters_robust": sol_robust.iterations,
        "converged": sol_ideal.converged and sol_robust.converged,
    }


def mismatch_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> tuple[list[dict], list[dict]]:
    """Optimize under the integer-bin idealized model and score it against the
    fractional model, next to the robust (fractional-model) design."""
    out_dir = cfg.out_dir if out_dir is None else out_dir
    tasks = [
        (cfg, strategy, pt, draw)
        for strategy in cfg.strategies
        for pt in cfg.pt_db
        for draw in range(cfg.num_draws)
    ]
    rows = _run_tasks(tasks, _run_mismatch_task)
    agg = _aggregate(
        rows, ["esr_ideal_on_ideal", "esr_ideal_on_real", "esr_robust_on_real"], False
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "mismatch.csv"), MISMATCH_HEADER, rows)
        _write_csv(os.path.join(out_dir, "mismatch_agg.csv"), MISMATCH_AGG_HEADER, agg)
    return rows, agg
