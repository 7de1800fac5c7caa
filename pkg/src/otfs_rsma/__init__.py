"""Link-level RSMA-OTFS simulator and robust precoder optimizer for LEO
satellite downlinks with fractional delay/Doppler and statistical CSIT."""

from .baselines import STRATEGIES, build_layout
from .channel import (
    CsitModel,
    PathParams,
    SampleSet,
    UserChannel,
    build_sample_set,
    csit_error_variance,
    delay_matrix,
    doppler_matrix,
    effective_dd_channel,
    read_matrix_file,
    sample_csit_realizations,
    sample_paths,
    steering_vector,
    td_channel,
    write_matrix_file,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    config_to_text,
    evaluate_solution,
    mismatch_experiment,
    parse_config,
    parse_config_text,
    run_experiment,
)
from .optimizer import (
    AoConfig,
    PrecoderSolution,
    alternating_optimize,
    arrangement_update,
    precoder_update,
)
from .qcqp import QcqpResult, QuadConstraint, SolverError, solve_qcqp
from .signal import (
    PrecoderSet,
    RateReport,
    Stream,
    StreamLayout,
    effective_precoder,
    instantaneous_rates,
    rate_report,
    received_covariances,
    sample_average_rate_matrix,
    split_common_rate,
)
from .transforms import GridConfig, dd_to_td, dft_matrix, isfft, sfft, sinc, td_to_dd
from .wmmse import (
    EqualizerWeightSet,
    QuadraticForms,
    awmse,
    mmse_equalizer,
    mmse_weight,
    mse_matrix,
    quadratic_forms,
    saf_average,
)

__version__ = "0.1.0"
