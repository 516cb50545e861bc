"""Off-policy evaluation and learning for two-stage matching markets."""

from .core import (
    ConfigurationError,
    ContextSet,
    Environment,
    LoggedDataset,
    Policy,
    RewardModel,
    ValidationError,
    importance_weights,
    true_policy_value,
)
from .synth import (
    SyntheticEnvSpec,
    SyntheticParams,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)
from .models import FitConfig, build_pair_features, fit_logging_policy, fit_reward_models
from .estimators import (
    ESTIMATOR_IDS,
    EmbeddingMap,
    EstimatorInput,
    cluster_seekers,
    estimate,
    estimate_dips,
    estimate_dm,
    estimate_dpr,
    estimate_dr,
    estimate_extended_mips,
    estimate_extended_switch_dr,
    estimate_ips,
    estimate_mips,
    estimate_switch_dr,
)
from .analytic import (
    AnalyticReport,
    bias_dips,
    bias_dips_estimated_pi0,
    bias_dpr_estimated_pi0,
    bias_ips_estimated_pi0,
    enumerate_profile,
    mc_estimates,
    monte_carlo_profile,
    variance_dips,
    variance_dpr,
    variance_dr,
    variance_ips,
    variance_reduction_bound,
)
from .opl import (
    GRADIENT_ESTIMATORS,
    LearnConfig,
    SoftmaxPolicyParams,
    grad_baseline_pg,
    grad_dips_pg,
    grad_dpr_pg,
    learn_policy,
    pair_feature_tensor,
    policy_probs,
    score_function,
)
from .harness import (
    ExperimentReport,
    OplConfig,
    OplReport,
    SweepConfig,
    SweepRow,
    derive_seed,
    error_rate,
    run_opl_experiment,
    run_sweep,
)
from .io import export_logged_data, export_report, ingest_logged_data, load_report
from .plots import emit_opl_plot, emit_plots

__version__ = "0.1.0"
