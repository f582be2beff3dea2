"""Monte Carlo benchmarking engine for binary prediction methods.

Implements a pre-registered simulation protocol end to end (data generation,
five prediction methods, six estimands, replication sizing, contrast
analysis) plus an executable lab for questionable research practices applied
to completed studies.
"""

__version__ = "0.1.0"

from .analysis import (  # noqa: F401
    ContrastRow,
    SummaryRow,
    figure2_table,
    pairwise_contrasts,
    rank_by_pvalue,
    summarize,
)
from .datagen import (  # noqa: F401
    CANONICAL_TWEAK,
    CoefficientSet,
    Dataset,
    GridDesign,
    ScenarioSpec,
    TweakConfig,
    build_scenario_grid,
    generate_dataset,
    make_scenario,
    parse_scenario_id,
    sample_coefficients,
    sample_equicorrelated_normal,
    tweak_dgp,
)
from .engine import (  # noqa: F401
    ReplicationPlan,
    ReplicationRecord,
    StudyProtocol,
    StudyResult,
    compute_required_replications,
    estimate_worst_case_variance,
    failure_report,
    plan_from_pilot,
    run_replication,
    run_scenario,
    run_study,
)
from .forest import (  # noqa: F401
    Forest,
    ForestParams,
    ImportanceVector,
    fit_random_forest,
    gini_importance,
    predict_forest,
)
from .iohub import (  # noqa: F401
    RecordSink,
    bundled_protocol_path,
    parse_protocol,
    protocol_hash,
    read_records,
    serialize_protocol,
)
from .metrics import (  # noqa: F401
    MetricSet,
    auc,
    brier,
    calibration,
    compute_metric_set,
    log_score,
    oracle_correct,
    scaled_brier,
)
from .penalized import (  # noqa: F401
    ConvergenceError,
    CvSelection,
    FittedModel,
    FittedPredictor,
    MethodConfig,
    MethodStreams,
    PenaltySpec,
    adaptive_weights_from_glm,
    ainet_weights_from_importance,
    cross_validate_en,
    fit_logistic_irls,
    fit_method,
    fit_weighted_elastic_net,
    make_lambda_path,
    predict_proba,
    soft_threshold,
)
from .qrp import (  # noqa: F401
    OptionalStoppingResult,
    QrpAction,
    SeedHuntResult,
    apply_alter_dgp,
    apply_remove_competitor,
    apply_selective_report,
    objective_units,
    optional_stopping_trace,
    parse_objective,
    seed_hunt,
)
from .streams import PURPOSES, RngStream, derive_stream  # noqa: F401
