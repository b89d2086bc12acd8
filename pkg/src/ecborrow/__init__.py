"""Analysis of randomized trials augmented with external control data.

Eight analysis methods over a shared study-collection model, a parametric
scenario simulator, and a model-free resampling harness for operating
characteristics (type I error, power, bias, rMSE).
"""

from .data import (
    AnalysisResult,
    ArmSummary,
    Dataset,
    PatientRecord,
    StudyCollection,
    ValidationReport,
    arm_summary,
    pool,
    validate_collection,
)
from .errors import (
    EstimationError,
    NonConvergence,
    ParseError,
    SchemaError,
    SeparationError,
    SingularError,
)
from .glm import (
    GlmFit,
    MultinomialFit,
    WaldTest,
    fit_logistic,
    fit_multinomial,
    logistic,
    sandwich_covariance,
    wald_one_sided,
)
from .methods import (
    DEFAULT_CONFIG,
    METHOD_ORDER,
    METHODS,
    MethodConfig,
    fixed_effects,
    glm_rct_only,
    normalize_method_id,
    ps_re,
    pss_re,
    psw,
    random_effects,
    ttp,
    zprop,
)
from .io import (
    OC_HEADER,
    SYNTH_COVARIATES,
    load_manifest_data,
    read_collection_csv,
    read_dataset_csv,
    read_manifest,
    read_oc_csv,
    synth_data,
    write_dataset_csv,
    write_manifest,
    write_oc_csv,
)
from .mixed import (
    ReFit,
    ReSpec,
    estimate_delta1,
    fit_re,
    re_gamma_variance,
    study_marginal_loglik,
    tau_hat_re,
)
from .oc import OcAccumulator, OcRow
from .propensity import (
    StrataBoundaries,
    fit_generalized_ps,
    fit_pairwise_ps,
    fit_trial_membership_ps,
    gps_log_odds_features,
    odds_weights,
    select_stratified_subset,
    stratify_rct,
    stratum_counts,
)
from .resample import (
    DataCollectionManifest,
    ManifestStudy,
    ResampleConfig,
    run_resampling_study,
    spike_effect,
    subsample_trial,
    swap_source,
    true_tau_resample,
)
from .scenarios import (
    SCENARIO_IDS,
    ScenarioDraw,
    ScenarioSpec,
    calibrate_gamma,
    generate_collection,
    run_scenario,
    scenario_spec,
    true_tau,
)
from .streams import substream

__version__ = "0.1.0"
