"""PoD-TPI dose finding: decision engine, trial simulator, conduct service."""

from .core import (
    ChronologyError,
    Decision,
    DesignParams,
    DoseTally,
    Event,
    EventType,
    OutcomeStatus,
    PatientRecord,
    PayloadError,
    TrialError,
    TrialState,
    TrialStatus,
    apply_event,
    new_trial,
    replay,
    tally,
)
from .engine import (
    DecisionRecord,
    Recommendation,
    SafetyAssessment,
    apply_safety_rules,
    assess_safety,
    compute_distribution,
    decision_point,
    make_table,
    point_mass_distribution,
    recommend,
    step_trial,
)
from .simulator import (
    SETTINGS,
    AccrualToxSetting,
    CampaignResult,
    Metrics,
    ScenarioSpec,
    TrialResult,
    classify_inconsistency,
    load_scenarios,
    run_oc,
    simulate_trial,
    true_mtd,
    weibull_params,
)
from .mtpi2 import (
    DecisionTable,
    IntervalPartition,
    ModelPosterior,
    build_partition,
    decide,
    decision_table,
    model_posterior,
    prob_exceeds_target,
)
from .mtdselect import IsotonicFit, MtdReport, finalize, pava, posterior_mean_var, select_mtd
from .toxmodel import (
    DecisionDistribution,
    MCMCConfig,
    PosteriorDraws,
    SPosterior,
    TimeGrid,
    ToxData,
    beta_fraction,
    conditional_dlt_prob,
    log_likelihood,
    pod,
    poisson_binomial_pmf,
    s_posterior,
    sample_posterior,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
