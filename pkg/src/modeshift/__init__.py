"""Causal analysis of fare-free transport offers on travel mode choice."""

from .data import (
    COLUMNS,
    ESTIMATION_COVARIATES,
    Dataset,
    FilterConfig,
    GuestRecord,
    apply_eligibility_filters,
    parse_dataset,
    serialize_dataset,
    summarize_by_treatment,
)
from .errors import (
    CollinearityError,
    EmptyGroupError,
    EstimationError,
    ModeShiftError,
    SeparationError,
    ValidationError,
)
from .estimates import EffectEstimate
from .forest import (
    CausalForestModel,
    ForestConfig,
    estimate_ate_forest,
    fit_causal_forest,
    load_model,
    oob_cate,
    predict_cate,
    save_model,
)
from .impact import attribution_summary, co2_savings_per_switcher
from .impute import impute_chained, pool_rubin
from .logit import LogitModel, fit_logit, predict_proba
from .psm import bootstrap_inference, estimate_ate_psm, match_details, trim_common_support
from .synthdata import DgpConfig, calibrated_config, generate_population, true_ate

__version__ = "0.1.0"
