"""Latent-class IRT models with non-ignorable missingness.

Finite-mixture graded-response models where attempting an item is itself an
indicator loading on the latent trait the item measures, so skipped items stay
informative. Estimation by EM over discrete support points, with
covariate-dependent class membership.
"""

from .exceptions import (
    DataFormatError,
    EnumerationTooLargeError,
    InvalidDesignError,
    InvalidOptionsError,
    InvalidParameterError,
    LcirtError,
    ZeroVarianceError,
)
from .model import (
    ANSWERED,
    SKIPPED,
    STRUCTURAL_MISSING,
    ConstraintScheme,
    Dataset,
    ItemDesign,
    LatentConfig,
    ParameterSet,
    ValidationReport,
    build_constraints,
    canonicalize,
    count_free_parameters,
    default_anchors,
    validate_design,
)
from .measurement import (
    CategoryDistribution,
    grm_category,
    grm_cumulative,
    indicator_prob,
    log_subject_class_prob,
    subject_class_prob,
)
from .structural import class_weight_table, class_weights_u, class_weights_v
from .estimation import (
    FitOptions,
    FitResult,
    PosteriorWeights,
    complete_data_gradients,
    e_step,
    fit,
    init_params,
    loglik_gradient,
    m_step,
    marginal_loglik,
    pack_gradient,
)
from .inference import (
    Classification,
    PredictionTables,
    SelectCell,
    StandardErrorReport,
    TestReport,
    all_pass_probability,
    average_class_probs,
    bic,
    chi2_sf,
    delta_method_se,
    lrt,
    posterior_classify,
    predict_item_probs,
    select_grid,
    standard_errors,
    standardize,
    standardized_report,
    test_group_homogeneity,
    test_ignorability,
)
from .simulate import (
    brute_force_dataset_loglik,
    brute_force_pattern_probs,
    brute_force_subject_logprob,
    generate,
)

__version__ = "0.1.0"
