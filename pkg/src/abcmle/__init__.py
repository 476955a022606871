"""Approximate maximum likelihood estimation via ABC and kernel density modes."""

from .abc_engine import (
    AbcConfig,
    AbcSample,
    DistanceSpec,
    KernelSpec,
    LikelihoodCurve,
    abc_nearest,
    abc_nearest_sweep,
    abc_rejection,
    abc_rejection_sweep,
    distance,
    kernel_accept,
    likelihood_curve,
    load_sample,
    run_abc,
    run_abc_sweep,
    save_sample,
)
from .amle import AmleConfig, AmleResult, StudyResult, amle_discrete, amle_estimate, amle_from_sample, replicate_study
from .core import (
    Continuous,
    Discrete,
    EventTimes,
    ParameterSpace,
    RealSample,
    RngSeed,
    format_vector,
    in_space,
    parse_vector,
    read_dataset,
    uniform_prior_draw,
    write_dataset,
)
from .density import KdeModel, ModeResult, export_surface, kde_eval, kde_gradient, mean_shift_step, mode_search
from .errors import (
    AmleError,
    ConfigError,
    DegenerateSampleError,
    DimensionError,
    EstimationFailure,
    InsufficientDataError,
    LostTrackError,
    PartialSampleError,
)
from .models import (
    BinomialModel,
    LocationScaleQuantileModel,
    ModelSpec,
    NormalModel,
    StableModel,
    SuperposedGammaModel,
)

__version__ = "0.1.0"
