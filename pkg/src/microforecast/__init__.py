"""Individual-claim forecasting with marked Poisson processes.

Reporting times form a non-homogeneous Poisson process; every reported claim
carries its own Poisson process of payments. The package fits these
intensities and the conditional delay and amount distributions by maximum
likelihood, simulates future payments by thinning and back-predicts
occurrence times.
"""

from .claims_data import ClaimRecord, Portfolio, counting_path, load_csv, truncate, write_csv
from .cond_dist import CondDistModel
from .errors import (
    DomainError,
    InitializationError,
    InputError,
    MajorantViolation,
    MicroforecastError,
    NumericalError,
    ParameterError,
    ParseError,
    SimulationError,
    ValidationError,
)
from .forecast import (
    OccurrenceIntensity,
    PredictiveDistribution,
    backpredict_counts,
    occurrence_intensity,
    predict_total,
    summarize,
)
from .intensity import CustomIntensity, CustomMarkIntensity, IntensityModel, MarkIntensityModel
from .poisson_fit import FitResult, fit_marks, fit_reporting
from .simulate import RngStream, SimulatedPath, sample_marked, sample_nhpp
from .synth import GroundTruth, generate, generate_holdout

__version__ = "0.1.0"
