"""Black-box estimation of Bayes risk and information leakage."""

__version__ = "0.1.0"

from .core import (Dataset, FormatError, System, ValidationError, check_system,
                   read_channel, read_dataset, sample, split, uniform_prior, validate,
                   write_channel, write_dataset)
from .measures import (LeakageError, LeakageReport, bayes_classifier, bayes_risk,
                       derived_leakages, expected_error, min_entropy_leakage,
                       nn_lower_bound, random_guessing_error)
from .neighbors import (EUCLIDEAN, Metric, NeighborIndex, frequentist_predict,
                        knn_predict, nn_predict)
from .estimators import (EstimateTrace, EstimatorKind, delta_convergence, exact_estimate,
                         exact_trace, forward_estimate, holdout_estimate, kn_schedule,
                         select_estimate)
