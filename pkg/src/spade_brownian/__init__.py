"""Separation estimation of two incoherent sources with spatial-mode
demultiplexing when the sorter drifts out of alignment by Brownian motion."""

from .ensemble import (
    averaged_prob_closed_form,
    averaged_prob_quadrature,
    averaged_probs_closed_form,
    averaged_probs_quadrature,
    normalization_audit,
)
from .errors import DomainError, PrecisionError
from .fisher import (
    FisherResult,
    ScalingSpec,
    fi_direct_imaging,
    fi_spade,
    fi_with_scaling,
    min_resolvable_distance,
    spade_di_crossover,
)
from .montecarlo import ExperimentRecord, empirical_fisher, mle_separation, simulate_cycles
from .optics import ModeIndex, Pose, SystemConfig
from .special import dawson, hyp2f2_1_1_2_5h

__version__ = "0.1.0"
