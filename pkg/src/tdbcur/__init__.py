"""Implicit low-rank time integration with CUR collocation."""

from .errors import (CapabilityError, ConditioningError, ConfigError,
                     FactorizationError, InputError, MetricError,
                     ModelDefinitionError, SelectionError, StabilityError,
                     StartupError, StepError, TdbCurError)
from .factorization import (LowRankState, TruncationRule, amplification_factor,
                            stable_cur, truncated_svd)
from .fom import (FomIntegrator, exact_linear_propagator, exact_linear_solution,
                  relative_error, rk4_reference)
from .integrator import (CorrectionBasis, StepReport, TdbCurIntegrator,
                         build_correction_basis, integrate, select_columns)
from .models import (AdvectionDiffusion1D, Burgers1D, GrayScott2D, make_model)
from .sampling import SelectionIndices, deim, find_adjacent, oversample, qdeim
from .schemes import SCHEME_NAMES, SchemeSpec, bootstrap_scheme, scheme_table

__version__ = "1.0.0"
