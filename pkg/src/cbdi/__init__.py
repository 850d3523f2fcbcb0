"""Continuous-state branching processes with drift interaction.

Branching mechanisms, interaction drifts, boundary classification,
Lyapunov certificates, path simulation and first-passage estimators.
"""

__version__ = "0.1.0"

from .errors import (CBDIError, CertificationError, ConfigError, ConsistencyError,  # noqa: E402
                     EmptyMeasureError, NumericalError, SimulationError,
                     UndecidableError)
from .mechanism import (Mechanism, PointMass, ParetoLogTail, TabulatedTail, Zero,  # noqa: E402
                        psi_eval, truncated_moment)
from .drift import Custom, Linear, Logistic, PowerLog  # noqa: E402
from .classifier import classify, moment_criterion, regime_table  # noqa: E402
from .generator import apply_generator, lyapunov_margin, theorem_A_verdict  # noqa: E402
from .simulator import (SimConfig, simulate_coupled, simulate_coupled_ensemble,  # noqa: E402
                        simulate_ensemble, simulate_from_infinity, simulate_path)
from .passage import (cdi_certificate, explosion_probe, first_passage,  # noqa: E402
                      mean_hitting)
