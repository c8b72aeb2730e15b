"""Numerical Bergman kernels of high tensor powers on model Kähler curves."""
from .errors import *  # noqa: F401,F403
from .geometry import (CurvatureData, KaehlerModel, MetricData, ModelKind, build_model,
                       geodesic_distance, metric_at, scalar_curvature)
from .sections import SectionBasis, basis_cp1, basis_quotient, basis_torus, evaluate_sections
from .bergman import (GramFactorization, KernelSample, QuadratureGrid, bergman_diagonal,
                      bergman_offdiag, build_grid, gram, group_averaged_kernel, orbifold_kernel)
from .model import (CurvatureScalars, ModelSpectrum, b0u, b1, j2u_closed, j2u_volterra,
                    kaehler_spectrum, model_bergman, model_heat_kernel, q0_apply, q2_apply_gaussian)
from .asymptotics import (DecayScan, ExpansionFit, check_b1, fit_expansion, fubini_study_pullback,
                          offdiag_decay_scan, orbifold_profile)

__version__ = "0.1.0"
