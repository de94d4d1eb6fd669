from .errors import (LabError, GridError, ConvexityError, IntegrabilityError, SlopeMismatchError,
                     SolverDivergenceError, GaugeError, ConfigError)
from .radial_model import (Grid, RadialWeight, Density, WeightKind, build_grid, canonical_weight,
                           fubini_study, football, divisor_background, affine, ma_density,
                           volume_density, ricci_density, save_weight, load_weight)
from .twister import TwisterKind, TwisterSpec, no_twister, smooth_background, smoothing_profile, conical
from .functionals import (FunctionalReport, PropernessReport, energy_E, functional_F, aubin_J,
                          ding_value, ding_first_variation, ding_derivative, properness_scan,
                          twister_independence_constants, epsilon_monotonicity)
from .einstein import (GaugeMode, SolverConfig, KESolution, solve_twisted_ke, solve_twisted_ke_report,
                       ke_residual, continuity_path, cds_path, cone_limit_study, uniqueness_experiment,
                       normalize_automorphism, barycenter)
from .geodesics import (GeodesicPath, AuditRow, DefectReport, LegendreDual, EpsilonGeodesicSolver, time_grid,
                        legendre_dual, legendre_inverse, exact_geodesic, epsilon_geodesic, geodesic_defect,
                        continued_epsilon_geodesic, convexity_audit, path_energy_budget, budget_within_fit,
                        epsilon_convergence)
from .spectral import (SpectralPair, FieldReport, weighted_laplacian_form, lowest_spectrum, delta_tau,
                       k_gap, extract_field, twister_kernel_check, eigenfunction_alignment)
