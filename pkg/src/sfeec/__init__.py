"""Structure-preserving finite element exterior calculus for Maxwell's equations."""

from .basis import (AnalyticForm, Cochain, FormSpace, build_space, canonical_projection,
                    evaluate_basis, evaluate_cochain, reference_element)
from .dynamics import (FieldState, SplitScheme, UnitSystem, energy, flow_Ha, flow_He,
                       gauss_residual, step, symplectic_check)
from .mesh import (PeriodicMesh, boundary_incidence, generate_cubical_lattice,
                   generate_periodic_triangulation, mesh_diameter)
from .operators import (apply_curl_of_curl, derivative_matrix, factorized_inverse, l2_error,
                        mass_matrix)
from .spai import SparsityPattern, make_pattern, spai_approximate_inverse, stencil_stats

__version__ = "0.1.0"
