"""gammacell: a desk-scale laboratory for homogenized and geometrically
linearized multi-well energy densities, built on cell-problem minimization.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND, HAVE_NUMBA
from .density import (
    AdmissibilityReport,
    DensitySpec,
    Phase,
    check_admissibility,
    constant_pnorm,
    derive_linearization,
    dist_SO,
    double_well_1d,
    equivalence_metric,
    eval_grad_X,
    family_at,
    linearize,
    linearized_multi_well,
    multi_well,
    polar_correction,
    single_well,
    two_phase_pnorm,
)
from .grid import Field, Grid, assemble_energy, assemble_gradient, build_grid
from .minimize import MultistartError, SolveOptions, SolveResult, minimize, multistart
from .cell import (
    CellJob,
    CellResult,
    HomEstimate,
    addition_trick,
    cell_energy,
    f_hom_estimate,
    oracle_1d_homog,
    v_hom_estimate,
    w_hom_delta,
)
from .envelope import EnvelopeResult, convexify_1d, laminate, qc_cell
from .rigidity import (
    ConstantEstimate,
    GardingEstimate,
    garding_check,
    korn_constant,
    rigidity_ratio,
    two_rotation_field,
    zhang_check,
)
from .xp import (
    ExperimentPlan,
    SweepReport,
    SweepRow,
    plot,
    read_report,
    run_commutability,
    run_diagonal,
    run_equivalence_profile,
    write_report,
)
