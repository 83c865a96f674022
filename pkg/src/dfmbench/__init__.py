"""Mixed-dimensional Darcy flow and passive tracer transport in 3D fractured
porous media, with a benchmark harness for four standard test cases."""

from dfmbench.grid import (
    BoundaryPatch,
    FractureRect,
    MixedDimGrid,
    MortarBlock,
    PatchSpec,
    Subdomain,
    build_cartesian_grid,
    build_sheared_grid,
    grid_stats,
)
from dfmbench.flow import (
    FlowParams,
    FlowSolution,
    assemble_flow,
    check_conservation,
    effective_normal_conductivity,
    effective_tangential_conductivity,
    solve_flow,
)
from dfmbench.transport import (
    TransportParams,
    TransportState,
    assemble_transport,
    run_transport,
    step,
)
from dfmbench.sparsela import (
    CsrMatrix,
    SolveReport,
    TripletBuffer,
    solve_bicgstab,
    solve_cg,
    solve_dense_lu,
)

__version__ = "0.1.0"
