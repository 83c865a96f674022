import numpy as np
import pytest

import oracles
from dfmbench.flow import FlowParams, solve_flow
from dfmbench.grid import FractureRect, PatchSpec, build_cartesian_grid
from dfmbench.transport import (
    TransportError,
    TransportParams,
    assemble_transport,
    run_transport,
)

UNIT = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
FULL = ((0.0, 1.0), (0.0, 1.0))


def instance_column():
    """1D-like column of 8 matrix cells, no fractures."""
    patches = [
        PatchSpec("in", "dirichlet", 1.0, ((-.001, .001), (0, 1), (0, 1))),
        PatchSpec("out", "dirichlet", 0.0, ((.999, 1.001), (0, 1), (0, 1))),
    ]
    grid = build_cartesian_grid(UNIT, (8, 1, 1), patch_specs=patches)
    flow = FlowParams(matrix_k={"matrix": 1.0})
    tr = TransportParams(porosity={"3d": 0.25}, dt=0.05, n_steps=100,
                         inlet_c={"in": 1.0})
    return grid, flow, tr


def instance_conductive():
    """4x2x2 matrix with a conductive mid-plane fracture: 16 + 4 = 20 dofs."""
    patches = [
        PatchSpec("in", "dirichlet", 1.0, ((-.001, .001), (0, 1), (0, 1))),
        PatchSpec("out", "dirichlet", 0.0, ((.999, 1.001), (0, 1), (0, 1))),
    ]
    grid = build_cartesian_grid(UNIT, (4, 2, 2),
                                fractures=[FractureRect(0, 0.5, FULL)],
                                eps=(1e-2, 1, 1), patch_specs=patches)
    flow = FlowParams(matrix_k={"matrix": 1.0},
                      tangential_k={"fracture_0": 1.0},
                      normal_k={"fracture_0": 2e6})
    tr = TransportParams(porosity={"3d": 0.2, "2d": 0.4}, dt=0.1, n_steps=100,
                         inlet_c={"in": 1.0})
    return grid, flow, tr


def instance_crossing():
    """2x2x2 matrix with crossing x and y fractures and their intersection
    line: 8 + 4 + 4 + 2 = 18 dofs, Neumann inflow."""
    patches = [
        PatchSpec("in", "neumann", -1.0, ((-.001, .001), (0, 1), (0, 1))),
        PatchSpec("out", "dirichlet", 0.0, ((0, 1), (.999, 1.001), (0, 1))),
    ]
    fr = [FractureRect(0, 0.5, FULL), FractureRect(1, 0.5, FULL)]
    grid = build_cartesian_grid(UNIT, (2, 2, 2), fractures=fr,
                                eps=(1e-2, 1e-4, 1), patch_specs=patches)
    flow = FlowParams(matrix_k={"matrix": 1.0},
                      tangential_k={"fracture_0": 100.0, "fracture_1": 100.0,
                                    "line_0": 1.0},
                      normal_k={"fracture_0": 2e6, "fracture_1": 2e6,
                                "line_0": 2e4})
    tr = TransportParams(porosity={"3d": 0.2, "2d": 0.3, "1d": 0.3},
                         dt=0.02, n_steps=100, inlet_c={"in": 0.5})
    return grid, flow, tr


INSTANCES = [instance_column, instance_conductive, instance_crossing]


@pytest.mark.parametrize("make", INSTANCES, ids=lambda f: f.__name__)
class TestAgainstDenseRecurrence:
    def test_final_state_matches(self, make):
        grid, flow, tr = make()
        assert sum(sd.n_cells for sd in grid.subdomains) <= 50
        sol = solve_flow(grid, flow, solver="lu")
        state = run_transport(grid, sol, tr, solver="lu")
        ref = oracles.dense_transport_march(grid, sol, tr)
        assert np.max(np.abs(state.conc - ref)) < 1e-12

    def test_mass_budget_per_step(self, make):
        grid, flow, tr = make()
        sol = solve_flow(grid, flow, solver="lu")
        errors = oracles.mass_budget_errors(grid, sol, tr)
        assert errors.size == tr.n_steps
        assert errors.max() < 1e-9


class TestProperties:
    def test_bounds_and_monotone_filling(self):
        grid, flow, tr = instance_conductive()
        sol = solve_flow(grid, flow, solver="lu")
        states = []
        run_transport(grid, sol, tr, observer=states.append, solver="lu")
        prev = states[0].conc
        for st in states[1:]:
            c = st.conc
            assert c.min() >= -1e-13 and c.max() <= 1.0 + 1e-13
            # a clean-start filling problem is monotone in time cell-wise
            assert np.all(c >= prev - 1e-13)
            prev = c

    def test_observer_call_count_and_times(self):
        grid, flow, tr = instance_column()
        sol = solve_flow(grid, flow, solver="lu")
        times = []
        run_transport(grid, sol, tr, observer=lambda s: times.append(s.time),
                      solver="lu")
        assert len(times) == tr.n_steps + 1
        assert times[0] == 0.0
        assert times[-1] == pytest.approx(tr.dt * tr.n_steps)

    def test_initial_condition_preserved_without_flow(self):
        """Zero boundary drive: concentrations are transported nowhere."""
        patches = [PatchSpec("d", "dirichlet", 0.0,
                             ((-.001, .001), (0, 1), (0, 1)))]
        grid = build_cartesian_grid(UNIT, (3, 1, 1), patch_specs=patches)
        sol = solve_flow(grid, FlowParams(matrix_k={"matrix": 1.0}),
                         solver="lu")
        tr = TransportParams(porosity={"3d": 0.2}, dt=1.0, n_steps=5)
        c0 = np.array([0.3, 0.6, 0.9])
        state = run_transport(grid, sol, tr, c0=c0, solver="lu")
        assert np.allclose(state.conc, c0, atol=1e-13)

    def test_solver_choice_agreement(self):
        grid, flow, tr = instance_crossing()
        sol = solve_flow(grid, flow, solver="lu")
        a = run_transport(grid, sol, tr, solver="lu").conc
        b = run_transport(grid, sol, tr, solver="bicgstab", tol=1e-14).conc
        assert np.max(np.abs(a - b)) < 1e-9


class TestValidation:
    def test_bad_dt_rejected(self):
        with pytest.raises(TransportError):
            TransportParams(porosity={"3d": 0.2}, dt=0.0, n_steps=1)

    def test_missing_porosity(self):
        grid, flow, _ = instance_column()
        sol = solve_flow(grid, flow, solver="lu")
        with pytest.raises(TransportError, match="porosity"):
            assemble_transport(grid, sol, TransportParams(
                porosity={"2d": 0.2}, dt=1.0, n_steps=1))
