import numpy as np
import pytest

import oracles
from dfmbench import metrics
from dfmbench.flow import FlowParams, assemble_flow, solve_flow
from dfmbench.grid import FractureRect, PatchSpec, build_cartesian_grid
from dfmbench.metrics import (
    Curve,
    LineProbe,
    MetricsError,
    RegionProbe,
    integrate_concentration,
    percentile_spread,
    sample_over_line,
)
from dfmbench.transport import TransportParams, run_transport

UNIT = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
FULL = ((0.0, 1.0), (0.0, 1.0))


def solved_instance():
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
    sol = solve_flow(grid, flow, solver="lu")
    tr = TransportParams(porosity={"3d": 0.2, "2d": 0.4}, dt=0.1, n_steps=20,
                         inlet_c={"in": 1.0})
    state = run_transport(grid, sol, tr, solver="lu")
    return grid, sol, tr, state


class TestCurve:
    def test_rejects_nonincreasing_abscissa(self):
        with pytest.raises(MetricsError):
            Curve(np.array([0.0, 0.5, 0.5]), np.zeros(3))

    def test_rejects_length_mismatch(self):
        with pytest.raises(MetricsError):
            Curve(np.arange(3.0), np.zeros(2))


class TestSampleOverLine:
    def test_staircase_values(self):
        grid = build_cartesian_grid(UNIT, (4, 1, 1))
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        order = np.argsort(grid.matrix.centers[:, 0])
        field = np.empty(4)
        field[order] = vals
        probe = LineProbe((0.0, 0.5, 0.5), (1.0, 0.5, 0.5), n=9, id="x")
        curve = sample_over_line(grid, field, probe)
        assert curve.arclength == pytest.approx(1.0)
        # piecewise constant: each quarter reads its cell value; points on
        # shared faces resolve to the lower-index (left) cell
        assert list(curve.y) == [1, 1, 1, 2, 2, 3, 3, 4, 4]

    def test_snap_to_fracture_plane(self):
        grid, sol, tr, state = solved_instance()
        probe = LineProbe((0.5, 0.0, 0.5), (0.5, 1.0, 0.5), n=5,
                          sd_id="fracture_0", id="f")
        curve = sample_over_line(grid, state.conc_of("fracture_0"), probe)
        assert curve.y.size == 5

    def test_too_far_from_subdomain(self):
        grid, sol, tr, state = solved_instance()
        probe = LineProbe((0.9, 0.0, 0.5), (0.9, 1.0, 0.5), n=5,
                          sd_id="fracture_0", id="f")
        with pytest.raises(MetricsError, match="farther"):
            sample_over_line(grid, state.conc_of("fracture_0"), probe,
                             snap_tol=0.01)

    def test_zero_length_rejected(self):
        grid = build_cartesian_grid(UNIT, (2, 2, 2))
        with pytest.raises(MetricsError, match="zero length"):
            sample_over_line(grid, np.zeros(8),
                             LineProbe((0.5,) * 3, (0.5,) * 3))


class TestPercentileSpread:
    def test_two_constant_curves(self):
        x = np.linspace(0.0, 1.0, 11)
        lo = Curve(x, np.zeros(11))
        hi = Curve(x, np.ones(11))
        rep = percentile_spread([lo, hi])
        assert np.allclose(rep.p10, 0.1)
        assert np.allclose(rep.p90, 0.9)
        assert np.allclose(rep.mean, 0.5)
        assert rep.spread_area == pytest.approx(0.8)
        assert rep.area_ratio == pytest.approx(1.6)

    @pytest.mark.parametrize("k", [2, 3, 7])
    def test_identical_copies_have_zero_spread(self, k):
        x = np.linspace(0.0, 1.0, 5)
        c = Curve(x, np.array([1.0, 2.0, 0.5, 3.0, 1.5]))
        rep = percentile_spread([c] * k)
        assert rep.spread_area == 0.0
        assert rep.area_ratio == 0.0

    def test_abscissa_mismatch_rejected(self):
        a = Curve(np.linspace(0, 1, 5), np.zeros(5))
        b = Curve(np.linspace(0, 2, 5), np.zeros(5))
        with pytest.raises(MetricsError, match="abscissa"):
            percentile_spread([a, b])

    def test_single_curve_rejected(self):
        c = Curve(np.linspace(0, 1, 5), np.zeros(5))
        with pytest.raises(MetricsError):
            percentile_spread([c])


class TestIntegrateConcentration:
    def test_weighted_total_matches_independent_mass(self):
        """Whole-domain weighted integral equals pore-volume dot
        concentration computed by the oracle helpers."""
        grid, sol, tr, state = solved_instance()
        probe = RegionProbe(id="all", weighting="weighted")
        total = integrate_concentration(grid, state, probe, tr)
        pv = oracles.pore_volumes(grid, tr.porosity)
        assert total == pytest.approx(float(pv @ state.conc), rel=1e-12)

    def test_mean_of_constant_field_is_constant(self):
        grid, sol, tr, state = solved_instance()
        state.conc[:] = 0.37
        probe = RegionProbe(id="m", dim=3, weighting="mean")
        assert integrate_concentration(grid, state, probe) == \
            pytest.approx(0.37, rel=1e-14)

    def test_box_restriction(self):
        grid, sol, tr, state = solved_instance()
        probe = RegionProbe(id="left", dim=3,
                            box=((0.0, 0.5), (0.0, 1.0), (0.0, 1.0)),
                            weighting="mean")
        left = integrate_concentration(grid, state, probe)
        probe_all = RegionProbe(id="all", dim=3, weighting="mean")
        assert left > integrate_concentration(grid, state, probe_all)

    def test_empty_selection_rejected(self):
        grid, sol, tr, state = solved_instance()
        probe = RegionProbe(id="none", tag="no-such-tag")
        with pytest.raises(MetricsError, match="no cells"):
            integrate_concentration(grid, state, probe)


class TestFluxReports:
    def test_totals_balance(self):
        grid, sol, tr, state = solved_instance()
        rep = metrics.boundary_flux_report(grid, sol)
        assert rep.total_out == pytest.approx(-rep.total_in, rel=1e-12)
        assert rep.totals["in"] < 0.0 < rep.totals["out"]
        assert metrics.outflow_ratio(rep, "out") == pytest.approx(1.0)

    def test_outlet_concentration_flux_by_hand(self):
        grid, sol, tr, state = solved_instance()
        sd = grid.matrix
        sel = sd.bface_patch == "out"
        expect = float(np.maximum(sol.boundary_flux[0][sel], 0.0)
                       @ state.conc_of(0)[sd.bface_cell[sel]])
        got = metrics.outlet_concentration_flux(grid, sol, state, "out")
        assert got == pytest.approx(expect, rel=1e-14)


class TestCostReport:
    def test_fields(self):
        grid, sol, tr, state = solved_instance()
        A, _, _ = assemble_flow(grid, FlowParams(
            matrix_k={"matrix": 1.0}, tangential_k={"fracture_0": 1.0},
            normal_k={"fracture_0": 2e6}))
        rep = metrics.cost_report(grid, A)
        assert rep["dofs"] == sum(sd.n_cells for sd in grid.subdomains)
        assert rep["cells"] == grid.stats()
        # independent structural count from the dense pattern
        assert rep["nnz"] == int(np.count_nonzero(A.to_dense()))
