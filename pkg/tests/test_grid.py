import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfmbench.grid import (
    FractureRect,
    PatchSpec,
    apply_patches,
    build_cartesian_grid,
    build_sheared_grid,
)

UNIT = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
FULL = ((0.0, 1.0), (0.0, 1.0))


def three_planes(n):
    fr = [FractureRect(a, 0.5, FULL) for a in range(3)]
    return build_cartesian_grid(UNIT, (n, n, n), fractures=fr,
                                eps=(1e-2, 1e-4, 1e-6))


def nine_fracture_grid(n):
    """The regular nine-fracture network: three full mid-planes, three
    0.75-planes over (0.5,1)^2 and three 0.625-planes over (0.5,0.75)^2."""
    fr = [FractureRect(a, 0.5, FULL) for a in range(3)]
    fr += [FractureRect(a, 0.75, ((0.5, 1.0), (0.5, 1.0))) for a in range(3)]
    fr += [FractureRect(a, 0.625, ((0.5, 0.75), (0.5, 0.75))) for a in range(3)]
    return build_cartesian_grid(UNIT, (n, n, n), fractures=fr,
                                eps=(1e-4, 1e-8, 1e-12))


class TestCellCounts:
    def test_minimal_split(self):
        fr = FractureRect(0, 0.5, FULL)
        g = build_cartesian_grid(UNIT, (2, 1, 1), fractures=[fr])
        assert g.stats() == {"3d": 2, "2d": 1, "1d": 0, "0d": 0}
        assert g.mortars[2].n == 2

    def test_three_planes_counts(self):
        g = three_planes(4)
        # oracle by direct enumeration: three 4x4 planes; three 4-cell
        # intersection lines; one triple point
        assert g.stats() == {"3d": 64, "2d": 48, "1d": 12, "0d": 1}
        assert g.mortars[2].n == 2 * 48
        # each line cell couples to 2 fractures from both sides
        assert g.mortars[1].n == 4 * 12
        # the point couples to 3 lines from both sides
        assert g.mortars[0].n == 6

    @pytest.mark.parametrize("n,expect", [
        (8, {"3d": 512, "2d": 252, "1d": 90, "0d": 27}),
        (16, {"3d": 4096, "2d": 1008, "1d": 180, "0d": 27}),
    ])
    def test_nine_fracture_counts(self, n, expect):
        # oracle: per-plane square counts from the extents
        # (3 n^2 + 3 (n/2)^2 + 3 (n/4)^2 squares of size 1/n), intersection
        # segments and crossing points enumerated by hand
        assert nine_fracture_grid(n).stats() == expect

    def test_unsnapped_fracture_rejected(self):
        fr = FractureRect(0, 0.37, FULL)
        with pytest.raises(ValueError):
            build_cartesian_grid(UNIT, (4, 4, 4), fractures=[fr])


class TestGeometryInvariants:
    def test_volume_partition(self):
        g = three_planes(4)
        assert g.matrix.measures.sum() == pytest.approx(1.0, rel=1e-14)
        for sd in g.of_dim(2):
            assert sd.measures.sum() == pytest.approx(1.0, rel=1e-14)

    def test_region_tagging(self):
        boxes = [(((0.5, 1.0), (0.0, 0.5), (0.0, 1.0)), "low")]
        fr = [FractureRect(a, 0.5, FULL) for a in range(3)]
        g = build_cartesian_grid(UNIT, (4, 4, 4), fractures=fr,
                                 region_boxes=boxes, default_region="bulk")
        tags = g.matrix.region_tags
        vol_low = g.matrix.measures[tags == "low"].sum()
        assert vol_low == pytest.approx(0.25, rel=1e-14)
        assert set(tags) == {"low", "bulk"}

    def test_mortar_duality(self):
        """Every fracture face pairs with exactly two matrix cells, with the
        mortar area equal to the fracture cell area and unit normals."""
        g = three_planes(4)
        blk = g.mortars[2]
        counts = {}
        for pos, cell in zip(blk.low_sd, blk.low_cell):
            counts[(pos, cell)] = counts.get((pos, cell), 0) + 1
        assert set(counts.values()) == {2}
        for m in range(blk.n):
            sd = g.subdomains[blk.low_sd[m]]
            assert blk.area[m] == pytest.approx(sd.measures[blk.low_cell[m]])
        assert np.allclose(np.linalg.norm(blk.normal, axis=1), 1.0)

    def test_interior_face_geometry(self):
        g = three_planes(4)
        sd = g.matrix
        # 144 interior faces in a 4x4x4 grid; the 16 faces lying on each of
        # the three fracture planes are replaced by mortar couplings
        assert sd.n_faces == 3 * 3 * 16 - 3 * 16
        assert np.allclose(sd.face_area, 1.0 / 16.0)


class TestLocator:
    def test_round_trip_centers(self):
        g = nine_fracture_grid(8)
        for sd in g.subdomains:
            if sd.locator is None:
                continue
            idx = sd.locator.locate(sd.centers)
            assert np.array_equal(idx, np.arange(sd.n_cells))

    def test_outside_is_miss(self):
        g = three_planes(4)
        idx = g.matrix.locator.locate(np.array([[1.5, 0.5, 0.5]]))
        assert idx[0] == -1

    def test_tie_breaks_to_lower_cell(self):
        g = build_cartesian_grid(UNIT, (4, 1, 1))
        idx = g.matrix.locator.locate(np.array([[0.25, 0.5, 0.5]]))
        # a point on a shared face resolves to the lower-index cell
        assert g.matrix.centers[idx[0], 0] == pytest.approx(0.125)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.001, 0.999), st.floats(0.001, 0.999),
                              st.floats(0.001, 0.999)),
                    min_size=1, max_size=10))
    def test_located_cell_contains_point(self, pts):
        g = three_planes(4)
        pts = np.asarray(pts)
        idx = g.matrix.locator.locate(pts)
        assert np.all(idx >= 0)
        centers = g.matrix.centers[idx]
        assert np.all(np.abs(centers - pts) <= 0.125 + 1e-12)


class TestShearedBuilder:
    def test_volume_and_plane(self):
        g = build_sheared_grid(((0, 100), (0, 100), (0, 100)), (10, 10, 10),
                               plane=(80.0, -0.6))
        assert g.matrix.measures.sum() == pytest.approx(1e6, rel=1e-12)
        frac = g.of_dim(2)[0]
        assert np.allclose(frac.centers[:, 2],
                           80.0 - 0.6 * frac.centers[:, 0])
        f = np.sqrt(1.36)
        assert frac.measures.sum() == pytest.approx(1e4 * f, rel=1e-12)

    def test_tilted_normals_unit(self):
        g = build_sheared_grid(((0, 100), (0, 100), (0, 100)), (4, 4, 4),
                               plane=(50.0, -0.2))
        blk = g.mortars[2]
        assert np.allclose(np.linalg.norm(blk.normal, axis=1), 1.0)

    def test_locator_round_trip(self):
        g = build_sheared_grid(((0, 100), (0, 100), (0, 100)), (5, 5, 5),
                               plane=(60.0, -0.2))
        for sd in g.subdomains:
            idx = sd.locator.locate(sd.centers)
            assert np.array_equal(idx, np.arange(sd.n_cells))


class TestPatches:
    def test_first_match_wins_and_reassign(self):
        g = build_cartesian_grid(UNIT, (2, 2, 2))
        whole = ((-0.1, 1.1), (-0.1, 1.1), (-0.1, 1.1))
        left = ((-0.001, 0.001), (0.0, 1.0), (0.0, 1.0))
        apply_patches(g, [PatchSpec("left", "dirichlet", 1.0, left),
                          PatchSpec("rest", "neumann", 0.0, whole)])
        bp = g.matrix.bface_patch
        assert (bp == "left").sum() == 4
        assert (bp == "rest").sum() == 20
        apply_patches(g, [PatchSpec("all", "neumann", 0.0, whole)])
        assert set(g.matrix.bface_patch) == {"all"}

    def test_unmatched_faces_default_noflow(self):
        g = build_cartesian_grid(UNIT, (2, 2, 2))
        assert set(g.matrix.bface_patch) == {"noflow"}


def test_topology_dump_round_trip(tmp_path):
    g = three_planes(4)
    path = tmp_path / "topo.json"
    g.dump_topology(path)
    topo = json.loads(path.read_text())
    assert topo["schema"] == "dfmbench-topology/1"
    assert {s["id"]: s["cells"] for s in topo["subdomains"]}["matrix"] == 64
