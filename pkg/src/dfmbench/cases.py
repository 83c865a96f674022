"""Benchmark case registry.

Each case ships as a JSON data file (schema "dfmbench-case/1") holding the
geometry, parameter tables, boundary patches, probe definitions and
refinement targets; `load_case` turns one into a ready-to-solve setup.
Cases 3 and 4 have unstructured geometry and require a user-supplied
conforming MSH mesh (plus an optional tag-map sidecar).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from dfmbench import mshio
from dfmbench.flow import FlowParams
from dfmbench.grid import (
    FractureRect,
    MixedDimGrid,
    PatchSpec,
    build_cartesian_grid,
    build_sheared_grid,
)
from dfmbench.metrics import LineProbe, RegionProbe
from dfmbench.transport import TransportParams

CASE_SCHEMA = "dfmbench-case/1"
CASE_FILES = {
    "1": "case1.json",
    "2.1": "case2_1.json",
    "2.2": "case2_2.json",
    "3": "case3.json",
    "4": "case4.json",
}


class CaseError(ValueError):
    """Raised for unknown cases, bad refinement levels or missing meshes."""


@dataclass
class CaseSetup:
    case_id: str
    refinement: int
    grid: MixedDimGrid
    flow_params: FlowParams
    transport_params: TransportParams
    line_probes: list  # of (LineProbe, field name "head" | "conc")
    region_probes: list  # of RegionProbe
    outlet_flux_patches: list
    data: dict
    warnings: list = field(default_factory=list)


def case_ids() -> list:
    return list(CASE_FILES)


def load_case_data(case_id: str, case_file=None) -> dict:
    """Raw case definition, from the bundled data files or an override."""
    if case_file is not None:
        with open(case_file) as fh:
            data = json.load(fh)
    else:
        if case_id not in CASE_FILES:
            raise CaseError(f"unknown case id {case_id!r} "
                            f"(choose from {sorted(CASE_FILES)})")
        ref = resources.files("dfmbench").joinpath("data", CASE_FILES[case_id])
        data = json.loads(ref.read_text())
    if data.get("schema") != CASE_SCHEMA:
        raise CaseError(f"case file schema {data.get('schema')!r}, "
                        f"expected {CASE_SCHEMA!r}")
    return data


def case2_region_boxes() -> list:
    """The three axis-aligned boxes whose union is the low-conductivity
    matrix region of the regular nine-fracture network, as (box, tag)."""
    data = load_case_data("2.1")
    return [(tuple(tuple(iv) for iv in rb["box"]), rb["tag"])
            for rb in data["geometry"]["region_boxes"]]


def _patch_specs(data: dict) -> list:
    return [PatchSpec(p["id"], p["kind"], float(p.get("value", 0.0)),
                      tuple(tuple(iv) for iv in p["box"]) if p.get("box") else None)
            for p in data["patches"]]


def _flow_params(data: dict, grid: MixedDimGrid) -> FlowParams:
    fl = data["flow"]
    tangential, normal = {}, {}
    for sd in grid.subdomains:
        if sd.dim == 2:
            tangential[sd.id] = float(fl["fracture_tangential_k"])
            normal[sd.id] = float(fl["fracture_normal_k"])
        elif sd.dim == 1:
            tangential[sd.id] = float(fl["line_tangential_k"])
            normal[sd.id] = float(fl["line_normal_k"])
        elif sd.dim == 0:
            normal[sd.id] = float(fl["point_normal_k"])
    matrix_k = {tag: (tuple(v) if isinstance(v, (list, tuple)) else float(v))
                for tag, v in fl["matrix_k"].items()}
    return FlowParams(matrix_k=matrix_k, tangential_k=tangential,
                      normal_k=normal)


def _probes(data: dict, grid: MixedDimGrid):
    lines = []
    for lp in data["probes"].get("lines", []):
        lines.append((LineProbe(tuple(lp["start"]), tuple(lp["end"]),
                                int(lp.get("n", 1000)), lp.get("sd", "matrix"),
                                lp["id"]), lp["field"]))
    regions = []
    for rp in data["probes"].get("regions", []):
        if rp.get("per_fracture"):
            for sd in grid.subdomains:
                if sd.dim == 2:
                    regions.append(RegionProbe(
                        id=sd.id, sd_ids=(sd.id,),
                        weighting=rp.get("weighting", "mean")))
            continue
        regions.append(RegionProbe(
            id=rp["id"], dim=rp.get("dim"), tag=rp.get("tag"),
            box=tuple(tuple(iv) for iv in rp["box"]) if rp.get("box") else None,
            sd_ids=tuple(rp["sd_ids"]) if rp.get("sd_ids") else None,
            weighting=rp.get("weighting", "weighted")))
    return lines, regions, list(data["probes"].get("outlet_flux", []))


def _default_tagmap(doc) -> mshio.TagMap:
    """Heuristic when no sidecar is given: every physical tag carried by
    triangles is a fracture (id = tag); all tetrahedra are matrix."""
    fr_tags = sorted({e.physical for e in doc.elements if e.kind == "triangle"})
    return mshio.TagMap(matrix=[], fractures={t: t for t in fr_tags})


def load_case(case_id: str, refinement: int = 0, mesh=None, tagmap=None,
              case_file=None) -> CaseSetup:
    """Build the grid and parameter structs for one benchmark case.

    mesh: MSH 2.2 path (mandatory for cases 3 and 4); tagmap: JSON sidecar
    path mapping physical tags to roles; case_file: override the bundled
    case definition."""
    data = load_case_data(case_id, case_file)
    case_id = data["id"]
    geo = data["geometry"]
    refinements = geo["refinements"]
    if not 0 <= refinement < len(refinements):
        raise CaseError(f"case {case_id}: refinement {refinement} out of "
                        f"range (have {len(refinements)} levels)")
    eps = tuple(float(e) for e in data["eps"])
    patch_specs = _patch_specs(data)
    region_boxes = [(tuple(tuple(iv) for iv in rb["box"]), rb["tag"])
                    for rb in geo.get("region_boxes", [])]
    warnings = []

    kind = geo["kind"]
    if kind == "msh" and mesh is None:
        raise CaseError(f"case {case_id} requires a user-supplied MSH mesh "
                        "(built-in meshers cannot conform to its geometry)")
    if mesh is not None:
        doc = mshio.parse_msh(mesh)
        tm = (mshio.TagMap.from_json(tagmap) if tagmap is not None
              else _default_tagmap(doc))
        if tagmap is None:
            warnings.append("no tag map supplied; derived fracture tags "
                            "from triangle physical groups")
        grid = mshio.build_from_msh(doc, tm, eps=eps, patch_specs=patch_specs,
                                    domain_box=geo["box"])
        warnings.extend(doc.warnings)
    elif kind == "cartesian":
        fractures = [FractureRect(int(f["axis"]), float(f["coord"]),
                                  tuple(tuple(iv) for iv in f["extent"]))
                     for f in geo["fractures"]]
        grid = build_cartesian_grid(
            geo["box"], refinements[refinement], fractures=fractures,
            region_boxes=region_boxes, eps=eps, patch_specs=patch_specs,
            default_region=geo.get("default_region", "matrix"))
    elif kind == "sheared":
        grid = build_sheared_grid(
            geo["box"], refinements[refinement], plane=tuple(geo["plane"]),
            region_boxes=region_boxes, eps=eps, patch_specs=patch_specs,
            default_region=geo.get("default_region", "matrix"))
    else:
        raise CaseError(f"unknown geometry kind {kind!r}")

    n3 = grid.stats()["3d"]
    target = geo.get("targets_3d", [None] * len(refinements))[refinement]
    if target and abs(n3 - target) > 0.1 * target:
        warnings.append(f"3d cell count {n3} deviates more than 10% from "
                        f"the target {target}")

    flow_params = _flow_params(data, grid)
    tr = data["transport"]
    transport_params = TransportParams(
        porosity=dict(tr["porosity"]), dt=float(tr["dt"]),
        n_steps=int(tr["n_steps"]),
        inlet_c={k: float(v) for k, v in tr.get("inlet_c", {}).items()})
    lines, regions, outlet = _probes(data, grid)
    return CaseSetup(case_id, refinement, grid, flow_params, transport_params,
                     lines, regions, outlet, data, warnings)
