"""Gmsh MSH 2.2 ASCII reader and simplicial mixed-dimensional grid builder.

Only version 2.2 ASCII is supported: the benchmark meshes are expressible in
it and a single format keeps the parser testable bit-exactly. Fracture
triangles must conform to the tetrahedral mesh (vertex-set equality with an
interior facet); intersection line elements are optional and are synthesized
from shared fracture-triangle edges when absent.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from dfmbench.grid import (
    GridError,
    MixedDimGrid,
    MortarBlock,
    NOFLOW_PATCH,
    Subdomain,
    apply_patches,
)

ELEMENT_TYPES = {15: ("point", 1), 1: ("line", 2), 2: ("triangle", 3),
                 4: ("tetrahedron", 4)}


class MshParseError(ValueError):
    """Parse failure; message carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class MshElement:
    id: int
    kind: str  # point | line | triangle | tetrahedron
    physical: int
    nodes: tuple


@dataclass
class MshDocument:
    version: str
    nodes: dict  # id -> np.ndarray (3,)
    elements: list  # of MshElement, file order
    physical_names: dict = field(default_factory=dict)  # tag -> (dim, name)
    warnings: list = field(default_factory=list)

    def of_kind(self, kind: str) -> list:
        return [e for e in self.elements if e.kind == kind]


def parse_msh(source) -> MshDocument:
    """Parse MSH 2.2 ASCII from a path, text, or byte string. Unknown
    sections are skipped with a recorded warning; structural problems raise
    MshParseError with the offending line number."""
    if isinstance(source, bytes):
        text = source.decode("ascii")
    elif isinstance(source, os.PathLike) or (
            isinstance(source, str) and "\n" not in source
            and not source.startswith("$")):
        with open(source) as fh:
            text = fh.read()
    else:
        text = str(source)
    lines = text.splitlines()
    doc = MshDocument(version="", nodes={}, elements=[])
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if not line.startswith("$"):
            raise MshParseError(f"expected a section header, got {line!r}", i + 1)
        name = line[1:]
        end = f"$End{name}"
        j = i + 1
        while j < len(lines) and lines[j].strip() != end:
            j += 1
        if j >= len(lines):
            raise MshParseError(f"section {name} not terminated by {end}", i + 1)
        body = lines[i + 1:j]
        if name == "MeshFormat":
            _parse_format(body, i + 2, doc)
        elif name == "PhysicalNames":
            _parse_physical_names(body, i + 2, doc)
        elif name == "Nodes":
            _parse_nodes(body, i + 2, doc)
        elif name == "Elements":
            _parse_elements(body, i + 2, doc)
        else:
            doc.warnings.append(f"skipped unknown section {name} at line {i + 1}")
        i = j + 1
    if not doc.version:
        raise MshParseError("missing $MeshFormat section")
    if not doc.nodes:
        raise MshParseError("missing $Nodes section")
    for el in doc.elements:
        for nid in el.nodes:
            if nid not in doc.nodes:
                raise MshParseError(f"element {el.id} references unknown node {nid}")
    return doc


def _parse_format(body, lineno, doc):
    if not body:
        raise MshParseError("empty MeshFormat section", lineno)
    parts = body[0].split()
    if len(parts) < 3:
        raise MshParseError(f"malformed MeshFormat line {body[0]!r}", lineno)
    version, file_type = parts[0], parts[1]
    if not version.startswith("2.2"):
        raise MshParseError(f"unsupported MSH version {version} (need 2.2)", lineno)
    if file_type != "0":
        raise MshParseError("binary MSH is not supported", lineno)
    doc.version = version


def _parse_physical_names(body, lineno, doc):
    if not body:
        raise MshParseError("empty PhysicalNames section", lineno)
    try:
        count = int(body[0])
    except ValueError as exc:
        raise MshParseError(f"bad PhysicalNames count {body[0]!r}", lineno) from exc
    if count != len(body) - 1:
        raise MshParseError(
            f"PhysicalNames header says {count} entries, found {len(body) - 1}",
            lineno)
    for off, line in enumerate(body[1:]):
        parts = line.split(maxsplit=2)
        if len(parts) != 3:
            raise MshParseError(f"malformed physical name {line!r}", lineno + 1 + off)
        dim, tag, name = int(parts[0]), int(parts[1]), parts[2].strip().strip('"')
        doc.physical_names[tag] = (dim, name)


def _parse_nodes(body, lineno, doc):
    if not body:
        raise MshParseError("empty Nodes section", lineno)
    try:
        count = int(body[0])
    except ValueError as exc:
        raise MshParseError(f"bad node count {body[0]!r}", lineno) from exc
    if count != len(body) - 1:
        raise MshParseError(
            f"Nodes header says {count} nodes, found {len(body) - 1}", lineno)
    for off, line in enumerate(body[1:]):
        parts = line.split()
        if len(parts) != 4:
            raise MshParseError(f"malformed node line {line!r}", lineno + 1 + off)
        doc.nodes[int(parts[0])] = np.array(
            [float(parts[1]), float(parts[2]), float(parts[3])])


def _parse_elements(body, lineno, doc):
    if not body:
        raise MshParseError("empty Elements section", lineno)
    try:
        count = int(body[0])
    except ValueError as exc:
        raise MshParseError(f"bad element count {body[0]!r}", lineno) from exc
    if count != len(body) - 1:
        raise MshParseError(
            f"Elements header says {count} elements, found {len(body) - 1}",
            lineno)
    for off, line in enumerate(body[1:]):
        parts = [int(p) for p in line.split()]
        ln = lineno + 1 + off
        if len(parts) < 3:
            raise MshParseError(f"malformed element line {line!r}", ln)
        eid, etype, ntags = parts[0], parts[1], parts[2]
        if etype not in ELEMENT_TYPES:
            raise MshParseError(f"unsupported element type {etype}", ln)
        kind, nn = ELEMENT_TYPES[etype]
        nodes = parts[3 + ntags:]
        if len(nodes) != nn:
            raise MshParseError(
                f"element {eid}: expected {nn} nodes, got {len(nodes)}", ln)
        physical = parts[3] if ntags >= 1 else 0
        doc.elements.append(MshElement(eid, kind, physical, tuple(nodes)))


def write_msh(doc: MshDocument, path) -> None:
    """Debug re-serializer; parse(write(doc)) reproduces the document."""
    kind_code = {k: c for c, (k, _) in ELEMENT_TYPES.items()}
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n")
        fh.write(f"{doc.version} 0 8\n")
        fh.write("$EndMeshFormat\n")
        if doc.physical_names:
            fh.write("$PhysicalNames\n")
            fh.write(f"{len(doc.physical_names)}\n")
            for tag, (dim, name) in sorted(doc.physical_names.items()):
                fh.write(f'{dim} {tag} "{name}"\n')
            fh.write("$EndPhysicalNames\n")
        fh.write("$Nodes\n")
        fh.write(f"{len(doc.nodes)}\n")
        for nid, xyz in doc.nodes.items():
            fh.write(f"{nid} {xyz[0]:.17g} {xyz[1]:.17g} {xyz[2]:.17g}\n")
        fh.write("$EndNodes\n")
        fh.write("$Elements\n")
        fh.write(f"{len(doc.elements)}\n")
        for el in doc.elements:
            nodes = " ".join(str(n) for n in el.nodes)
            fh.write(f"{el.id} {kind_code[el.kind]} 2 {el.physical} "
                     f"{el.physical} {nodes}\n")
        fh.write("$EndElements\n")


@dataclass
class TagMap:
    """Physical-tag roles: matrix tags, fracture tag -> fracture id,
    intersection tag -> line id, boundary tag -> patch id (informational;
    patch assignment itself is geometric)."""

    matrix: list = field(default_factory=list)
    fractures: dict = field(default_factory=dict)
    intersections: dict = field(default_factory=dict)
    boundaries: dict = field(default_factory=dict)

    @staticmethod
    def from_json(source) -> "TagMap":
        if isinstance(source, (str, bytes)) and not str(source).lstrip().startswith("{"):
            with open(source) as fh:
                data = json.load(fh)
        elif isinstance(source, dict):
            data = source
        else:
            data = json.loads(source)
        return TagMap(
            matrix=[int(t) for t in data.get("matrix", [])],
            fractures={int(k): v for k, v in data.get("fractures", {}).items()},
            intersections={int(k): v
                           for k, v in data.get("intersections", {}).items()},
            boundaries={int(k): v for k, v in data.get("boundaries", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps({
            "matrix": self.matrix,
            "fractures": {str(k): v for k, v in self.fractures.items()},
            "intersections": {str(k): v for k, v in self.intersections.items()},
            "boundaries": {str(k): v for k, v in self.boundaries.items()},
        }, indent=2, sort_keys=True)


class SimplexLocator:
    """Point lookup on a tetrahedral subdomain: nearest barycenters by
    KD-tree, confirmed by a barycentric containment test with 1e-10 slack."""

    def __init__(self, vertices: np.ndarray, cells: np.ndarray,
                 centers: np.ndarray):
        self.vertices = vertices
        self.cells = cells
        self.centers = centers
        self.tree = cKDTree(centers)

    def _contains(self, cell: int, p: np.ndarray) -> bool:
        v = self.vertices[self.cells[cell]]
        T = (v[1:] - v[0]).T
        try:
            lam = np.linalg.solve(T, p - v[0])
        except np.linalg.LinAlgError:
            return False
        slack = 1e-10
        return bool(np.all(lam >= -slack) and lam.sum() <= 1.0 + slack)

    def locate(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        k = min(32, self.centers.shape[0])
        _, near = self.tree.query(pts, k=k)
        near = np.atleast_2d(near)
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        for i, p in enumerate(pts):
            for cand in near[i]:
                if self._contains(int(cand), p):
                    out[i] = cand
                    break
        return out

    def nearest(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        dist, idx = self.tree.query(pts)
        return idx.astype(np.int64), dist


def _tri_area_normal(v0, v1, v2):
    cr = np.cross(v1 - v0, v2 - v0)
    nrm = np.linalg.norm(cr)
    return 0.5 * nrm, cr / nrm


def _tet_volume(v):
    return abs(np.linalg.det(v[1:] - v[0])) / 6.0


def build_from_msh(doc: MshDocument, tags: TagMap, eps=(1.0, 1.0, 1.0),
                   patch_specs=(), matrix_region: str = "matrix",
                   domain_box=None) -> MixedDimGrid:
    """Build a mixed-dimensional grid from a conforming simplicial mesh.

    Every fracture triangle must coincide (as a vertex set) with a facet
    shared by two tetrahedra. Tagged intersection line elements are used when
    present; otherwise 1d cells are synthesized from edges shared by
    triangles of two or more distinct fractures. Boundary faces are assigned
    to patches geometrically, by face-centroid membership in the patch boxes.
    """
    eps2, eps1, eps0 = eps
    tets = [e for e in doc.elements if e.kind == "tetrahedron"
            and (not tags.matrix or e.physical in tags.matrix)]
    skipped_tets = [e for e in doc.elements if e.kind == "tetrahedron"]
    if len(skipped_tets) != len(tets):
        doc.warnings.append(
            f"ignored {len(skipped_tets) - len(tets)} tetrahedra with "
            "unmapped physical tags")
    if not tets:
        raise GridError("mesh contains no matrix tetrahedra")

    node_ids = sorted(doc.nodes)
    node_pos = {nid: i for i, nid in enumerate(node_ids)}
    verts = np.array([doc.nodes[nid] for nid in node_ids])

    cells = np.array([[node_pos[n] for n in e.nodes] for e in tets])
    centers = verts[cells].mean(axis=1)
    volumes = np.array([_tet_volume(verts[c]) for c in cells])

    # facet -> incident tets
    facets: dict[frozenset, list[int]] = {}
    for ti, c in enumerate(cells):
        for drop in range(4):
            key = frozenset(np.delete(c, drop))
            facets.setdefault(key, []).append(ti)
    for key, tl in facets.items():
        if len(tl) > 2:
            raise GridError(f"facet shared by {len(tl)} tetrahedra")

    # fracture triangles grouped by fracture id
    fr_groups: dict = {}
    covered: set = set()
    for el in doc.elements:
        if el.kind != "triangle" or el.physical not in tags.fractures:
            continue
        key = frozenset(node_pos[n] for n in el.nodes)
        incident = facets.get(key)
        if incident is None or len(incident) != 2:
            raise GridError(
                f"fracture triangle element {el.id} does not conform to an "
                "interior tetrahedral facet")
        fr_groups.setdefault(tags.fractures[el.physical], []).append((el, key))
        covered.add(key)

    subdomains = [Subdomain(
        id="matrix", dim=3, epsilon=1.0, centers=centers, measures=volumes,
        region_tags=np.full(len(tets), matrix_region, dtype=object))]
    mortars = {0: [], 1: [], 2: []}

    # matrix interior and boundary faces
    f_own, f_nb, f_area, f_ctr, f_nrm = [], [], [], [], []
    b_cell, b_area, b_ctr, b_nrm = [], [], [], []
    for key, tl in sorted(facets.items(), key=lambda kv: sorted(kv[0])):
        vi = sorted(key)
        area, normal = _tri_area_normal(*verts[vi])
        ctr = verts[vi].mean(axis=0)
        if len(tl) == 2:
            if key in covered:
                continue
            o, nb = tl
            if normal @ (centers[nb] - centers[o]) < 0:
                normal = -normal
            f_own.append(o)
            f_nb.append(nb)
            f_area.append(area)
            f_ctr.append(ctr)
            f_nrm.append(normal)
        else:
            if key in covered:
                raise GridError("fracture triangle lies on the domain boundary")
            t = tl[0]
            if normal @ (ctr - centers[t]) < 0:
                normal = -normal
            b_cell.append(t)
            b_area.append(area)
            b_ctr.append(ctr)
            b_nrm.append(normal)
    msd = subdomains[0]
    if f_own:
        msd.face_owner = np.asarray(f_own, dtype=np.int64)
        msd.face_neighbor = np.asarray(f_nb, dtype=np.int64)
        msd.face_area = np.asarray(f_area)
        msd.face_center = np.asarray(f_ctr)
        msd.face_normal = np.asarray(f_nrm)
        msd.face_axis = np.full(len(f_own), -1, dtype=np.int64)
    if b_cell:
        msd.bface_cell = np.asarray(b_cell, dtype=np.int64)
        msd.bface_area = np.asarray(b_area)
        msd.bface_center = np.asarray(b_ctr)
        msd.bface_normal = np.asarray(b_nrm)
        msd.bface_axis = np.full(len(b_cell), -1, dtype=np.int64)
        msd.bface_patch = np.full(len(b_cell), NOFLOW_PATCH.id, dtype=object)
    msd.locator = SimplexLocator(verts, cells, centers)

    # fracture subdomains, their mortars onto the matrix, in-plane faces
    tri_lookup: dict[tuple, tuple[int, int]] = {}  # facet -> (sd pos, cell)
    fr_edges: dict[frozenset, list[tuple[int, int, object]]] = {}
    for fid in sorted(fr_groups, key=str):
        group = fr_groups[fid]
        sd_pos = len(subdomains)
        n_tri = len(group)
        tri_centers = np.zeros((n_tri, 3))
        tri_areas = np.zeros(n_tri)
        tri_nodes = []
        for li, (el, key) in enumerate(group):
            vi = sorted(key)
            tri_nodes.append(vi)
            area, normal = _tri_area_normal(*verts[vi])
            tri_centers[li] = verts[vi].mean(axis=0)
            tri_areas[li] = area
            for ti in facets[key]:
                dist = float(np.linalg.norm(centers[ti] - tri_centers[li]))
                mortars[2].append((0, ti, sd_pos, li, area, dist,
                                   tuple(tri_centers[li]), tuple(normal)))
            tri_lookup[tuple(vi)] = (sd_pos, li)
            for drop in range(3):
                ekey = frozenset(vi[:drop] + vi[drop + 1:])
                fr_edges.setdefault(ekey, []).append((sd_pos, li, fid))
        sd = Subdomain(
            id=f"fracture_{fid}", dim=2, epsilon=eps2, centers=tri_centers,
            measures=tri_areas,
            region_tags=np.full(n_tri, f"fracture_{fid}", dtype=object))
        sd._tri_nodes = tri_nodes
        subdomains.append(sd)

    # intersection edges: shared by triangles of >= 2 distinct fractures,
    # or listed explicitly as tagged line elements
    inter_edges: dict[frozenset, str] = {}
    if tags.intersections:
        for el in doc.elements:
            if el.kind != "line" or el.physical not in tags.intersections:
                continue
            ekey = frozenset(node_pos[n] for n in el.nodes)
            if ekey not in fr_edges:
                raise GridError(
                    f"intersection line element {el.id} is not an edge of "
                    "any fracture triangle")
            inter_edges[ekey] = str(tags.intersections[el.physical])
    else:
        for ekey, tris in fr_edges.items():
            fids = {fid for (_, _, fid) in tris}
            if len(fids) >= 2:
                inter_edges[ekey] = "+".join(sorted(str(f) for f in fids))

    # group intersection edges into line subdomains by their id key
    line_groups: dict[str, list[frozenset]] = {}
    for ekey, gid in inter_edges.items():
        line_groups.setdefault(gid, []).append(ekey)

    line_sd_of_edge: dict[frozenset, tuple[int, int]] = {}
    for gid in sorted(line_groups):
        ekeys = sorted(line_groups[gid], key=lambda k: sorted(k))
        sd_pos = len(subdomains)
        lc = np.zeros((len(ekeys), 3))
        lm = np.zeros(len(ekeys))
        for ci, ekey in enumerate(ekeys):
            vi = sorted(ekey)
            lc[ci] = verts[vi].mean(axis=0)
            lm[ci] = float(np.linalg.norm(verts[vi[1]] - verts[vi[0]]))
            line_sd_of_edge[ekey] = (sd_pos, ci)
        sd = Subdomain(
            id=f"line_{gid}", dim=1, epsilon=eps1, centers=lc, measures=lm,
            region_tags=np.full(len(ekeys), f"line_{gid}", dtype=object))
        sd._edge_keys = ekeys
        subdomains.append(sd)

    # fracture -> line mortars and fracture in-plane interior faces
    for ekey, tris in sorted(fr_edges.items(), key=lambda kv: sorted(kv[0])):
        vi = sorted(ekey)
        elen = float(np.linalg.norm(verts[vi[1]] - verts[vi[0]]))
        ectr = verts[vi].mean(axis=0)
        if ekey in inter_edges:
            lpos, lcell = line_sd_of_edge[ekey]
            for (sd_pos, li, _fid) in tris:
                sd = subdomains[sd_pos]
                dist = float(np.linalg.norm(sd.centers[li] - ectr))
                direction = sd.centers[li] - ectr
                direction /= np.linalg.norm(direction)
                mortars[1].append((sd_pos, li, lpos, lcell, elen, dist,
                                   tuple(ectr), tuple(direction)))
            continue
        # same-fracture pair -> in-plane interior face
        by_sd: dict[int, list[int]] = {}
        for (sd_pos, li, _fid) in tris:
            by_sd.setdefault(sd_pos, []).append(li)
        for sd_pos, lis in by_sd.items():
            if len(lis) != 2:
                continue
            sd = subdomains[sd_pos]
            o, nb = lis
            direction = sd.centers[nb] - sd.centers[o]
            direction /= np.linalg.norm(direction)
            sd.face_owner = np.append(sd.face_owner, o)
            sd.face_neighbor = np.append(sd.face_neighbor, nb)
            sd.face_area = np.append(sd.face_area, elen)
            sd.face_center = np.vstack([sd.face_center, ectr])
            sd.face_normal = np.vstack([sd.face_normal, direction])
            sd.face_axis = np.append(sd.face_axis, -1)

    # 0d points where >= 2 non-collinear intersection edges meet
    node_edge_dirs: dict[int, list] = {}
    for ekey in inter_edges:
        vi = sorted(ekey)
        d = verts[vi[1]] - verts[vi[0]]
        d /= np.linalg.norm(d)
        for nd in vi:
            node_edge_dirs.setdefault(nd, []).append((ekey, d))
    point_of_node: dict[int, int] = {}
    pt_nodes = []
    for nd in sorted(node_edge_dirs):
        dirs = [d for (_, d) in node_edge_dirs[nd]]
        noncollinear = any(np.linalg.norm(np.cross(dirs[0], d)) > 1e-10
                           for d in dirs[1:])
        if noncollinear:
            point_of_node[nd] = len(pt_nodes)
            pt_nodes.append(nd)
    point_base = len(subdomains)
    for pi, nd in enumerate(pt_nodes):
        subdomains.append(Subdomain(
            id=f"point_{pi}", dim=0, epsilon=eps0,
            centers=verts[nd].reshape(1, 3), measures=np.ones(1),
            region_tags=np.full(1, f"point_{pi}", dtype=object)))

    # line interior faces (shared nodes, no point there) and line -> point
    # mortars
    for sd_pos in range(len(subdomains)):
        sd = subdomains[sd_pos]
        if sd.dim != 1:
            continue
        node_cells: dict[int, list[int]] = {}
        for ci, ekey in enumerate(sd._edge_keys):
            for nd in ekey:
                node_cells.setdefault(nd, []).append(ci)
        for nd, cls in sorted(node_cells.items()):
            if nd in point_of_node:
                pidx = point_base + point_of_node[nd]
                for ci in cls:
                    dist = float(np.linalg.norm(sd.centers[ci] - verts[nd]))
                    direction = sd.centers[ci] - verts[nd]
                    direction /= np.linalg.norm(direction)
                    mortars[0].append((sd_pos, ci, pidx, 0, 1.0, dist,
                                       tuple(verts[nd]), tuple(direction)))
            elif len(cls) == 2:
                o, nb = cls
                direction = sd.centers[nb] - sd.centers[o]
                direction /= np.linalg.norm(direction)
                sd.face_owner = np.append(sd.face_owner, o)
                sd.face_neighbor = np.append(sd.face_neighbor, nb)
                sd.face_area = np.append(sd.face_area, 1.0)
                sd.face_center = np.vstack([sd.face_center, verts[nd]])
                sd.face_normal = np.vstack([sd.face_normal, direction])
                sd.face_axis = np.append(sd.face_axis, -1)

    box = None
    if domain_box is not None:
        box = np.asarray(domain_box, dtype=np.float64)
    else:
        box = np.stack([verts.min(axis=0), verts.max(axis=0)], axis=1)
    grid = MixedDimGrid(subdomains,
                        {d: MortarBlock.from_lists(r) for d, r in mortars.items()},
                        {NOFLOW_PATCH.id: NOFLOW_PATCH}, domain_box=box)
    apply_patches(grid, patch_specs)
    for sd in grid.subdomains:
        sd.validate()
    return grid
