"""Marching tetrahedra over a 6-tet cube lattice, with per-vertex offsets,
attribute transfer, and analytic derivatives of crossing vertices.

The cube split shares the (0,0,0)-(1,1,1) diagonal in every cell so faces
match between neighbors; all tets are reordered positively oriented, which
lets a single generated case table serve every tet. Crossing vertices are
keyed by their lattice edge and deduplicated exactly, so the mesh is
watertight wherever the sign field is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .sdf import DOMAIN_HALF, GridSamples, SdfError, lattice_positions

log = logging.getLogger(__name__)

OFFSET_CLAMP = 0.45  # of one cell; keeps displaced tets from inverting


class IsosurfaceError(ValueError):
    pass


# corner n = dx*4 + dy*2 + dz of the unit cube
_CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
# Kuhn split: six tets around the 0-7 diagonal, reordered to det > 0
CUBE_TETS = np.array([
    [0, 4, 6, 7],
    [0, 4, 7, 5],
    [0, 2, 7, 6],
    [0, 2, 3, 7],
    [0, 1, 5, 7],
    [0, 1, 7, 3],
])

TET_EDGES = list(combinations(range(4), 2))  # 6 local edges, lexicographic


def _check_template():
    for tet in CUBE_TETS:
        p = _CORNERS[tet].astype(float)
        d = np.linalg.det(p[1:] - p[0])
        assert d > 0, f"tet {tet} not positively oriented"


_check_template()


def _build_case_table():
    """Triangle table for the 16 inside/outside patterns of one tet.

    Entries are triples of local edge ids wound so that, for a positively
    oriented tet, the triangle normal points toward the outside vertices.
    Generated from the canonical tet; winding under positive-determinant
    maps is preserved, so the table applies to every lattice tet.
    """
    canon = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    table = []
    for case in range(16):
        inside = [i for i in range(4) if case >> i & 1]
        outside = [i for i in range(4) if not case >> i & 1]
        if len(inside) in (0, 4):
            table.append([])
            continue
        mids = {e: 0.5 * (canon[e[0]] + canon[e[1]]) for e in TET_EDGES}
        ref = canon[outside].mean(axis=0) - canon[inside].mean(axis=0)

        def orient(tri_edges):
            a, b, c = (mids[e] for e in tri_edges)
            n = np.cross(b - a, c - a)
            return list(tri_edges) if n @ ref > 0 else [tri_edges[0], tri_edges[2], tri_edges[1]]

        if len(inside) == 1 or len(inside) == 3:
            apex = inside[0] if len(inside) == 1 else outside[0]
            others = [i for i in range(4) if i != apex]
            edges = [tuple(sorted((apex, o))) for o in others]
            tris = [orient(tuple(edges))]
        else:
            a, b = inside
            c, d = outside
            quad = [tuple(sorted((a, c))), tuple(sorted((a, d))),
                    tuple(sorted((b, d))), tuple(sorted((b, c)))]
            tris = [orient((quad[0], quad[1], quad[2])), orient((quad[0], quad[2], quad[3]))]
        table.append([[TET_EDGES.index(e) for e in tri] for tri in tris])
    return table


TET_CASES = _build_case_table()


@dataclass(frozen=True)
class TetGrid:
    """Lattice + per-vertex fields ready for extraction.

    Offsets displace lattice vertices before interpolation (norm-clamped to
    0.45 cell). Vertex index layout matches GridSamples.
    """

    resolution: int
    sdf: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    offsets: np.ndarray

    @property
    def cell(self) -> float:
        return 2.0 * DOMAIN_HALF / self.resolution

    @staticmethod
    def from_samples(samples: GridSamples, offsets: Optional[np.ndarray] = None) -> "TetGrid":
        v = samples.side**3
        if offsets is None:
            off = np.zeros((v, 3))
        else:
            off = np.array(offsets, np.float64, copy=True)
            if off.shape != (v, 3):
                raise IsosurfaceError(f"offsets must be ({v}, 3)")
            cell = 2.0 * DOMAIN_HALF / samples.resolution
            lim = OFFSET_CLAMP * cell
            norms = np.linalg.norm(off, axis=1)
            too_big = norms > lim
            if np.any(too_big):
                off[too_big] *= (lim / norms[too_big])[:, None]
        return TetGrid(resolution=samples.resolution, sdf=samples.sdf,
                       color=samples.color, normal=samples.normal, offsets=off)

    def vertex_positions(self) -> np.ndarray:
        return lattice_positions(self.resolution)

    def tets(self) -> np.ndarray:
        """(T, 4) global vertex ids, six positively oriented tets per cube."""
        res, side = self.resolution, self.resolution + 1
        base = np.arange(res)
        ii, jj, kk = np.meshgrid(base, base, base, indexing="ij")
        origin = (ii * side + jj) * side + kk  # id of cube corner (i, j, k)
        corner_off = (_CORNERS[:, 0] * side + _CORNERS[:, 1]) * side + _CORNERS[:, 2]
        cube_ids = origin.ravel()[:, None] + corner_off[None, :]  # (cubes, 8)
        return cube_ids[:, CUBE_TETS].reshape(-1, 4).astype(np.int64)


@dataclass(frozen=True)
class TriMesh:
    positions: np.ndarray
    indices: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.positions, np.float64).reshape(-1, 3)
        f = np.asarray(self.indices, np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(p)):
            raise IsosurfaceError("face index out of range")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "indices", f)
        for name in ("colors", "normals"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, np.float64).reshape(-1, 3)
                if len(v) != len(p):
                    raise IsosurfaceError(f"{name} length mismatch")
                object.__setattr__(self, name, v)

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_faces(self) -> int:
        return len(self.indices)

    def face_normals(self) -> np.ndarray:
        p = self.positions
        f = self.indices
        n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, lens, out=np.zeros_like(n), where=lens > 1e-300)


def empty_mesh() -> TriMesh:
    return TriMesh(positions=np.zeros((0, 3)), indices=np.zeros((0, 3), np.int64),
                   colors=np.zeros((0, 3)), normals=np.zeros((0, 3)))


def marching_tets(grid: TetGrid, isolevel: float = 0.0) -> TriMesh:
    """Extract the isolevel-0 surface; inside is sdf < 0.

    Crossing vertices are computed once per lattice edge (canonical low-high
    key) and shared by every incident triangle.
    """
    sdf = grid.sdf - isolevel
    if np.all(np.isnan(sdf)):
        raise IsosurfaceError("grid is all-NaN")
    if not np.all(np.isfinite(sdf)):
        raise IsosurfaceError("grid contains non-finite values")
    tets = grid.tets()
    s = sdf[tets]  # (T, 4)
    inside = s < 0
    del s
    case = inside.astype(np.int64) @ (1 << np.arange(4, dtype=np.int64))
    tri_edge_pairs = []  # rows: (global_a, global_b) per triangle corner
    for code in range(1, 15):
        tris = TET_CASES[code]
        if not tris:
            continue
        sel = np.flatnonzero(case == code)
        if sel.size == 0:
            continue
        tet_sel = tets[sel]
        for tri in tris:
            corners = np.empty((sel.size, 3, 2), np.int64)
            for c, eid in enumerate(tri):
                a, b = TET_EDGES[eid]
                corners[:, c, 0] = tet_sel[:, a]
                corners[:, c, 1] = tet_sel[:, b]
            tri_edge_pairs.append(corners)
    if not tri_edge_pairs:
        return empty_mesh()
    corners = np.concatenate(tri_edge_pairs)  # (F, 3, 2)
    lo = corners.min(axis=2)
    hi = corners.max(axis=2)
    v_count = (grid.resolution + 1) ** 3
    keys = lo.ravel() * v_count + hi.ravel()
    uniq, faces_flat = np.unique(keys, return_inverse=True)
    faces = faces_flat.reshape(-1, 3)
    edge_lo = (uniq // v_count).astype(np.int64)
    edge_hi = (uniq % v_count).astype(np.int64)

    s_lo, s_hi = sdf[edge_lo], sdf[edge_hi]
    denom = s_lo - s_hi
    tau = np.where(np.abs(denom) < 1e-300, 0.5, s_lo / np.where(denom == 0, 1.0, denom))
    tau = np.clip(tau, 0.0, 1.0)[:, None]
    lat = grid.vertex_positions()
    a = lat[edge_lo] + grid.offsets[edge_lo]
    b = lat[edge_hi] + grid.offsets[edge_hi]
    positions = a + tau * (b - a)
    colors = np.clip(grid.color[edge_lo] + tau * (grid.color[edge_hi] - grid.color[edge_lo]), 0, 1)
    nrm = grid.normal[edge_lo] + tau * (grid.normal[edge_hi] - grid.normal[edge_lo])
    lens = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.divide(nrm, lens, out=np.zeros_like(nrm), where=lens > 1e-12)
    mesh = TriMesh(positions=positions, indices=faces, colors=colors, normals=nrm)
    return _fill_missing_normals(mesh)


def _fill_missing_normals(mesh: TriMesh) -> TriMesh:
    """Replace zero-length interpolated normals with area-weighted face normals."""
    if mesh.num_faces == 0:
        return mesh
    bad = np.linalg.norm(mesh.normals, axis=1) < 1e-12
    if not np.any(bad):
        return mesh
    p, f = mesh.positions, mesh.indices
    fn = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])  # area-weighted
    acc = np.zeros_like(mesh.normals)
    for c in range(3):
        np.add.at(acc, f[:, c], fn)
    lens = np.linalg.norm(acc, axis=1, keepdims=True)
    acc = np.divide(acc, lens, out=np.zeros_like(acc), where=lens > 1e-300)
    acc[lens[:, 0] <= 1e-300] = (0.0, 0.0, 1.0)
    normals = np.where(bad[:, None], acc, mesh.normals)
    return TriMesh(positions=mesh.positions, indices=mesh.indices, colors=mesh.colors,
                   normals=normals, metallic=mesh.metallic, roughness=mesh.roughness)


def vertex_position_jacobian(grid: TetGrid, edge, wrt: str):
    """Derivative of the crossing vertex on a lattice edge.

    edge is a (global_a, global_b) vertex pair with opposite signs; wrt is
    one of s_a, s_b (3-vectors) or o_a, o_b (3x3 matrices). Derivatives are
    taken in canonical low-high edge order, matching marching_tets.
    """
    ga, gb = int(edge[0]), int(edge[1])
    if ga > gb:
        ga, gb = gb, ga
        wrt = {"s_a": "s_b", "s_b": "s_a", "o_a": "o_b", "o_b": "o_a"}[wrt]
    s_a, s_b = float(grid.sdf[ga]), float(grid.sdf[gb])
    if not s_a * s_b < 0:
        raise IsosurfaceError("edge does not cross the isosurface")
    lat = grid.vertex_positions()
    a = lat[ga] + grid.offsets[ga]
    b = lat[gb] + grid.offsets[gb]
    tau = s_a / (s_a - s_b)
    if wrt == "s_a":
        return (b - a) * (-s_b / (s_a - s_b) ** 2)
    if wrt == "s_b":
        return (b - a) * (s_a / (s_a - s_b) ** 2)
    if wrt == "o_a":
        return (1.0 - tau) * np.eye(3)
    if wrt == "o_b":
        return tau * np.eye(3)
    raise IsosurfaceError(f"unknown wrt {wrt!r}")


def crossing_position(grid: TetGrid, edge) -> np.ndarray:
    """The interpolated vertex for a crossing edge (finite-difference probe)."""
    ga, gb = sorted((int(edge[0]), int(edge[1])))
    s_a, s_b = float(grid.sdf[ga]), float(grid.sdf[gb])
    if not s_a * s_b < 0:
        raise IsosurfaceError("edge does not cross the isosurface")
    lat = grid.vertex_positions()
    a = lat[ga] + grid.offsets[ga]
    b = lat[gb] + grid.offsets[gb]
    tau = s_a / (s_a - s_b)
    return a + tau * (b - a)


def mesh_edges(indices: np.ndarray) -> np.ndarray:
    """Unique undirected edges of a face array."""
    if len(indices) == 0:
        return np.zeros((0, 2), np.int64)
    e = np.concatenate([indices[:, [0, 1]], indices[:, [1, 2]], indices[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def mesh_stats(mesh: TriMesh) -> dict:
    """Counts, Euler characteristic, and manifoldness summary."""
    f = mesh.indices
    if len(f) == 0:
        return {"vertices": 0, "edges": 0, "faces": 0, "euler": 0,
                "boundary_edges": 0, "nonmanifold_edges": 0}
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    v_used = np.unique(f)
    return {
        "vertices": int(len(v_used)),
        "edges": int(len(uniq)),
        "faces": int(len(f)),
        "euler": int(len(v_used) - len(uniq) + len(f)),
        "boundary_edges": int(np.sum(counts == 1)),
        "nonmanifold_edges": int(np.sum(counts > 2)),
    }


def weld_and_orient(mesh: TriMesh, area_eps: float = 1e-16) -> TriMesh:
    """Drop degenerate triangles, merge exact-duplicate vertices, and flip
    any triangle whose winding disagrees with its vertices' field normals.

    Non-manifold edges are reported via logging, never repaired.
    """
    if mesh.num_faces == 0:
        return mesh
    p = mesh.positions
    # merge bitwise-identical positions (edge-key dedup upstream makes this
    # a no-op for MT output unless tau hit 0/1 on touching edges)
    _, first, remap = np.unique(p.view([("", p.dtype)] * 3), return_index=True,
                                return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    new_ids = rank[remap.ravel()]
    keep_rows = np.sort(first)
    positions = p[keep_rows]
    colors = mesh.colors[keep_rows] if mesh.colors is not None else None
    normals = mesh.normals[keep_rows] if mesh.normals is not None else None
    faces = new_ids[mesh.indices]

    fn = np.cross(positions[faces[:, 1]] - positions[faces[:, 0]],
                  positions[faces[:, 2]] - positions[faces[:, 0]])
    area2 = np.linalg.norm(fn, axis=1)
    good = area2 > 2 * area_eps
    faces = faces[good]
    fn = fn[good]
    if normals is not None and len(faces):
        vote = normals[faces].sum(axis=1)
        flip = np.einsum("fi,fi->f", vote, fn) < 0
        if np.any(flip):
            faces[flip] = faces[flip][:, [0, 2, 1]]
    out = TriMesh(positions=positions, indices=faces, colors=colors, normals=normals,
                  metallic=mesh.metallic, roughness=mesh.roughness)
    stats = mesh_stats(out)
    if stats["nonmanifold_edges"]:
        log.warning("mesh has %d non-manifold edges", stats["nonmanifold_edges"])
    return out


def extract_mesh(samples: GridSamples, offsets: Optional[np.ndarray] = None,
                 metallic: float = 0.0, roughness: float = 0.5) -> TriMesh:
    """sample_grid output -> welded, oriented triangle mesh."""
    grid = TetGrid.from_samples(samples, offsets)
    mesh = marching_tets(grid)
    mesh = weld_and_orient(mesh)
    return TriMesh(positions=mesh.positions, indices=mesh.indices, colors=mesh.colors,
                   normals=mesh.normals, metallic=metallic, roughness=roughness)


def sample_surface(mesh: TriMesh, count: int, seed: int = 0):
    """Area-weighted random points on the mesh; returns (points, colors)."""
    from . import rng

    if mesh.num_faces == 0:
        raise IsosurfaceError("cannot sample an empty mesh")
    p, f = mesh.positions, mesh.indices
    cross = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    total = area.sum()
    if total <= 0:
        raise IsosurfaceError("mesh has zero surface area")
    gen = rng.generator(rng.derive_seed(seed, "isosurface/sample-surface"))
    tri = gen.choice(len(f), size=count, p=area / total)
    u = gen.random((count, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    w = np.stack([1 - u[:, 0] - u[:, 1], u[:, 0], u[:, 1]], axis=1)
    pts = np.einsum("sc,sci->si", w, p[f[tri]])
    cols = None
    if mesh.colors is not None:
        cols = np.clip(np.einsum("sc,sci->si", w, mesh.colors[f[tri]]), 0, 1)
    return pts, cols
