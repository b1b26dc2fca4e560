"""Seam closing by position-based constraint relaxation.

A deterministic stand-in for running a cloth simulator with stitch
constraints: stitched vertex pairs are pulled toward their midpoint, then
mesh edges are projected back toward their rest lengths. Both projections
are Jacobi style (corrections accumulated, then averaged per vertex), so
results do not depend on constraint order. There is no collision handling,
gravity or bending.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .core import BadParams, BoundaryPointSet, GarmentMesh, PointStitchSet, UnmappablePoint

SNAP_PX = 2.0


@dataclass(frozen=True)
class RelaxParams:
    stitch_stiffness: float = 0.5
    edge_iters: int = 4
    max_outer: int = 500
    gap_tol: float = 0.0025  # meters
    strain_limit: float = 0.02  # reported against, not enforced

    def __post_init__(self):
        if not 0 < self.stitch_stiffness <= 1:
            raise BadParams("stitch_stiffness must be in (0, 1]")
        if self.edge_iters < 0 or self.max_outer < 0:
            raise BadParams("edge_iters and max_outer must be non-negative")
        if self.gap_tol < 0 or self.strain_limit <= 0:
            raise BadParams("gap_tol must be non-negative and strain_limit positive")


@dataclass(frozen=True, eq=False)
class Constraints:
    stitches: np.ndarray  # (S, 2) vertex pairs, rest distance 0
    edges: np.ndarray  # (E, 2) vertex pairs
    rest: np.ndarray  # (E,) rest lengths
    duplicates: int = 0  # stitch pairs dropped after snapping to vertices


@dataclass
class RelaxReport:
    energy: list[float] = field(default_factory=list)  # sum of squared stitch gaps; [0] is the initial state
    max_gap: float = 0.0
    max_strain: float = 0.0
    iterations: int = 0
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "max_gap": self.max_gap,
            "max_strain": self.max_strain,
            "energy": list(self.energy),
        }


def mesh_edges(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges of a triangle list, sorted."""
    if len(faces) == 0:
        return np.zeros((0, 2), np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]).astype(np.int64)
    e.sort(axis=1)
    n = int(e.max()) + 1
    key = np.unique(e[:, 0] * n + e[:, 1])
    return np.stack([key // n, key % n], axis=1)


def snap_points(
    mesh: GarmentMesh, points: BoundaryPointSet, rows: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest same-panel mesh vertex (by UV) for each boundary point row, and its UV distance."""
    rows = np.arange(len(points)) if rows is None else np.asarray(rows)
    out = np.full(len(rows), -1, np.int64)
    dist = np.zeros(len(rows))
    for pid in np.unique(points.panel_ids[rows]):
        sel = np.flatnonzero(points.panel_ids[rows] == pid)
        verts = np.flatnonzero(mesh.panel_ids == pid)
        if len(verts) == 0:
            raise UnmappablePoint(f"panel {int(pid)} has no mesh vertices")
        d, k = cKDTree(mesh.uvs[verts]).query(points.uv[rows[sel]])
        limit = SNAP_PX * points.pixel_pitch[rows[sel]]
        bad = np.flatnonzero(d > limit + 1e-12)
        if len(bad):
            r = int(rows[sel[bad[0]]])
            raise UnmappablePoint(f"boundary point {r} (panel {int(pid)}) is {d[bad[0]]:.4g} m from the nearest vertex")
        out[sel] = verts[k]
        dist[sel] = d
    return out, dist


def build_constraints(mesh: GarmentMesh, stitches: PointStitchSet, points: BoundaryPointSet) -> Constraints:
    """Stitch and edge constraints on ``mesh``.

    Stitched points snap to their nearest vertex. Pairs that collapse onto
    one vertex or repeat another pair are dropped, and so are pairs that
    would tie a vertex to two different partners (such pairs cannot close
    together); the pair with the smaller snap distance wins. ``duplicates``
    counts every dropped pair.
    """
    edges = mesh_edges(mesh.faces)
    rest = np.linalg.norm(mesh.positions[edges[:, 0]] - mesh.positions[edges[:, 1]], axis=1)
    if len(stitches) == 0:
        return Constraints(np.zeros((0, 2), np.int64), edges, rest, 0)
    flat, dist = snap_points(mesh, points, stitches.pairs.ravel())
    pairs = np.sort(flat.reshape(-1, 2), axis=1)
    cost = dist.reshape(-1, 2).sum(axis=1)
    used: set[int] = set()
    keep = []
    for k in np.argsort(cost, kind="stable"):
        a, b = int(pairs[k, 0]), int(pairs[k, 1])
        if a == b or a in used or b in used:
            continue
        used.update((a, b))
        keep.append(k)
    kept = pairs[np.sort(np.array(keep, np.int64))]
    return Constraints(kept.reshape(-1, 2), edges, rest, len(stitches) - len(kept))


def stitch_gaps(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)


def edge_strain(x: np.ndarray, c: Constraints) -> np.ndarray:
    if len(c.edges) == 0:
        return np.zeros(0)
    length = np.linalg.norm(x[c.edges[:, 0]] - x[c.edges[:, 1]], axis=1)
    ok = c.rest > 0
    return np.where(ok, np.abs(length / np.where(ok, c.rest, 1.0) - 1.0), 0.0)


def _averaging_operator(pairs: np.ndarray, nv: int) -> sparse.csr_matrix:
    """Sparse map from per-pair corrections (applied +c to the first vertex, -c to
    the second) to per-vertex displacements averaged over each vertex's pairs."""
    k = len(pairs)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(k), np.arange(k)])
    vals = np.concatenate([np.ones(k), -np.ones(k)])
    count = np.bincount(rows, minlength=nv).astype(np.float64)
    vals = vals / count[rows]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(nv, k))


def relax_seams(
    mesh: GarmentMesh, constraints: Constraints, params: RelaxParams | None = None
) -> tuple[GarmentMesh, RelaxReport]:
    """Close stitched pairs while holding mesh edges near their rest length.

    Each outer iteration moves both ends of every stitch ``stiffness / 2``
    of the way toward their midpoint, then runs ``edge_iters`` edge-length
    projections. Stops once the largest stitch gap is within ``gap_tol``;
    ``converged`` is False when ``max_outer`` is reached first. Edge strain
    is measured and reported, not enforced.
    """
    params = params or RelaxParams()
    x = np.array(mesh.positions, dtype=np.float64)
    s = constraints.stitches
    e = constraints.edges
    rest = constraints.rest
    nv = len(x)
    beta = params.stitch_stiffness
    stitch_op = _averaging_operator(s, nv)
    edge_op = _averaging_operator(e, nv)

    report = RelaxReport()
    gaps = stitch_gaps(x, s)
    report.energy.append(float(np.sum(gaps**2)))
    it = 0
    while len(s) and gaps.max() > params.gap_tol and it < params.max_outer:
        x += stitch_op @ (0.5 * beta * (x[s[:, 1]] - x[s[:, 0]]))
        for _ in range(params.edge_iters if len(e) else 0):
            v = x[e[:, 1]] - x[e[:, 0]]
            length = np.linalg.norm(v, axis=1)
            scale = np.where(length > 0, (length - rest) / np.where(length > 0, length, 1.0), 0.0)
            x += edge_op @ (0.5 * scale[:, None] * v)
        it += 1
        gaps = stitch_gaps(x, s)
        report.energy.append(float(np.sum(gaps**2)))
    report.iterations = it
    report.max_gap = float(gaps.max()) if len(s) else 0.0
    strain = edge_strain(x, constraints)
    report.max_strain = float(strain.max()) if len(strain) else 0.0
    report.converged = report.max_gap <= params.gap_tol
    return mesh.with_positions(x), report
