from __future__ import annotations

import functools

import numpy as np
import pytest

from garmage.codec import encode_garment
from garmage.contour import resample_contours
from garmage.core import BoundaryPointSet, GarmentMesh
from garmage.matcher import run_matcher
from garmage.synth import SynthParams, _grid_faces, generate


def grid_panel(fn, n=20, width=1.0, height=1.0, panel_id=0, base=0):
    """Regular grid panel over [0, width] x [0, height] in UV, with ``fn(uv) -> pos3``."""
    u, v = np.meshgrid(np.linspace(0, width, n), np.linspace(0, height, n))
    uv = np.stack([u.ravel(), v.ravel()], axis=1)
    return fn(uv), uv, np.full(len(uv), panel_id), _grid_faces(n, n, base)


def single_panel(fn, **kw) -> GarmentMesh:
    pos, uv, pid, faces = grid_panel(fn, **kw)
    return GarmentMesh(pos, uv, pid, faces)


def cylinder(radius=0.3):
    return lambda uv: np.stack(
        [radius * np.sin(uv[:, 0] / radius), uv[:, 1], radius * np.cos(uv[:, 0] / radius)], axis=1
    )


def plane_z0(uv):
    return np.column_stack([uv, np.zeros(len(uv))])


@functools.lru_cache(maxsize=None)
def template_run(template: str, noise_3d: float = 0.0, seed: int = 0):
    """Cached synth -> encode -> contour -> match chain for one template."""
    mesh, gt = generate(template, SynthParams(noise_3d=noise_3d, seed=seed))
    g = encode_garment(mesh)
    points = resample_contours(g)
    result = run_matcher(points)
    return mesh, gt, g, points, result


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE: dict[float, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def tube():
    return template_run("tube_skirt")


def jitter_sampling(points: BoundaryPointSet, sigma_px: float, seed: int) -> BoundaryPointSet:
    """Move each sample along its own panel contour by N(0, sigma_px) pixels of arc length, keeping order."""
    rng = np.random.default_rng(seed)
    uv = points.uv.copy()
    pos = points.pos3.copy()
    for pid in np.unique(points.panel_ids):
        rows = points.panel_slice(int(pid))
        cu = np.vstack([points.uv[rows], points.uv[rows[:1]]])
        cp = np.vstack([points.pos3[rows], points.pos3[rows[:1]]])
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(cu, axis=0), axis=1))])
        t = np.sort((s[:-1] + rng.normal(size=len(rows)) * sigma_px * points.pixel_pitch[rows]) % s[-1])
        uv[rows] = np.stack([np.interp(t, s, cu[:, k]) for k in range(2)], axis=1)
        pos[rows] = np.stack([np.interp(t, s, cp[:, k]) for k in range(3)], axis=1)
    return BoundaryPointSet(
        points.panel_ids, points.loop_index, pos, uv, points.tangent3, points.tangent_uv, points.arc_param, points.pixel_pitch
    )


# --------------------------------------------------------------------------- random artifacts


def random_garmage(rng: np.random.Generator):
    """Small random Garmage: binary alpha, float32 channels, random frames and labels."""
    from garmage.core import Garmage, GarmagePanel, GeometryImage, PanelFrame

    panels = []
    for k in range(int(rng.integers(1, 4))):
        h, w = (int(x) for x in rng.integers(2, 17, size=2))
        ch = rng.uniform(-1, 1, size=(h, w, 4)).astype(np.float32)
        ch[..., 3] = rng.integers(0, 2, size=(h, w))
        frame = PanelFrame(rng.normal(size=3), rng.uniform(0.01, 1, 3), rng.uniform(0.01, 2, 2))
        label = "".join(rng.choice(list("abcxyz_ éü漢"), size=int(rng.integers(0, 8))))
        panels.append(GarmagePanel(GeometryImage(ch), frame, label))
    return Garmage(tuple(panels))


def random_pattern(rng: np.random.Generator):
    """Random pattern document with closed loops and in-range stitches."""
    from garmage.core import Segment, SegmentStitch, SewingPatternDoc, StitchSide, VectorPanel

    panels = []
    for pid in range(int(rng.integers(1, 5))):
        m = int(rng.integers(3, 9))
        pts = rng.normal(scale=0.5, size=(m, 2))
        segs = tuple(Segment(tuple(pts[i]), tuple(pts[(i + 1) % m]), i, (i + 1) % m) for i in range(m))
        panels.append(VectorPanel(pid, segs, f"panel {pid}", m))
    stitches = []
    for _ in range(int(rng.integers(0, 6))):
        sides = []
        for _ in range(2):
            p = panels[int(rng.integers(len(panels)))]
            t = np.sort(rng.uniform(0, 1, 2))
            sides.append(StitchSide(p.panel_id, int(rng.integers(len(p.segments))), float(t[0]), float(t[1])))
        stitches.append(SegmentStitch(sides[0], sides[1], bool(rng.integers(2))))
    return SewingPatternDoc(tuple(panels), tuple(stitches))


def random_mesh(rng: np.random.Generator) -> GarmentMesh:
    """Random multi-panel triangle soup with per-panel faces and stitches across panels."""
    n_panels = int(rng.integers(1, 4))
    pos, uv, pid, faces = [], [], [], []
    base = 0
    for p in range(n_panels):
        nv = int(rng.integers(3, 12))
        pos.append(rng.normal(size=(nv, 3)))
        uv.append(rng.uniform(0, 2, size=(nv, 2)))
        pid.append(np.full(nv, p))
        faces.append(base + np.array([rng.choice(nv, 3, replace=False) for _ in range(int(rng.integers(1, 6)))]))
        base += nv
    pid = np.concatenate(pid)
    stitches = []
    if n_panels > 1:
        for _ in range(int(rng.integers(0, 5))):
            a = int(rng.integers(base))
            others = np.flatnonzero(pid != pid[a])
            stitches.append((a, int(rng.choice(others))))
    return GarmentMesh(np.concatenate(pos), np.concatenate(uv), pid, np.concatenate(faces), np.array(stitches, np.int64).reshape(-1, 2))


def assert_patterns_close(a, b, tol=1e-9):
    """Structural equality of two pattern documents, numbers within ``tol``."""
    assert len(a.panels) == len(b.panels)
    for pa, pb in zip(a.panels, b.panels):
        assert (pa.panel_id, pa.label, pa.n_points, len(pa.segments)) == (pb.panel_id, pb.label, pb.n_points, len(pb.segments))
        for sa, sb in zip(pa.segments, pb.segments):
            assert (sa.start, sa.end) == (sb.start, sb.end)
            np.testing.assert_allclose([*sa.p0, *sa.p1], [*sb.p0, *sb.p1], rtol=0, atol=tol)
    assert len(a.stitches) == len(b.stitches)
    for sa, sb in zip(a.stitches, b.stitches):
        assert sa.reversed == sb.reversed
        for x, y in ((sa.a, sb.a), (sa.b, sb.b)):
            assert (x.panel, x.segment) == (y.panel, y.segment)
            np.testing.assert_allclose([x.t0, x.t1], [y.t0, y.t1], rtol=0, atol=tol)


def assert_meshes_equal(a: GarmentMesh, b: GarmentMesh):
    for name in ("positions", "uvs", "panel_ids", "faces", "stitches"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


# --------------------------------------------------------------------------- curves


def rectangle_loop(n=400, w=0.8, h=0.5):
    """About ``n`` points counter-clockwise around a w x h rectangle.

    Every corner is a sample; each side gets a share of the points in
    proportion to its length (at least 2 per side).
    """
    corners = np.array([[0, 0], [w, 0], [w, h], [0, h]], float)
    per = 2 * (w + h)
    out = []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        m = max(2, int(round(n * np.linalg.norm(b - a) / per)))
        t = np.arange(m)[:, None] / m
        out.append(a * (1 - t) + b * t)
    return np.concatenate(out)


def _point_polyline_distance(pts, poly):
    """Exact distance from each row of ``pts`` to the polyline ``poly``."""
    a, b = poly[:-1], poly[1:]
    ab = b - a
    rel = pts[:, None, :] - a[None]
    t = np.clip(np.einsum("pkd,kd->pk", rel, ab) / np.maximum((ab**2).sum(1), 1e-300), 0, 1)
    return np.linalg.norm(rel - t[..., None] * ab[None], axis=2).min(axis=1)


def dense_hausdorff(poly, curve, step=2e-4):
    """Symmetric Hausdorff distance between two polylines, each densified to ``step``."""

    def densify(p):
        out = [p[:1]]
        for a, b in zip(p[:-1], p[1:]):
            m = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
            t = np.arange(1, m + 1)[:, None] / m
            out.append(a * (1 - t) + b * t)
        return np.concatenate(out)

    return max(
        _point_polyline_distance(densify(poly), curve).max(),
        _point_polyline_distance(densify(curve), poly).max(),
    )
