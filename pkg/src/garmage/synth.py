"""Parametric garments with exact ground-truth stitches.

Every template is a frustum (or cylinder) cut into vertical strips. Each
strip is developable, so its UV layout is an exact isometric unrolling and
seam partners share both 3D position and arc parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BadParams, GarmentMesh

TEMPLATES = ("tube_skirt", "two_panel_sleeve", "four_panel_skirt")


@dataclass(frozen=True)
class SynthParams:
    radius: float = 0.3
    height: float = 1.0
    density: int = 32
    noise_uv_px: float = 0.0
    noise_3d: float = 0.0
    gap: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class Seam:
    """One ground-truth seam; vertex lists are ordered by height (bottom to top)."""

    panel_a: int
    panel_b: int
    vertices_a: tuple[int, ...]
    vertices_b: tuple[int, ...]
    uv_a: np.ndarray = field(repr=False)  # panel-local UV endpoints (2, 2)
    uv_b: np.ndarray = field(repr=False)
    reversed: bool = True


@dataclass(frozen=True)
class PanelTransform:
    """Rigid offset applied to a panel after construction: x' = R (x - c) + c + t."""

    rotation: np.ndarray
    center: np.ndarray
    translation: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) @ self.rotation.T + self.center + self.translation

    def invert(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center - self.translation) @ self.rotation + self.center


@dataclass(frozen=True)
class GroundTruth:
    seams: tuple[Seam, ...]
    transforms: tuple[PanelTransform, ...]
    uv_origin: np.ndarray  # per-panel UV bbox min, to convert to panel-local UV

    @property
    def pairs(self) -> np.ndarray:
        rows = [(a, b) for s in self.seams for a, b in zip(s.vertices_a, s.vertices_b)]
        return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _rotvec(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle == 0.0:
        return np.eye(3)
    a = w / angle
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _jitter(rng: np.random.Generator, x: np.ndarray, center: np.ndarray, rms: float) -> tuple[np.ndarray, np.ndarray]:
    """Random rigid motion whose (first-order) RMS vertex displacement is ``rms``."""
    r = x - center
    size = np.sqrt((r**2).sum(axis=1).mean())
    t0 = rng.normal(size=3)
    w0 = rng.normal(size=3) / size  # rotation and translation contribute comparably
    disp = np.cross(w0, r) + t0
    k = rms / np.sqrt((disp**2).sum(axis=1).mean())
    return _rotvec(k * w0), k * t0


def _strip(theta0, theta1, r_bottom, r_top, height, n_u, n_v):
    """Grid over one angular strip of a frustum: 3D positions and exact UV."""
    th = np.linspace(theta0, theta1, n_u)
    z = np.linspace(0.0, height, n_v)
    T, Z = np.meshgrid(th, z)  # rows = height
    R = r_bottom + (r_top - r_bottom) * Z / height
    pos = np.stack([R * np.cos(T), R * np.sin(T), Z], axis=-1)
    theta_mid = 0.5 * (theta0 + theta1)
    dr = r_top - r_bottom
    if abs(dr) < 1e-12:
        uv = np.stack([r_bottom * (T - theta0), Z], axis=-1)
    else:
        slant = np.hypot(height, dr)
        # slant distance to the apex and the unrolled sector angle
        rho = R * slant / abs(dr)
        phi = (T - theta_mid) * abs(dr) / slant
        uv = np.stack([rho * np.sin(phi), np.sign(dr) * rho * np.cos(phi)], axis=-1)
    return pos.reshape(-1, 3), uv.reshape(-1, 2)


def _grid_faces(n_u, n_v, base):
    idx = np.arange(n_u * n_v).reshape(n_v, n_u) + base
    a, b = idx[:-1, :-1], idx[:-1, 1:]
    c, d = idx[1:, 1:], idx[1:, :-1]
    f = np.empty((2 * a.size, 3), np.int64)
    f[0::2] = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)
    f[1::2] = np.stack([a.ravel(), c.ravel(), d.ravel()], axis=1)
    return f


def _frustum(n_panels, r_bottom, r_top, height, density):
    n_v = density
    circ = np.pi * (r_bottom + r_top) / n_panels
    n_u = max(density, int(np.ceil(density * circ / height)))
    positions, uvs, pids, faces, seams_idx = [], [], [], [], []
    base = 0
    for i in range(n_panels):
        t0 = 2 * np.pi * i / n_panels
        t1 = 2 * np.pi * (i + 1) / n_panels
        pos, uv = _strip(t0, t1, r_bottom, r_top, height, n_u, n_v)
        f = _grid_faces(n_u, n_v, base)
        # faces counter-clockwise in UV, with the 3D normal pointing outward
        a, b, c = f[0] - base
        e1, e2 = uv[b] - uv[a], uv[c] - uv[a]
        area = e1[0] * e2[1] - e1[1] * e2[0]
        n3 = np.cross(pos[b] - pos[a], pos[c] - pos[a])
        tm = 0.5 * (t0 + t1)
        outward = np.dot(n3, [np.cos(tm), np.sin(tm), 0.0]) > 0
        if (area > 0) != outward:
            uv = uv * np.array([-1.0, 1.0])
            area = -area
        if area < 0:
            f = f[:, ::-1]
        positions.append(pos)
        uvs.append(uv)
        pids.append(np.full(len(pos), i))
        faces.append(f)
        grid = np.arange(n_u * n_v).reshape(n_v, n_u) + base
        seams_idx.append((grid[:, 0].copy(), grid[:, -1].copy()))  # theta0 side, theta1 side
        base += len(pos)
    return (np.concatenate(positions), np.concatenate(uvs), np.concatenate(pids), np.concatenate(faces), seams_idx)


def generate(template: str, params: SynthParams | None = None) -> tuple[GarmentMesh, GroundTruth]:
    """Build a template garment and its ground truth.

    Noise: ``noise_uv_px`` perturbs boundary-vertex UVs (pixels at the
    default 256 codec grid); ``noise_3d`` applies a per-panel random rigid
    motion with that RMS vertex displacement (meters); ``gap`` pushes panels radially apart so seam
    partners start ``gap`` meters away from each other.
    """
    p = params or SynthParams()
    if template not in TEMPLATES:
        raise BadParams(f"unknown template {template!r}; choose from {', '.join(TEMPLATES)}")
    if p.density < 4:
        raise BadParams("density must be >= 4")
    if p.radius <= 0 or p.height <= 0 or p.noise_uv_px < 0 or p.noise_3d < 0 or p.gap < 0:
        raise BadParams("radius and height must be positive; noise and gap non-negative")
    if template == "tube_skirt":
        n_panels, rb, rt = 2, p.radius, p.radius
    elif template == "two_panel_sleeve":
        n_panels, rb, rt = 2, 0.6 * p.radius, p.radius
    else:
        n_panels, rb, rt = 4, 1.6 * p.radius, p.radius

    pos, uv, pids, faces, sides = _frustum(n_panels, rb, rt, p.height, p.density)
    rng = np.random.default_rng(p.seed)
    mesh0 = GarmentMesh(pos, uv, pids, faces)
    boundary = mesh0.boundary_vertices()

    if p.noise_uv_px > 0:
        for i in range(n_panels):
            sel = (pids == i) & boundary
            ext = uv[pids == i].max(axis=0) - uv[pids == i].min(axis=0)
            pitch = ext.max() / (256 - 1 - 4)
            # keep seam vertices fixed so ground truth stays exact
            seam_v = np.concatenate(sides[i])
            sel[seam_v] = False
            uv[sel] += rng.normal(scale=p.noise_uv_px * pitch, size=(int(sel.sum()), 2))

    transforms = []
    for i in range(n_panels):
        sel = pids == i
        c = pos[sel].mean(axis=0)
        t = np.zeros(3)
        R = np.eye(3)
        if p.gap > 0:
            radial = np.array([c[0], c[1], 0.0])
            t = t + radial / np.linalg.norm(radial) * p.gap / (2 * np.sin(np.pi / n_panels))
        if p.noise_3d > 0:
            R, dt = _jitter(rng, pos[sel], c, p.noise_3d)
            t = t + dt
        tf = PanelTransform(R, c, t)
        pos[sel] = tf.apply(pos[sel])
        transforms.append(tf)

    origin = np.stack([uv[pids == i].min(axis=0) for i in range(n_panels)])
    seams = []
    for i in range(n_panels):
        j = (i + 1) % n_panels
        va, vb = sides[i][1], sides[j][0]  # theta1 side of i meets theta0 side of j
        seams.append(
            Seam(
                i, j, tuple(int(v) for v in va), tuple(int(v) for v in vb),
                uv[va[[0, -1]]] - origin[i], uv[vb[[0, -1]]] - origin[j],
            )
        )
    gt = GroundTruth(tuple(seams), tuple(transforms), origin)
    mesh = GarmentMesh(pos, uv, pids, faces, gt.pairs)
    return mesh, gt


def flat_seam(width: float = 0.3, height: float = 0.3, density: int = 6, gap: float = 0.05) -> tuple[GarmentMesh, GroundTruth]:
    """Two flat rectangles in z=0 side by side, ``gap`` apart, stitched along the facing edges."""
    n_u = density
    n_v = density
    positions, uvs, pids, faces, sides = [], [], [], [], []
    base = 0
    for i, x0 in enumerate((0.0, width + gap)):
        u = np.linspace(0.0, width, n_u)
        v = np.linspace(0.0, height, n_v)
        U, V = np.meshgrid(u, v)
        uv = np.stack([U.ravel(), V.ravel()], axis=1)
        pos = np.stack([U.ravel() + x0, V.ravel(), np.zeros(U.size)], axis=1)
        positions.append(pos)
        uvs.append(uv)
        pids.append(np.full(len(pos), i))
        faces.append(_grid_faces(n_u, n_v, base))
        grid = np.arange(n_u * n_v).reshape(n_v, n_u) + base
        sides.append((grid[:, 0].copy(), grid[:, -1].copy()))
        base += len(pos)
    pos, uv = np.concatenate(positions), np.concatenate(uvs)
    pids = np.concatenate(pids)
    va, vb = sides[0][1], sides[1][0]
    seam = Seam(0, 1, tuple(int(x) for x in va), tuple(int(x) for x in vb), uv[va[[0, -1]]], uv[vb[[0, -1]]])
    tf = tuple(PanelTransform(np.eye(3), np.zeros(3), np.zeros(3)) for _ in range(2))
    gt = GroundTruth((seam,), tf, np.zeros((2, 2)))
    return GarmentMesh(pos, uv, pids, np.concatenate(faces), gt.pairs), gt


@dataclass(frozen=True, eq=False)
class PointLabels:
    """Ground-truth seam membership of resampled boundary points."""

    seam: np.ndarray  # seam index, -1 when off-seam
    side: np.ndarray  # 0 for the seam's panel_a side, 1 for panel_b
    arc: np.ndarray  # meters from the seam's bottom end
    spacing: np.ndarray  # UV distance between consecutive points of the owning panel


def label_points(points, gt: GroundTruth, tol_px: float = 1.5) -> PointLabels:
    """Attach each boundary point to the ground-truth seam it lies on, if any."""
    m = len(points)
    seam = np.full(m, -1, np.int64)
    side = np.zeros(m, np.int64)
    arc = np.zeros(m)
    spacing = np.zeros(m)
    for pid in np.unique(points.panel_ids):
        rows = points.panel_slice(int(pid))
        uv = points.uv[rows]
        spacing[rows] = np.linalg.norm(np.diff(np.vstack([uv, uv[:1]]), axis=0), axis=1).mean()
    for k, s in enumerate(gt.seams):
        for sd, (pid, ends) in enumerate(((s.panel_a, s.uv_a), (s.panel_b, s.uv_b))):
            rows = np.flatnonzero(points.panel_ids == pid)
            a, b = ends[0], ends[1]
            axis = b - a
            length = np.linalg.norm(axis)
            t = np.clip((points.uv[rows] - a) @ axis / length**2, 0.0, 1.0)
            d = np.linalg.norm(points.uv[rows] - (a + t[:, None] * axis), axis=1)
            on = d <= tol_px * points.pixel_pitch[rows]
            seam[rows[on]] = k
            side[rows[on]] = sd
            arc[rows[on]] = t[on] * length
    return PointLabels(seam, side, arc, spacing)


def stitch_metrics(stitches, points, gt: GroundTruth, arc_tol: float = 2.0) -> dict[str, float]:
    """Point-level precision/recall of predicted pairs against the seams.

    A pair is correct when both points lie on the same seam, on opposite
    sides, and their distances from the seam's bottom differ by at most
    ``arc_tol`` point spacings.
    """
    lab = label_points(points, gt)
    correct = np.zeros(len(stitches), bool)
    for n, (i, j) in enumerate(stitches.pairs):
        if lab.seam[i] >= 0 and lab.seam[i] == lab.seam[j] and lab.side[i] != lab.side[j]:
            tol = arc_tol * max(lab.spacing[i], lab.spacing[j])
            correct[n] = abs(lab.arc[i] - lab.arc[j]) <= tol
    on_seam = lab.seam >= 0
    hit = np.zeros(len(points), bool)
    hit[stitches.pairs[correct].ravel()] = True
    if len(stitches):
        i, j = stitches.pairs[:, 0], stitches.pairs[:, 1]
        px = np.linalg.norm(points.pos3[i] - points.pos3[j], axis=1) / (0.5 * (points.pixel_pitch[i] + points.pixel_pitch[j]))
        mean_px = float(px.mean())
    else:
        mean_px = float("nan")
    return {
        "pairs": float(len(stitches)),
        "seam_points": float(on_seam.sum()),
        "precision": float(correct.mean()) if len(stitches) else 0.0,
        "recall": float(hit[on_seam].mean()) if on_seam.any() else 0.0,
        "mean_pair_px": mean_px,
    }
