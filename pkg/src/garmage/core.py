"""Domain types shared by every pipeline stage, and their validation.

All coordinates are meters. Arrays stored on the types are made read-only
at construction so instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage


class GarmageError(Exception):
    """Base class for every error raised by this package."""


class EmptyPanel(GarmageError):
    pass


class DegenerateUV(GarmageError):
    pass


class EmptyImage(GarmageError):
    pass


class MultiLoop(GarmageError):
    pass


class MaskEmpty(GarmageError):
    pass


class DegenerateLoop(GarmageError):
    pass


class UnmappablePoint(GarmageError):
    pass


class BadParams(GarmageError):
    pass


class NotConverged(GarmageError):
    """An iterative stage stopped at its iteration cap; its result is still usable."""


class PanelError(GarmageError):
    """Wraps a per-panel failure with the index of the offending panel."""

    def __init__(self, panel: int, cause: Exception):
        super().__init__(f"panel {panel}: {type(cause).__name__}: {cause}")
        self.panel = panel
        self.cause = cause


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GarmentMesh:
    """Triangulated garment with per-vertex UV, panel ids and stitch pairs."""

    positions: np.ndarray  # (V, 3)
    uvs: np.ndarray  # (V, 2), pattern-space meters
    panel_ids: np.ndarray  # (V,)
    faces: np.ndarray  # (F, 3)
    stitches: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))  # (S, 2)

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions, np.float64).reshape(-1, 3))
        object.__setattr__(self, "uvs", _frozen(self.uvs, np.float64).reshape(-1, 2))
        object.__setattr__(self, "panel_ids", _frozen(self.panel_ids, np.int64).reshape(-1))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        object.__setattr__(self, "stitches", _frozen(self.stitches, np.int64).reshape(-1, 2))

    @property
    def panels(self) -> list[int]:
        """Sorted distinct panel ids that own at least one face or vertex."""
        return sorted(int(p) for p in np.unique(self.panel_ids))

    def panel_faces(self, panel_id: int) -> np.ndarray:
        if len(self.faces) == 0:
            return self.faces
        return self.faces[self.panel_ids[self.faces[:, 0]] == panel_id]

    def boundary_vertices(self) -> np.ndarray:
        """Boolean mask of vertices lying on an edge used by exactly one face."""
        mask = np.zeros(len(self.positions), bool)
        if len(self.faces) == 0:
            return mask
        edges = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        mask[uniq[counts == 1].ravel()] = True
        return mask

    def with_positions(self, positions: np.ndarray) -> "GarmentMesh":
        return GarmentMesh(positions, self.uvs, self.panel_ids, self.faces, self.stitches)

    def with_stitches(self, stitches) -> "GarmentMesh":
        return GarmentMesh(self.positions, self.uvs, self.panel_ids, self.faces, np.asarray(stitches).reshape(-1, 2))


@dataclass(frozen=True)
class PanelFrame:
    """3D bounding box (center, per-axis half extents) plus 2D panel extents."""

    center_geo: tuple[float, float, float]
    scale_geo: tuple[float, float, float]
    scale_uv: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "center_geo", tuple(float(x) for x in self.center_geo))
        object.__setattr__(self, "scale_geo", tuple(float(x) for x in self.scale_geo))
        object.__setattr__(self, "scale_uv", tuple(float(x) for x in self.scale_uv))

    def as_vector(self) -> np.ndarray:
        """The 8 topological features: center (3), 3D scale (3), UV scale (2)."""
        return np.array([*self.center_geo, *self.scale_geo, *self.scale_uv], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class GeometryImage:
    """H x W x 4 float32 raster: normalized xyz in channels 0-2, alpha in 3."""

    channels: np.ndarray

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float32, copy=True)
        if ch.ndim != 3 or ch.shape[2] != 4:
            raise ValueError(f"expected an H x W x 4 array, got shape {ch.shape}")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    @property
    def alpha(self) -> np.ndarray:
        return self.channels[..., 3]

    @property
    def geometry(self) -> np.ndarray:
        return self.channels[..., :3]


@dataclass(frozen=True)
class GarmagePanel:
    image: GeometryImage
    frame: PanelFrame
    label: str = ""


@dataclass(frozen=True)
class Garmage:
    """Ordered per-panel geometry images with their frames."""

    panels: tuple[GarmagePanel, ...]

    def __post_init__(self):
        object.__setattr__(self, "panels", tuple(self.panels))

    def __len__(self) -> int:
        return len(self.panels)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.panels[0].image.height, self.panels[0].image.width

    def topology(self) -> np.ndarray:
        """N x 8 matrix of stacked frame vectors."""
        return np.stack([p.frame.as_vector() for p in self.panels])


@dataclass(frozen=True, eq=False)
class BoundaryPointSet:
    """Resampled contour points with paired 3D and UV coordinates.

    Rows are grouped per panel in panel order; within a panel ``loop_index``
    runs 0..k-1 along the counter-clockwise contour.
    """

    panel_ids: np.ndarray  # (M,)
    loop_index: np.ndarray  # (M,)
    pos3: np.ndarray  # (M, 3)
    uv: np.ndarray  # (M, 2)
    tangent3: np.ndarray  # (M, 3)
    tangent_uv: np.ndarray  # (M, 2)
    arc_param: np.ndarray  # (M,)
    pixel_pitch: np.ndarray  # (M,) UV meters per pixel of the owning panel

    def __post_init__(self):
        for name, dtype, width in [
            ("panel_ids", np.int64, None),
            ("loop_index", np.int64, None),
            ("pos3", np.float64, 3),
            ("uv", np.float64, 2),
            ("tangent3", np.float64, 3),
            ("tangent_uv", np.float64, 2),
            ("arc_param", np.float64, None),
            ("pixel_pitch", np.float64, None),
        ]:
            arr = _frozen(getattr(self, name), dtype)
            arr = arr.reshape(-1) if width is None else arr.reshape(-1, width)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.panel_ids)

    def panel_slice(self, panel_id: int) -> np.ndarray:
        """Row indices of one panel, ordered by loop index."""
        rows = np.flatnonzero(self.panel_ids == panel_id)
        return rows[np.argsort(self.loop_index[rows], kind="stable")]

    def panel_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.panel_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def subset(self, rows: Sequence[int]) -> "BoundaryPointSet":
        rows = np.asarray(rows, dtype=np.int64)
        return BoundaryPointSet(
            self.panel_ids[rows], self.loop_index[rows], self.pos3[rows], self.uv[rows],
            self.tangent3[rows], self.tangent_uv[rows], self.arc_param[rows], self.pixel_pitch[rows],
        )


@dataclass(frozen=True, eq=False)
class MatchMatrix:
    """(M'+1) x (M'+1) matching probabilities; the last row/column is slack."""

    probs: np.ndarray
    index_map: np.ndarray  # matrix row -> boundary point id
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, np.float64))
        object.__setattr__(self, "index_map", _frozen(self.index_map, np.int64).reshape(-1))

    @property
    def n(self) -> int:
        return len(self.index_map)


@dataclass(frozen=True, eq=False)
class PointStitchSet:
    """Unordered one-to-one boundary point pairs, stored with a < b."""

    pairs: np.ndarray  # (K, 2)
    confidence: np.ndarray  # (K,)

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        conf = np.array(self.confidence, dtype=np.float64).reshape(-1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0])) if len(pairs) else np.zeros(0, np.int64)
        object.__setattr__(self, "pairs", _frozen(pairs[order], np.int64).reshape(-1, 2))
        object.__setattr__(self, "confidence", _frozen(conf[order], np.float64))

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def empty(cls) -> "PointStitchSet":
        return cls(np.zeros((0, 2), np.int64), np.zeros(0))

    def partner_map(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for a, b in self.pairs:
            out[int(a)] = int(b)
            out[int(b)] = int(a)
        return out

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}


@dataclass(frozen=True)
class MatcherConfig:
    """Knobs of the stitch matcher. ``None`` means derive from the data."""

    temperature: float = 0.05
    sinkhorn_iters: int = 100
    sinkhorn_tol: float = 1e-9
    slack_logit: float = -5.0
    classifier_threshold: float = 0.5
    classifier_sigma: float | None = None
    # per-column weights over [pos3 x3, uv x2, tangent3 x3, arc_param]
    weights: tuple[float, ...] | None = None
    tangent_weight: float = 1.0
    p_min: float = 0.3


@dataclass(frozen=True)
class Segment:
    """Straight pattern edge. ``start``/``end`` index the panel's contour points."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    start: int = 0
    end: int = 0

    @property
    def length(self) -> float:
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))

    def point_at(self, t: float) -> np.ndarray:
        a, b = np.asarray(self.p0), np.asarray(self.p1)
        return a + t * (b - a)


@dataclass(frozen=True)
class VectorPanel:
    panel_id: int
    segments: tuple[Segment, ...]
    label: str = ""
    n_points: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def vertices(self) -> np.ndarray:
        return np.array([s.p0 for s in self.segments], dtype=np.float64)


@dataclass(frozen=True)
class StitchSide:
    panel: int
    segment: int
    t0: float
    t1: float


@dataclass(frozen=True)
class SegmentStitch:
    a: StitchSide
    b: StitchSide
    reversed: bool


@dataclass(frozen=True)
class SewingPatternDoc:
    panels: tuple[VectorPanel, ...]
    stitches: tuple[SegmentStitch, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "panels", tuple(self.panels))
        object.__setattr__(self, "stitches", tuple(self.stitches))

    def panel_by_id(self, panel_id: int) -> VectorPanel:
        for p in self.panels:
            if p.panel_id == panel_id:
                return p
        raise KeyError(panel_id)


# --------------------------------------------------------------------------- #
# validation


@dataclass(frozen=True)
class Violation:
    rule: str
    location: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.rule} at {self.location}: {self.detail}" if self.detail else f"{self.rule} at {self.location}"


def validate(asset) -> list[Violation]:
    """Return every violated invariant of ``asset``; an empty list means valid."""
    if isinstance(asset, GarmentMesh):
        return _validate_mesh(asset)
    if isinstance(asset, Garmage):
        return _validate_garmage(asset)
    if isinstance(asset, SewingPatternDoc):
        return _validate_pattern(asset)
    if isinstance(asset, BoundaryPointSet):
        return _validate_points(asset)
    if isinstance(asset, PanelFrame):
        return _validate_frame(asset, "frame")
    raise TypeError(f"cannot validate {type(asset).__name__}")


def _validate_mesh(mesh: GarmentMesh) -> list[Violation]:
    out: list[Violation] = []
    nv = len(mesh.positions)
    if len(mesh.uvs) != nv or len(mesh.panel_ids) != nv:
        out.append(Violation("vertex-arrays", "vertices", f"{nv} positions, {len(mesh.uvs)} uvs, {len(mesh.panel_ids)} panel ids"))
        return out
    if not np.all(np.isfinite(mesh.positions)) or not np.all(np.isfinite(mesh.uvs)):
        out.append(Violation("finite", "vertices", "non-finite coordinate"))
    faces = mesh.faces
    bad = np.flatnonzero(np.any((faces < 0) | (faces >= nv), axis=1)) if len(faces) else []
    for f in bad:
        out.append(Violation("face-index", f"face {int(f)}", f"references {faces[f].tolist()} with {nv} vertices"))
    ok = np.setdiff1d(np.arange(len(faces)), bad)
    if len(ok):
        pid = mesh.panel_ids[faces[ok]]
        spans = ok[np.any(pid != pid[:, :1], axis=1)]
        for f in spans:
            out.append(Violation("face-spans-panels", f"face {int(f)}", f"panel ids {mesh.panel_ids[faces[f]].tolist()}"))
        for f in ok[(faces[ok, 0] == faces[ok, 1]) | (faces[ok, 1] == faces[ok, 2]) | (faces[ok, 0] == faces[ok, 2])]:
            out.append(Violation("face-repeated-vertex", f"face {int(f)}"))
    boundary = mesh.boundary_vertices() if not len(bad) else None
    for s, (a, b) in enumerate(mesh.stitches):
        if not (0 <= a < nv and 0 <= b < nv):
            out.append(Violation("stitch-index", f"stitch {s}", f"({a}, {b}) with {nv} vertices"))
            continue
        if a == b:
            out.append(Violation("stitch-self", f"stitch {s}", f"vertex {a}"))
            continue
        if boundary is not None:
            for v in (a, b):
                if not boundary[v]:
                    out.append(Violation("stitch-not-boundary", f"stitch {s}", f"vertex {v} is interior"))
    return out


def _validate_frame(frame: PanelFrame, where: str) -> list[Violation]:
    out = []
    vec = frame.as_vector()
    if vec.shape != (8,):
        out.append(Violation("frame-width", where, f"{vec.size} components"))
    if not np.all(np.isfinite(vec)):
        out.append(Violation("frame-finite", where))
    if min(frame.scale_geo) <= 0 or min(frame.scale_uv) <= 0:
        out.append(Violation("frame-scale", where, f"scale_geo={frame.scale_geo} scale_uv={frame.scale_uv}"))
    return out


def alpha_loop_count(alpha: np.ndarray) -> tuple[int, int]:
    """(4-connected foreground components, enclosed background holes)."""
    fg = alpha >= 0.5
    _, n_fg = ndimage.label(fg, structure=ndimage.generate_binary_structure(2, 1))
    bg = np.pad(~fg, 1, constant_values=True)
    _, n_bg = ndimage.label(bg, structure=ndimage.generate_binary_structure(2, 2))
    return n_fg, max(n_bg - 1, 0)


def validate_image(image: GeometryImage, where: str = "image") -> list[Violation]:
    out = []
    ch = image.channels
    alpha = ch[..., 3]
    if not np.all(np.isfinite(ch)):
        out.append(Violation("image-finite", where))
    nonbinary = np.argwhere((alpha != 0) & (alpha != 1))
    if len(nonbinary):
        r, c = nonbinary[0]
        out.append(Violation("alpha-binary", f"{where} pixel ({r}, {c})", f"alpha={alpha[r, c]} ({len(nonbinary)} pixels)"))
    inside = alpha == 1
    oor = np.argwhere(inside[..., None] & (np.abs(ch[..., :3]) > 1.0))
    for r, c, k in oor[:10]:
        out.append(Violation("geometry-range", f"{where} pixel ({r}, {c}) channel {k}", f"value {ch[r, c, k]:.6g}"))
    if len(oor) > 10:
        out.append(Violation("geometry-range", where, f"{len(oor) - 10} more out-of-range values"))
    n_fg, n_holes = alpha_loop_count(alpha)
    if n_fg == 0:
        out.append(Violation("alpha-empty", where))
    elif n_fg > 1:
        out.append(Violation("alpha-components", where, f"{n_fg} 4-connected components"))
    if n_holes:
        out.append(Violation("alpha-holes", where, f"{n_holes} interior loops"))
    return out


def _validate_garmage(g: Garmage) -> list[Violation]:
    out = []
    if len(g.panels) == 0:
        return [Violation("panel-count", "garmage", "no panels")]
    res = g.resolution
    for i, p in enumerate(g.panels):
        where = f"panel {i}"
        if (p.image.height, p.image.width) != res:
            out.append(Violation("resolution", where, f"{p.image.height}x{p.image.width} != {res[0]}x{res[1]}"))
        out.extend(_validate_frame(p.frame, where))
        out.extend(validate_image(p.image, where))
    return out


def _segments_intersect(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(r, s, p), orient(r, s, q)
    d3, d4 = orient(p, q, r), orient(p, q, s)
    return d1 * d2 < 0 and d3 * d4 < 0


def signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _validate_pattern(doc: SewingPatternDoc) -> list[Violation]:
    out = []
    seg_counts = {}
    for p in doc.panels:
        where = f"panel {p.panel_id}"
        if p.panel_id in seg_counts:
            out.append(Violation("panel-duplicate", where))
        seg_counts[p.panel_id] = len(p.segments)
        segs = p.segments
        if len(segs) < 3:
            out.append(Violation("loop-size", where, f"{len(segs)} segments"))
            continue
        for k, s in enumerate(segs):
            nxt = segs[(k + 1) % len(segs)]
            if not np.allclose(s.p1, nxt.p0, atol=1e-12):
                out.append(Violation("loop-closed", f"{where} segment {k}", f"ends at {s.p1}, next starts at {nxt.p0}"))
        verts = p.vertices()
        if signed_area(verts) <= 0:
            out.append(Violation("loop-orientation", where, "loop is not counter-clockwise"))
        n = len(segs)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_intersect(segs[i].p0, segs[i].p1, segs[j].p0, segs[j].p1):
                    out.append(Violation("loop-simple", f"{where} segments {i},{j}", "segments cross"))
    for k, st in enumerate(doc.stitches):
        for name, side in (("a", st.a), ("b", st.b)):
            where = f"stitch {k} side {name}"
            if side.panel not in seg_counts:
                out.append(Violation("stitch-panel", where, f"panel {side.panel} missing"))
            elif not 0 <= side.segment < seg_counts[side.panel]:
                out.append(Violation("stitch-segment", where, f"segment {side.segment} of {seg_counts[side.panel]}"))
            if not (0.0 <= side.t0 <= 1.0 and 0.0 <= side.t1 <= 1.0):
                out.append(Violation("stitch-param", where, f"range ({side.t0}, {side.t1})"))
    return out


def _validate_points(pts: BoundaryPointSet) -> list[Violation]:
    out = []
    m = len(pts)
    for name in ("loop_index", "pos3", "uv", "tangent3", "tangent_uv", "arc_param", "pixel_pitch"):
        if len(getattr(pts, name)) != m:
            out.append(Violation("point-arrays", name, f"{len(getattr(pts, name))} rows for {m} points"))
    if out:
        return out
    for pid in np.unique(pts.panel_ids):
        idx = np.sort(pts.loop_index[pts.panel_ids == pid])
        if not np.array_equal(idx, np.arange(len(idx))):
            out.append(Violation("loop-index", f"panel {int(pid)}", "loop indices are not 0..k-1"))
    if np.any((pts.arc_param < 0) | (pts.arc_param > 1)):
        out.append(Violation("arc-param", "points", "outside [0, 1]"))
    return out
