"""Mesh <-> Garmage conversion.

Each panel's UV region is fitted (aspect preserved, centered, with a fixed
margin) into a square pixel grid whose pixel *centers* sit at integer index
coordinates. The UV bounding box lands exactly on pixel centers along its
longer axis, so axis-aligned panel edges pass through pixel centers and a
decoded grid re-encodes to the same raster.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import (
    BadParams,
    DegenerateUV,
    EmptyImage,
    EmptyPanel,
    Garmage,
    GarmagePanel,
    GarmentMesh,
    GeometryImage,
    PanelError,
    PanelFrame,
)

BARY_TOL = 1e-9


@dataclass(frozen=True)
class CodecConfig:
    resolution: int = 256
    uv_margin_px: int = 2
    dilation_px: int = 1
    epsilon_scale: float = 1e-6

    def __post_init__(self):
        if self.resolution < 8:
            raise BadParams(f"resolution must be >= 8, got {self.resolution}")
        if not (0 <= self.uv_margin_px < self.resolution / 4 and 0 <= self.dilation_px < self.resolution / 4):
            raise BadParams("margins must be non-negative and below resolution/4")
        if self.epsilon_scale <= 0:
            raise BadParams("epsilon_scale must be positive")


@dataclass(frozen=True)
class PixelMap:
    """Affine map between panel-local UV meters and pixel index coordinates."""

    px_per_m: float
    offset: tuple[float, float]  # pixel coords of the UV bbox min corner

    @classmethod
    def for_panel(cls, scale_uv, resolution: int, margin: int) -> "PixelMap":
        usable = resolution - 1 - 2 * margin
        su, sv = float(scale_uv[0]), float(scale_uv[1])
        k = usable / max(su, sv)
        return cls(k, (margin + (usable - su * k) / 2.0, margin + (usable - sv * k) / 2.0))

    @property
    def pitch(self) -> float:
        return 1.0 / self.px_per_m

    def to_pixel(self, uv: np.ndarray) -> np.ndarray:
        return np.asarray(uv, dtype=np.float64) * self.px_per_m + np.asarray(self.offset)

    def to_uv(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, dtype=np.float64) - np.asarray(self.offset)) / self.px_per_m


def pixel_map(frame: PanelFrame, resolution: int, cfg: CodecConfig | None = None) -> PixelMap:
    cfg = cfg or CodecConfig()
    return PixelMap.for_panel(frame.scale_uv, resolution, cfg.uv_margin_px)


@dataclass(frozen=True, eq=False)
class PanelMesh:
    """Grid mesh decoded from one geometry image."""

    positions: np.ndarray
    uvs: np.ndarray  # panel-local: the UV bbox min sits at the origin
    faces: np.ndarray
    pixels: np.ndarray  # (row, col) of each vertex
    notes: list[str] = field(default_factory=list)


def _frame_for(positions: np.ndarray, uvs: np.ndarray, eps: float) -> tuple[PanelFrame, np.ndarray]:
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    center = (lo + hi) / 2.0
    scale = np.maximum((hi - lo) / 2.0, eps)
    uv_lo = uvs.min(axis=0)
    scale_uv = np.maximum(uvs.max(axis=0) - uv_lo, eps)
    return PanelFrame(tuple(center), tuple(scale), tuple(scale_uv)), uv_lo


_CHUNK = 1 << 21  # candidate pixels per rasterization batch


def _raster_chunk(fid, tri, e1, e2, det, x0, y0, w, n, faces, pos, geom, inside):
    """Barycentric pixel-center sampling for faces ``fid`` (ascending)."""
    counts = n[fid]
    if counts.sum() == 0:
        return
    f = np.repeat(fid, counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    gx = x0[f] + local % w[f]
    gy = y0[f] + local // w[f]
    dx = gx - tri[f, 0, 0]
    dy = gy - tri[f, 0, 1]
    l1 = (dx * e2[f, 1] - dy * e2[f, 0]) / det[f]
    l2 = (e1[f, 0] * dy - e1[f, 1] * dx) / det[f]
    l0 = 1.0 - l1 - l2
    hit = (l0 >= -BARY_TOL) & (l1 >= -BARY_TOL) & (l2 >= -BARY_TOL)
    hit &= ~inside[gy, gx]
    if not hit.any():
        return
    key = gy[hit] * geom.shape[1] + gx[hit]
    _, first = np.unique(key, return_index=True)
    sel = np.flatnonzero(hit)[first]
    lam = np.clip(np.stack([l0[sel], l1[sel], l2[sel]], axis=1), 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    p = np.einsum("ki,kij->kj", lam, pos[faces[f[sel]]])
    geom[gy[sel], gx[sel]] = p
    inside[gy[sel], gx[sel]] = True


def encode_panel(mesh: GarmentMesh, panel_id: int, cfg: CodecConfig | None = None) -> tuple[GeometryImage, PanelFrame]:
    """Rasterize one panel into a geometry image by pixel-center sampling."""
    cfg = cfg or CodecConfig()
    faces = mesh.panel_faces(panel_id)
    if len(faces) == 0:
        raise EmptyPanel(f"panel {panel_id} has no faces")
    used = np.unique(faces)
    frame, uv_lo = _frame_for(mesh.positions[used], mesh.uvs[used], cfg.epsilon_scale)
    center = np.asarray(frame.center_geo)
    scale = np.asarray(frame.scale_geo)
    pmap = pixel_map(frame, cfg.resolution, cfg)
    xy = pmap.to_pixel(mesh.uvs - uv_lo)

    tri = xy[faces]  # (F, 3, 2)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # area tolerance in pixel units: triangles far below one pixel of area
    degenerate = np.flatnonzero(np.abs(det) <= 1e-10 * max(1.0, float(np.abs(det).max(initial=0.0))))
    if len(degenerate):
        f = int(degenerate[0])
        raise DegenerateUV(f"panel {panel_id}: zero-area UV triangle {faces[f].tolist()}")

    res = cfg.resolution
    geom = np.zeros((res, res, 3), np.float64)
    inside = np.zeros((res, res), bool)
    x0 = np.maximum(np.ceil(tri[..., 0].min(axis=1) - 1e-7), 0).astype(np.int64)
    x1 = np.minimum(np.floor(tri[..., 0].max(axis=1) + 1e-7), res - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(tri[..., 1].min(axis=1) - 1e-7), 0).astype(np.int64)
    y1 = np.minimum(np.floor(tri[..., 1].max(axis=1) + 1e-7), res - 1).astype(np.int64)
    w = np.maximum(x1 - x0 + 1, 0)
    n = w * np.maximum(y1 - y0 + 1, 0)
    # faces are processed in index order, in chunks of bounded candidate count;
    # a pixel covered by several faces takes the lowest face index
    cum = np.cumsum(n)
    cuts = np.searchsorted(cum, np.arange(_CHUNK, cum[-1], _CHUNK), side="right")
    edges = np.unique(np.concatenate([[0], cuts, [len(faces)]]))
    for lo, hi in zip(edges[:-1], edges[1:]):
        _raster_chunk(np.arange(lo, hi), tri, e1, e2, det, x0, y0, w, n, faces, mesh.positions, geom, inside)

    channels = np.zeros((res, res, 4), np.float32)
    norm = np.clip((geom - center) / scale, -1.0, 1.0)
    channels[..., :3] = np.where(inside[..., None], norm, 0.0)
    channels[..., 3] = inside
    if cfg.dilation_px > 0 and inside.any():
        dist, (ri, ci) = ndimage.distance_transform_edt(~inside, return_indices=True)
        ring = (~inside) & (dist <= cfg.dilation_px)
        channels[ring, :3] = channels[ri[ring], ci[ring], :3]
    return GeometryImage(channels), frame


def decode_panel(image: GeometryImage, frame: PanelFrame, cfg: CodecConfig | None = None) -> PanelMesh:
    """Grid-triangulate the alpha=1 pixels back into a panel mesh."""
    alpha = image.alpha >= 0.5
    if not alpha.any():
        raise EmptyImage("geometry image has no alpha=1 pixels")
    h, w = alpha.shape
    pmap = pixel_map(frame, h, cfg)
    rows, cols = np.nonzero(alpha)
    vid = np.full((h, w), -1, np.int64)
    vid[rows, cols] = np.arange(len(rows))
    geo = image.geometry[rows, cols].astype(np.float64)
    positions = geo * np.asarray(frame.scale_geo) + np.asarray(frame.center_geo)
    uvs = pmap.to_uv(np.stack([cols, rows], axis=1).astype(np.float64))

    a = vid[:-1, :-1]
    b = vid[:-1, 1:]
    c = vid[1:, 1:]
    d = vid[1:, :-1]
    quad = (a >= 0) & (b >= 0) & (c >= 0) & (d >= 0)
    a, b, c, d = a[quad], b[quad], c[quad], d[quad]
    faces = np.empty((2 * len(a), 3), np.int64)
    faces[0::2] = np.stack([a, b, c], axis=1)
    faces[1::2] = np.stack([a, c, d], axis=1)
    notes = []
    if len(faces) == 0:
        notes.append(f"{len(rows)} vertices but no complete pixel quad; mesh has no faces")
    return PanelMesh(positions, uvs, faces, np.stack([rows, cols], axis=1), notes)


def _pool_map(fn, items, threads: int | None):
    if threads is not None and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def encode_garment(
    mesh: GarmentMesh,
    cfg: CodecConfig | None = None,
    labels: dict[int, str] | None = None,
    threads: int | None = None,
) -> Garmage:
    cfg = cfg or CodecConfig()
    panel_ids = mesh.panels
    labels = labels or {}

    def one(pid):
        try:
            return encode_panel(mesh, pid, cfg)
        except Exception as exc:  # re-raised with the panel index attached
            raise PanelError(pid, exc) from exc

    encoded = _pool_map(one, panel_ids, threads)
    return Garmage(tuple(GarmagePanel(img, fr, labels.get(pid, "")) for pid, (img, fr) in zip(panel_ids, encoded)))


def decode_garment(garmage: Garmage, cfg: CodecConfig | None = None, threads: int | None = None) -> GarmentMesh:
    """Decode every panel; vertex ids are contiguous per panel, in panel order."""

    def one(i):
        p = garmage.panels[i]
        try:
            return decode_panel(p.image, p.frame, cfg)
        except Exception as exc:
            raise PanelError(i, exc) from exc

    meshes = _pool_map(one, list(range(len(garmage))), threads)
    positions, uvs, panel_ids, faces = [], [], [], []
    base = 0
    for i, pm in enumerate(meshes):
        positions.append(pm.positions)
        uvs.append(pm.uvs)
        panel_ids.append(np.full(len(pm.positions), i, np.int64))
        faces.append(pm.faces + base)
        base += len(pm.positions)
    return GarmentMesh(np.concatenate(positions), np.concatenate(uvs), np.concatenate(panel_ids), np.concatenate(faces))


def decoded_panels(garmage: Garmage, cfg: CodecConfig | None = None) -> list[PanelMesh]:
    return [decode_panel(p.image, p.frame, cfg) for p in garmage.panels]
