"""Panel contours: extraction from the alpha channel and arc-length resampling."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.measure import find_contours

from .codec import CodecConfig, pixel_map
from .core import (
    BadParams,
    BoundaryPointSet,
    EmptyImage,
    Garmage,
    GeometryImage,
    MultiLoop,
    PanelError,
    alpha_loop_count,
    signed_area,
)


@dataclass(frozen=True)
class ContourConfig:
    total_points: int = 1500
    min_points: int = 8
    # Gaussian pre-blur of the alpha field; removes the 8-direction staircase
    # of a binary iso-line while leaving straight edges on the half-pixel line
    smoothing_px: float = 1.0


def _loops(field: np.ndarray, pad: int) -> list[np.ndarray]:
    out = []
    for c in find_contours(field, 0.5):
        if len(c) < 4 or not np.allclose(c[0], c[-1]):
            continue
        xy = c[:-1, ::-1] - pad  # (row, col) -> (x, y)
        keep = np.ones(len(xy), bool)
        keep[1:] = np.any(np.abs(np.diff(xy, axis=0)) > 1e-12, axis=1)
        out.append(xy[keep])
    return out


def extract_contour(image: GeometryImage, smoothing_px: float = 1.0) -> np.ndarray:
    """Closed counter-clockwise loop around the alpha=1 region, in pixel coordinates.

    Coordinates are (x=column, y=row) with pixel centers at integers. The
    loop starts at its lexicographically smallest point.
    """
    alpha = image.alpha >= 0.5
    if not alpha.any():
        raise EmptyImage("geometry image has no alpha=1 pixels")
    n_fg, n_holes = alpha_loop_count(alpha)
    if n_fg != 1 or n_holes:
        raise MultiLoop(f"alpha has {n_fg} components and {n_holes} holes; one boundary loop required")
    pad = 2 + int(np.ceil(3 * smoothing_px))
    field = np.pad(alpha.astype(np.float64), pad)
    loops = []
    if smoothing_px > 0:
        loops = _loops(ndimage.gaussian_filter(field, smoothing_px, mode="constant"), pad)
    if len(loops) != 1:
        # blur split or erased a thin feature; fall back to the raw indicator
        loops = _loops(field, pad)
    if len(loops) != 1:
        raise MultiLoop(f"found {len(loops)} boundary loops")
    loop = loops[0]
    if signed_area(loop) < 0:
        loop = loop[::-1]
    start = np.lexsort((loop[:, 1], loop[:, 0]))[0]
    return np.roll(loop, -start, axis=0)


def loop_length(loop: np.ndarray) -> float:
    d = np.diff(np.vstack([loop, loop[:1]]), axis=0)
    return float(np.linalg.norm(d, axis=1).sum())


def resample_loop(loop: np.ndarray, n: int) -> np.ndarray:
    """``n`` points at equal arc-length spacing along a closed polyline, starting at loop[0]."""
    closed = np.vstack([loop, loop[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.arange(n) * (s[-1] / n)
    return np.stack([np.interp(t, s, closed[:, k]) for k in range(closed.shape[1])], axis=1)


def allocate_budget(lengths, total: int, minimum: int = 8) -> list[int]:
    """Split ``total`` points proportionally to ``lengths`` (largest remainder), each >= minimum."""
    lengths = np.asarray(lengths, dtype=np.float64)
    n = len(lengths)
    if total < minimum * n:
        raise BadParams(f"{total} points cannot give {n} panels {minimum} points each")
    raw = total * lengths / lengths.sum()
    budget = np.floor(raw).astype(np.int64)
    rem = total - int(budget.sum())
    order = sorted(range(n), key=lambda i: (-(raw[i] - budget[i]), i))
    for i in order[:rem]:
        budget[i] += 1
    while budget.min() < minimum:
        low = int(np.argmin(budget))
        high = int(np.argmax(budget))
        budget[low] += 1
        budget[high] -= 1
    return [int(b) for b in budget]


_WIN = 2
_OFF = np.array([(dy, dx) for dy in range(-_WIN, _WIN + 1) for dx in range(-_WIN, _WIN + 1)])


def sample_geometry(image: GeometryImage, xy: np.ndarray) -> np.ndarray:
    """Normalized xyz at sub-pixel points from a local plane fit to alpha=1 pixels.

    Contour points sit on the half-pixel iso-line, outside the last covered
    pixel centers, so plain interpolation would pull them up to a pixel
    inward. A Gaussian-weighted least-squares plane over the covered pixels
    of a 5x5 window extrapolates instead, exactly for locally linear
    geometry. Points without three non-collinear covered pixels nearby take
    the nearest covered pixel.
    """
    ch = image.channels
    alpha = ch[..., 3] >= 0.5
    h, w = alpha.shape
    xy = np.asarray(xy, dtype=np.float64)
    cy = np.rint(xy[:, 1]).astype(np.int64)
    cx = np.rint(xy[:, 0]).astype(np.int64)
    yy = cy[:, None] + _OFF[None, :, 0]
    xx = cx[:, None] + _OFF[None, :, 1]
    valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
    valid &= alpha[yc, xc]
    dx = xx - xy[:, 0, None]
    dy = yy - xy[:, 1, None]
    wt = np.where(valid, np.exp(-0.5 * (dx**2 + dy**2)), 0.0)
    basis = np.stack([np.ones_like(dx), dx, dy], axis=2)  # plane value at the query point = coefficient 0
    ata = np.einsum("nk,nki,nkj->nij", wt, basis, basis)
    atb = np.einsum("nk,nki,nkc->nic", wt, basis, ch[yc, xc, :3].astype(np.float64))
    ok = np.abs(np.linalg.det(ata)) > 1e-9
    out = np.empty((len(xy), 3))
    if ok.any():
        out[ok] = np.linalg.solve(ata[ok], atb[ok])[:, 0, :]
    if not ok.all():
        _, (ri, ci) = ndimage.distance_transform_edt(~alpha, return_indices=True)
        by, bx = np.clip(cy[~ok], 0, h - 1), np.clip(cx[~ok], 0, w - 1)
        out[~ok] = ch[ri[by, bx], ci[by, bx], :3]
    return out


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0)


def resample_contours(
    garmage: Garmage,
    cfg: ContourConfig | None = None,
    codec: CodecConfig | None = None,
    threads: int | None = None,
) -> BoundaryPointSet:
    """Extract, resample and lift every panel contour to paired 3D/UV points."""
    cfg = cfg or ContourConfig()
    res = garmage.resolution[0]

    def extract(i):
        try:
            return extract_contour(garmage.panels[i].image, cfg.smoothing_px)
        except Exception as exc:
            raise PanelError(i, exc) from exc

    idx = list(range(len(garmage)))
    if threads is not None and threads > 1 and len(idx) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loops = list(pool.map(extract, idx))
    else:
        loops = [extract(i) for i in idx]

    maps = [pixel_map(p.frame, res, codec) for p in garmage.panels]
    lengths = [loop_length(lp) * m.pitch for lp, m in zip(loops, maps)]
    budget = allocate_budget(lengths, cfg.total_points, cfg.min_points)

    cols = {k: [] for k in ("pid", "idx", "pos3", "uv", "t3", "tuv", "arc", "pitch")}
    for i, (panel, loop, pmap, n) in enumerate(zip(garmage.panels, loops, maps, budget)):
        xy = resample_loop(loop, n)
        geo = sample_geometry(panel.image, xy)
        pos3 = geo * np.asarray(panel.frame.scale_geo) + np.asarray(panel.frame.center_geo)
        uv = pmap.to_uv(xy)
        cols["pid"].append(np.full(n, i))
        cols["idx"].append(np.arange(n))
        cols["pos3"].append(pos3)
        cols["uv"].append(uv)
        cols["t3"].append(_unit(np.roll(pos3, -1, axis=0) - np.roll(pos3, 1, axis=0)))
        cols["tuv"].append(_unit(np.roll(uv, -1, axis=0) - np.roll(uv, 1, axis=0)))
        cols["arc"].append(np.arange(n) / n)
        cols["pitch"].append(np.full(n, pmap.pitch))
    cat = {k: np.concatenate(v) for k, v in cols.items()}
    return BoundaryPointSet(
        cat["pid"], cat["idx"], cat["pos3"], cat["uv"], cat["t3"], cat["tuv"], cat["arc"], cat["pitch"]
    )
