"""Bitmap contours to straight-segment pattern loops, and point stitches to segment stitches.

Segment fitting is a greedy bottom-up merge. Every contour point starts as
a vertex; iterations alternate between an angle cost (direction change at
a vertex, in UV and in 3D) and a length cost (relative sag of the merged
polyline). Within an iteration the cheapest admissible vertex is removed
repeatedly; the chord-length ceiling ``kappa * mean segment length`` is
refreshed between iterations so segments grow gradually.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BadParams,
    BoundaryPointSet,
    DegenerateLoop,
    Garmage,
    PointStitchSet,
    Segment,
    SegmentStitch,
    SewingPatternDoc,
    StitchSide,
    VectorPanel,
)

ANGLE, LENGTH = 0, 1
MIN_PIECE_PX = 2.0  # shortest stitch-edge side kept, in pixels


@dataclass(frozen=True)
class VectorizerConfig:
    angle_max: float = 12.0  # degrees
    sag_max: float = 0.008
    kappa: float = 3.0
    weight_3d: float = 1.0
    run_gap: int = 2
    snap_radius: float = 0.004  # UV meters
    # ceiling on the distance from any covered contour point to a merged
    # chord, as a fraction of the whole polyline length
    deviation_max: float = 0.004
    # the same ceiling in contour pixels, applied when the pixel pitch is known
    deviation_px: float = 1.5

    def __post_init__(self):
        if not 0 < self.angle_max < 90:
            raise BadParams("angle_max must be in (0, 90) degrees")
        for name in ("sag_max", "kappa", "snap_radius", "deviation_max", "deviation_px"):
            if getattr(self, name) <= 0:
                raise BadParams(f"{name} must be positive")
        if self.weight_3d < 0 or self.run_gap < 0:
            raise BadParams("weight_3d and run_gap must be non-negative")


@dataclass
class FitTrace:
    """Per-iteration record of a segment fit."""

    counts: list[int] = field(default_factory=list)  # segment count after each iteration
    merges: list[int] = field(default_factory=list)
    modes: list[str] = field(default_factory=list)


def _turn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in degrees between direction rows ``a`` and ``b``."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    cos = np.einsum("...k,...k->...", a, b) / np.maximum(na * nb, 1e-300)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where((na > 0) & (nb > 0), ang, 0.0)


class _Polyline:
    """Vertex bookkeeping for one merge run over a closed or open point chain."""

    def __init__(self, uv: np.ndarray, pos3: np.ndarray | None, closed: bool, dev_cap: float):
        self.uv = uv
        self.pos3 = pos3
        self.closed = closed
        self.k = len(uv)
        step = np.linalg.norm(np.diff(np.vstack([uv, uv[:1]]) if closed else uv, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(step)])
        self.total = float(self.cum[-1])
        self.dev_cap = dev_cap
        idx = np.arange(self.k)
        self.prev = (idx - 1) % self.k
        self.next = (idx + 1) % self.k
        self.alive = np.ones(self.k, bool)
        self.n_seg = self.k if closed else self.k - 1

    def removable(self, j: int) -> bool:
        if not self.alive[j]:
            return False
        if self.closed:
            return self.n_seg > 3
        return 0 < j < self.k - 1

    def span(self, a: int, b: int) -> np.ndarray:
        if b > a:
            return np.arange(a, b + 1)
        return np.concatenate([np.arange(a, self.k), np.arange(0, b + 1)])

    def seg_lengths(self) -> np.ndarray:
        v = np.flatnonzero(self.alive)
        ends = self.next[v]
        if not self.closed:
            v, ends = v[:-1], ends[:-1]
        return np.linalg.norm(self.uv[ends] - self.uv[v], axis=1)

    def remove(self, j: int) -> None:
        a, b = self.prev[j], self.next[j]
        self.next[a] = b
        self.prev[b] = a
        self.alive[j] = False
        self.n_seg -= 1


def _vertex_cost(pl: _Polyline, j: int, mode: int, cfg: VectorizerConfig, l_max: float) -> float:
    """Cost of removing vertex ``j`` (merging its two segments); inf when inadmissible."""
    if not pl.removable(j):
        return np.inf
    a, b = int(pl.prev[j]), int(pl.next[j])
    chord = np.linalg.norm(pl.uv[b] - pl.uv[a])
    if chord > l_max:
        return np.inf
    if mode == ANGLE:
        cost = float(_turn(pl.uv[j] - pl.uv[a], pl.uv[b] - pl.uv[j]))
        if pl.pos3 is not None and cfg.weight_3d > 0:
            cost = max(cost, cfg.weight_3d * float(_turn(pl.pos3[j] - pl.pos3[a], pl.pos3[b] - pl.pos3[j])))
        if cost > cfg.angle_max:
            return np.inf
    else:
        # polyline of the candidate = its two current segments
        length = np.linalg.norm(pl.uv[j] - pl.uv[a]) + np.linalg.norm(pl.uv[b] - pl.uv[j])
        cost = float((length - chord) / length) if length > 0 else 0.0
        if cost > cfg.sag_max:
            return np.inf
    pts = pl.uv[pl.span(a, b)]
    axis = pl.uv[b] - pl.uv[a]
    if chord > 0:
        rel = pts - pl.uv[a]
        t = np.clip(rel @ axis / chord**2, 0.0, 1.0)
        dev = np.linalg.norm(rel - t[:, None] * axis, axis=1).max()
    else:
        dev = np.linalg.norm(pts - pl.uv[a], axis=1).max()
    if dev > pl.dev_cap:
        return np.inf
    return cost


def _merge_pass(pl: _Polyline, mode: int, cfg: VectorizerConfig) -> int:
    lengths = pl.seg_lengths()
    l_max = cfg.kappa * float(lengths.mean()) if len(lengths) else 0.0
    cost = np.full(pl.k, np.inf)
    for j in np.flatnonzero(pl.alive):
        cost[j] = _vertex_cost(pl, int(j), mode, cfg, l_max)
    merges = 0
    while True:
        j = int(np.argmin(cost))  # lowest index wins ties
        if not np.isfinite(cost[j]):
            return merges
        a, b = int(pl.prev[j]), int(pl.next[j])
        pl.remove(j)
        cost[j] = np.inf
        merges += 1
        for v in (a, b):
            cost[v] = _vertex_cost(pl, v, mode, cfg, l_max)
        if pl.closed and pl.n_seg <= 3:
            return merges


def merge_polyline(
    uv: np.ndarray,
    pos3: np.ndarray | None = None,
    cfg: VectorizerConfig | None = None,
    closed: bool = True,
    trace: FitTrace | None = None,
    pixel_pitch: float | None = None,
) -> np.ndarray:
    """Indices of the points kept as segment vertices, ascending.

    A merge is refused when any covered point would sit farther from the
    merged chord than ``deviation_max`` times the polyline length or, when
    ``pixel_pitch`` is given, ``deviation_px`` pixels.
    """
    cfg = cfg or VectorizerConfig()
    uv = np.asarray(uv, dtype=np.float64)
    pos3 = None if pos3 is None else np.asarray(pos3, dtype=np.float64)
    step = np.linalg.norm(np.diff(np.vstack([uv, uv[:1]]) if closed else uv, axis=0), axis=1)
    cap = cfg.deviation_max * float(step.sum())
    if pixel_pitch is not None:
        cap = min(cap, cfg.deviation_px * pixel_pitch)
    pl = _Polyline(uv, pos3, closed, cap)
    it = 0
    idle = 0
    while idle < 2:
        mode = ANGLE if it % 2 == 0 else LENGTH
        n = _merge_pass(pl, mode, cfg)
        if trace is not None:
            trace.counts.append(pl.n_seg)
            trace.merges.append(n)
            trace.modes.append("angle" if mode == ANGLE else "length")
        # a full angle + length cycle without merges ends the run
        idle = idle + 1 if n == 0 else 0
        it += 1
    return np.flatnonzero(pl.alive)


def fit_segments(
    uv: np.ndarray,
    pos3: np.ndarray | None = None,
    cfg: VectorizerConfig | None = None,
    panel_id: int = 0,
    label: str = "",
    trace: FitTrace | None = None,
    pixel_pitch: float | None = None,
) -> VectorPanel:
    """Fit a closed loop of straight segments to one panel's ordered contour points."""
    uv = np.asarray(uv, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2 or len(uv) < 8:
        raise DegenerateLoop(f"panel {panel_id}: need at least 8 contour points, got {len(uv)}")
    keep = merge_polyline(uv, pos3, cfg, closed=True, trace=trace, pixel_pitch=pixel_pitch)
    ends = np.roll(keep, -1)
    segs = tuple(
        Segment(tuple(uv[a]), tuple(uv[b]), int(a), int(b)) for a, b in zip(keep, ends)
    )
    return VectorPanel(panel_id, segs, label, len(uv))


# --------------------------------------------------------------------------- #
# point stitches -> segment stitches


@dataclass(frozen=True)
class Run:
    """Arc-consecutive matched points on ``panel_a`` whose partners are arc-consecutive on ``panel_b``."""

    panel_a: int
    panel_b: int
    idx_a: tuple[int, ...]  # loop indices, in walking order on panel_a
    idx_b: tuple[int, ...]  # partner of each idx_a entry
    reversed: bool


@dataclass
class GroupReport:
    runs: int = 0
    orphans: list[tuple[int, int]] = field(default_factory=list)  # (point row a, point row b) of dropped pairs
    pieces_dropped: int = 0
    kept: list[tuple[int, int]] = field(default_factory=list)  # point rows behind the emitted stitches


def _cyc(d: int, n: int) -> int:
    """Signed cyclic difference in (-n/2, n/2]."""
    d %= n
    return d - n if d > n // 2 else d


def find_runs(
    stitches: PointStitchSet, points: BoundaryPointSet, run_gap: int = 2, report: GroupReport | None = None
) -> list[Run]:
    """Partition matched points into maximal runs, walking each panel loop once.

    Consecutive matched points (at most ``run_gap`` unmatched points apart)
    stay in one run while their partners sit on one panel and advance by
    1..run_gap+1 loop steps in a constant direction. Each run is reported
    once, from the lower panel id; single-point runs become orphans.
    """
    sizes = points.panel_sizes()
    partner: dict[tuple[int, int], tuple[int, int, int, int]] = {}
    for i, j in stitches.pairs:
        pa, pb = int(points.panel_ids[i]), int(points.panel_ids[j])
        ka, kb = int(points.loop_index[i]), int(points.loop_index[j])
        partner[(pa, ka)] = (pb, kb, int(i), int(j))
        partner[(pb, kb)] = (pa, ka, int(j), int(i))
    step_max = run_gap + 1
    runs: list[Run] = []
    for pa in sorted(sizes):
        n = sizes[pa]
        own = sorted(k for (p, k) in partner if p == pa)
        m = len(own)
        if m == 0:
            continue

        def link(k0: int, k1: int) -> int:
            """+1 / -1 when k1 continues k0 with partners advancing / retreating, else 0."""
            if not 0 < (k1 - k0) % n <= step_max:
                return 0
            b0, b1 = partner[(pa, k0)], partner[(pa, k1)]
            if b0[0] != b1[0]:
                return 0
            d = _cyc(b1[1] - b0[1], sizes[b0[0]])
            return 1 if 0 < d <= step_max else -1 if -step_max <= d < 0 else 0

        links = [link(own[t], own[(t + 1) % m]) for t in range(m)] if m > 1 else [0]
        # begin right after a break (or direction change) so no run is cut at index 0
        start = 0
        for t in range(m):
            if links[t - 1] == 0 or links[t - 1] != links[t]:
                start = t
                break
        groups: list[tuple[list[int], int]] = []
        cur, direction = [own[start]], 0
        for step in range(1, m):
            t = (start + step) % m
            lk = links[t - 1]
            if lk != 0 and direction in (0, lk):
                cur.append(own[t])
                direction = lk
            else:
                groups.append((cur, direction))
                cur, direction = [own[t]], 0
        groups.append((cur, direction))
        for seq, direction in groups:
            pb, kb, row_a, row_b = partner[(pa, seq[0])]
            # every run is seen from both panels; keep the lower panel's copy
            if pb < pa or (pb == pa and kb < seq[0]):
                continue
            if len(seq) < 2:
                if report is not None:
                    report.orphans.append((row_a, row_b))
                continue
            runs.append(Run(pa, pb, tuple(seq), tuple(partner[(pa, k)][1] for k in seq), direction < 0))
    if report is not None:
        report.runs = len(runs)
    return runs


def _segment_of(panel: VectorPanel) -> np.ndarray:
    """Segment index owning each contour point (a vertex belongs to the segment it starts)."""
    owner = np.empty(panel.n_points, np.int64)
    for s, seg in enumerate(panel.segments):
        if seg.end > seg.start:
            owner[seg.start : seg.end] = s
        else:
            owner[seg.start :] = s
            owner[: seg.end] = s
    return owner


def _param(seg: Segment, uv: np.ndarray) -> np.ndarray:
    a, b = np.asarray(seg.p0), np.asarray(seg.p1)
    axis = b - a
    denom = float(axis @ axis)
    if denom == 0.0:
        return np.zeros(len(uv))
    return np.clip((uv - a) @ axis / denom, 0.0, 1.0)


def group_stitch_edges(
    stitches: PointStitchSet,
    points: BoundaryPointSet,
    panels: list[VectorPanel],
    cfg: VectorizerConfig | None = None,
    report: GroupReport | None = None,
) -> list[SegmentStitch]:
    """Lift point stitches to segment stitches.

    Each run is cut wherever either side crosses a fitted segment vertex;
    every piece with at least two points becomes one stitch, extended to
    the shared segment vertex when the cut is at one of its own vertices and
    to the midpoint of the gap otherwise. Pieces with a side shorter than
    ``MIN_PIECE_PX`` pixels are dropped too; such slivers come from points
    inside a rounded panel corner. Parameter
    ranges are ascending on both sides; ``reversed`` means side a's ``t0``
    meets side b's ``t1``.
    """
    cfg = cfg or VectorizerConfig()
    by_id = {p.panel_id: p for p in panels}
    owners = {p.panel_id: _segment_of(p) for p in panels}
    row_of = {}
    for pid in np.unique(points.panel_ids):
        rows = points.panel_slice(int(pid))
        row_of[int(pid)] = rows[np.argsort(points.loop_index[rows])]
    pitch = {int(p): float(points.pixel_pitch[points.panel_ids == p].min()) for p in np.unique(points.panel_ids)}
    out: list[SegmentStitch] = []
    for run in find_runs(stitches, points, cfg.run_gap, report):
        sa = owners[run.panel_a][list(run.idx_a)]
        sb = owners[run.panel_b][list(run.idx_b)]
        cut = np.flatnonzero((sa[1:] != sa[:-1]) | (sb[1:] != sb[:-1])) + 1
        for piece in np.split(np.arange(len(sa)), cut):
            if len(piece) < 2:
                if report is not None:
                    report.pieces_dropped += 1
                continue
            sides, extent = [], []
            for pid, idx, own in ((run.panel_a, run.idx_a, sa), (run.panel_b, run.idx_b, sb)):
                seg_i = int(own[piece[0]])
                # a piece cut from a longer run reaches halfway to its neighbor,
                # so the two pieces meet near the vertex that separates them
                lo = max(piece[0] - 1, 0)
                hi = min(piece[-1] + 1, len(sa) - 1)
                uv = points.uv[row_of[pid][[idx[k] for k in range(lo, hi + 1)]]]
                seg = by_id[pid].segments[seg_i]
                ends = np.array([seg.p0, seg.p1])
                for k, inner, nb in ((0, 1, lo < piece[0]), (-1, -2, hi > piece[-1])):
                    if not nb:
                        continue
                    if own[lo if k == 0 else hi] != seg_i:
                        # cut at this side's own vertex: end exactly on it
                        uv[k] = ends[np.argmin(np.linalg.norm(ends - uv[inner], axis=1))]
                    else:
                        uv[k] = 0.5 * (uv[k] + uv[inner])
                t = _param(seg, uv)
                sides.append(StitchSide(pid, seg_i, float(t.min()), float(t.max())))
                extent.append((t.max() - t.min()) * seg.length / pitch[pid])
            if min(extent) < MIN_PIECE_PX:
                # shorter than the corner rounding of the traced contour
                if report is not None:
                    report.pieces_dropped += 1
                continue
            out.append(SegmentStitch(sides[0], sides[1], run.reversed))
            if report is not None:
                for k in piece:
                    report.kept.append((int(row_of[run.panel_a][run.idx_a[k]]), int(row_of[run.panel_b][run.idx_b[k]])))
    return out


def stitch_edge_pairs(
    stitches: PointStitchSet, grouping: GroupReport
) -> PointStitchSet:
    """The subset of ``stitches`` that ended up inside an emitted segment stitch."""
    kept = {tuple(sorted(p)) for p in grouping.kept}
    sel = [k for k, (a, b) in enumerate(stitches.pairs) if (int(a), int(b)) in kept]
    return PointStitchSet(stitches.pairs[sel], stitches.confidence[sel])


def _endpoints(doc: SewingPatternDoc) -> list[tuple[int, int, str, np.ndarray]]:
    """(stitch index, panel, 'a0'|'a1'|'b0'|'b1', uv) for every stitch-edge endpoint."""
    out = []
    for k, st in enumerate(doc.stitches):
        for name, side in (("a", st.a), ("b", st.b)):
            seg = doc.panel_by_id(side.panel).segments[side.segment]
            out.append((k, side.panel, name + "0", seg.point_at(side.t0)))
            out.append((k, side.panel, name + "1", seg.point_at(side.t1)))
    return out


def endpoint_clusters(doc: SewingPatternDoc, snap_radius: float) -> list[list[int]]:
    """Single-linkage clusters (size >= 2) of endpoint indices into :func:`_endpoints`, per panel."""
    from scipy.cluster.hierarchy import fcluster, linkage

    ends = _endpoints(doc)
    clusters = []
    for pid in sorted({e[1] for e in ends}):
        idx = [i for i, e in enumerate(ends) if e[1] == pid]
        if len(idx) < 2:
            continue
        xy = np.stack([ends[i][3] for i in idx])
        lab = fcluster(linkage(xy, method="single"), t=snap_radius, criterion="distance")
        for c in np.unique(lab):
            members = [idx[i] for i in np.flatnonzero(lab == c)]
            if len(members) > 1:
                clusters.append(members)
    return clusters


def optimize_endpoints(doc: SewingPatternDoc, cfg: VectorizerConfig | None = None) -> SewingPatternDoc:
    """Pull nearby stitch-edge endpoints on a panel toward a shared position.

    Endpoints within ``snap_radius`` (single linkage) form a cluster whose
    target is the mean UV position; each member moves to the point of its
    own segment nearest the target. Segment geometry is left untouched.
    """
    cfg = cfg or VectorizerConfig()
    ends = _endpoints(doc)
    new_t: dict[tuple[int, str], float] = {}
    for members in endpoint_clusters(doc, cfg.snap_radius):
        target = np.mean([ends[i][3] for i in members], axis=0)
        for i in members:
            k, pid, which, _ = ends[i]
            st = doc.stitches[k]
            side = st.a if which[0] == "a" else st.b
            seg = doc.panel_by_id(pid).segments[side.segment]
            new_t[(k, which)] = float(_param(seg, target[None, :])[0])
    if not new_t:
        return doc
    stitches = []
    for k, st in enumerate(doc.stitches):
        sides = []
        for name, side in (("a", st.a), ("b", st.b)):
            t0 = new_t.get((k, name + "0"), side.t0)
            t1 = new_t.get((k, name + "1"), side.t1)
            sides.append(replace(side, t0=min(t0, t1), t1=max(t0, t1)))
        stitches.append(replace(st, a=sides[0], b=sides[1]))
    return replace(doc, stitches=tuple(stitches))


def endpoint_spread(doc: SewingPatternDoc, clusters: list[list[int]]) -> float:
    """Mean distance of clustered endpoints to their cluster mean (UV meters)."""
    ends = _endpoints(doc)
    d = []
    for members in clusters:
        xy = np.stack([ends[i][3] for i in members])
        d.extend(np.linalg.norm(xy - xy.mean(axis=0), axis=1))
    return float(np.mean(d)) if d else 0.0


def fit_panels(points: BoundaryPointSet, cfg: VectorizerConfig | None = None, labels=None, traces=None) -> list[VectorPanel]:
    """Fit every panel present in ``points``, in panel order."""
    cfg = cfg or VectorizerConfig()
    panels = []
    for pid in np.unique(points.panel_ids):
        pid = int(pid)
        rows = points.panel_slice(pid)
        rows = rows[np.argsort(points.loop_index[rows])]
        trace = FitTrace() if traces is not None else None
        label = labels[pid] if labels is not None else ""
        pitch = float(points.pixel_pitch[rows].min())
        panels.append(fit_segments(points.uv[rows], points.pos3[rows], cfg, pid, label, trace, pitch))
        if traces is not None:
            traces[pid] = trace
    return panels


def vectorize(
    garmage: Garmage,
    stitches: PointStitchSet,
    points: BoundaryPointSet,
    cfg: VectorizerConfig | None = None,
    report: dict | None = None,
    grouping: GroupReport | None = None,
) -> SewingPatternDoc:
    """Fitted panel loops plus endpoint-optimized segment stitches.

    When ``report`` is a dict it receives run, orphan and per-panel fit
    statistics. A ``grouping`` report is filled in place, including the
    point pairs behind the emitted stitches.
    """
    cfg = cfg or VectorizerConfig()
    labels = [p.label for p in garmage.panels]
    traces: dict[int, FitTrace] = {}
    panels = fit_panels(points, cfg, labels, traces)
    grouping = GroupReport() if grouping is None else grouping
    seg_stitches = group_stitch_edges(stitches, points, panels, cfg, grouping)
    doc = optimize_endpoints(SewingPatternDoc(tuple(panels), tuple(seg_stitches)), cfg)
    if report is not None:
        report.update(
            runs=grouping.runs,
            orphans=len(grouping.orphans),
            pieces_dropped=grouping.pieces_dropped,
            segment_stitches=len(doc.stitches),
            segments={int(p.panel_id): len(p.segments) for p in panels},
            fit_iterations={int(k): len(t.counts) for k, t in traces.items()},
        )
    return doc
