"""Point-to-point stitch prediction on resampled boundary points.

Deterministic pipeline: stitch-probability scoring masks out points with no
plausible partner, a weighted descriptor affinity scores the survivors,
Sinkhorn normalization (with one slack row and column) turns the scores into
matching probabilities, and a mutual min-cost assignment extracts pairs.

The probability scorer and the affinity are fixed heuristics. Any callable
with the ``build_affinity`` signature can be passed to :func:`run_matcher`
as ``affinity_fn`` to swap in a learned scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .assignment import linear_assignment
from .core import BadParams, BoundaryPointSet, MaskEmpty, MatcherConfig, MatchMatrix, PointStitchSet

LOG_FLOOR = 1e-12
N_DESC = 9  # pos3 (3), uv (2), tangent3 (3), arc_param (1)


def median_spacing(points: BoundaryPointSet) -> float:
    """Median 3D distance from each point to its nearest neighbor on the same panel.

    Restricting to the owning panel measures the sampling spacing; across
    panels the nearest neighbor of a seam point is its partner, and seam
    points can be the majority.
    """
    d = []
    for pid in np.unique(points.panel_ids):
        pos = points.pos3[points.panel_ids == pid]
        if len(pos) > 1:
            d.append(cKDTree(pos).query(pos, k=2)[0][:, 1])
    return float(np.median(np.concatenate(d))) if d else 0.0


def cyclic_separation(points: BoundaryPointSet, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """Loop-index separation between every (a, b) row pair; a large value across panels."""
    sizes = points.panel_sizes()
    n_of = np.array([sizes[int(p)] for p in points.panel_ids])
    ia = points.loop_index[rows_a][:, None]
    ib = points.loop_index[rows_b][None, :]
    n = n_of[rows_a][:, None]
    raw = np.abs(ia - ib)
    sep = np.minimum(raw, n - raw)
    same = points.panel_ids[rows_a][:, None] == points.panel_ids[rows_b][None, :]
    return np.where(same, sep, np.iinfo(np.int64).max)


def classifier_sigma(points: BoundaryPointSet, cfg: MatcherConfig) -> float:
    if cfg.classifier_sigma is not None:
        return float(cfg.classifier_sigma)
    return 2.0 * median_spacing(points)


def score_stitch_probability(points: BoundaryPointSet, cfg: MatcherConfig | None = None) -> np.ndarray:
    """Per-point stitch probability exp(-d^2 / 2 sigma^2).

    ``d`` is the 3D distance to the nearest point on another panel, or on the
    same panel more than an eighth of that panel's loop away.
    """
    cfg = cfg or MatcherConfig()
    m = len(points)
    if m < 2:
        raise BadParams("need at least two boundary points")
    sigma = classifier_sigma(points, cfg)
    if sigma <= 0:
        raise BadParams("classifier sigma must be positive")
    sizes = points.panel_sizes()
    limit = np.array([sizes[int(p)] / 8.0 for p in points.panel_ids])
    d = np.full(m, np.inf)
    rows = np.arange(m)
    for start in range(0, m, 1024):
        blk = rows[start : start + 1024]
        diff = points.pos3[blk][:, None, :] - points.pos3[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        sep = cyclic_separation(points, blk, rows)
        eligible = sep > limit[blk][:, None]
        d[blk] = np.where(eligible, dist, np.inf).min(axis=1)
    return np.exp(-(d**2) / (2.0 * sigma**2))


def descriptor_matrix(points: BoundaryPointSet, rows: np.ndarray | None = None) -> np.ndarray:
    """Rows of [pos3, uv, tangent3, arc_param]; the panel tag is kept separately."""
    rows = np.arange(len(points)) if rows is None else rows
    return np.concatenate(
        [points.pos3[rows], points.uv[rows], points.tangent3[rows], points.arc_param[rows, None]], axis=1
    )


def affinity_weights(points: BoundaryPointSet, cfg: MatcherConfig) -> np.ndarray:
    """Diagonal weights over the descriptor columns.

    By default positions are weighted so that one median point spacing of
    distance costs one unit of exponent, tangents by ``tangent_weight``, and
    UV and arc parameter not at all (panel placement in UV is arbitrary).
    """
    if cfg.weights is not None:
        w = np.asarray(cfg.weights, dtype=np.float64)
        if w.shape != (N_DESC,) or np.any(w < 0):
            raise BadParams(f"weights must be {N_DESC} non-negative numbers")
        return w
    h = median_spacing(points)
    if h <= 0:
        raise BadParams("boundary points are degenerate")
    tau = cfg.temperature
    return np.array([tau / h**2] * 3 + [0.0, 0.0] + [tau * cfg.tangent_weight] * 3 + [0.0])


def build_affinity(points: BoundaryPointSet, mask: np.ndarray, cfg: MatcherConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Raw scores exp(-sum_k w_k (f_ik - g_jk)^2 / tau) among masked points.

    ``f`` is the descriptor and ``g`` the same descriptor with the tangent
    negated, so anti-parallel boundary directions (as across a seam) score
    high. Returns ``(scores, index_map)``.
    """
    cfg = cfg or MatcherConfig()
    if cfg.temperature <= 0:
        raise BadParams("temperature must be positive")
    rows = np.flatnonzero(mask)
    if len(rows) < 2:
        raise MaskEmpty(f"{len(rows)} point(s) passed the stitch classifier; need at least 2")
    w = affinity_weights(points, cfg)
    f = descriptor_matrix(points, rows)
    g = f.copy()
    g[:, 5:8] *= -1.0
    expo = np.zeros((len(rows), len(rows)))
    for k in np.flatnonzero(w):
        expo += w[k] * (f[:, k, None] - g[None, :, k]) ** 2
    scores = np.exp(-expo / cfg.temperature)
    sep = cyclic_separation(points, rows, rows)
    scores[sep <= 2] = 0.0
    np.fill_diagonal(scores, 0.0)
    return scores, rows


def sinkhorn_normalize(scores: np.ndarray, cfg: MatcherConfig | None = None, index_map=None) -> MatchMatrix:
    """Alternate row/column normalization of the slack-augmented score matrix.

    Stops when no entry moves by more than ``sinkhorn_tol`` over one full
    sweep; hitting ``sinkhorn_iters`` first leaves ``converged=False`` but
    the matrix is still returned.
    """
    cfg = cfg or MatcherConfig()
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise BadParams("scores must be a square matrix")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise BadParams("scores must be finite and non-negative")
    n = len(s)
    p = np.full((n + 1, n + 1), np.exp(cfg.slack_logit))
    p[:n, :n] = s
    converged = False
    it = 0
    for it in range(1, cfg.sinkhorn_iters + 1):
        prev = p
        p = p / p.sum(axis=1, keepdims=True)
        p = p / p.sum(axis=0, keepdims=True)
        if np.max(np.abs(p - prev)) < cfg.sinkhorn_tol:
            converged = True
            break
    index_map = np.arange(n) if index_map is None else index_map
    return MatchMatrix(p, index_map, converged=converged, iterations=it)


def hungarian_assign(match: MatchMatrix, cfg: MatcherConfig | None = None) -> PointStitchSet:
    """Mutual pairs of a min-cost assignment on -log of the symmetrized probabilities.

    The slack row and column are replicated ``n`` times so any number of
    points may stay unmatched.
    """
    cfg = cfg or MatcherConfig()
    x = match.probs
    x = 0.5 * (x + x.T)
    n = match.n
    cost = -np.log(x + LOG_FLOOR)
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = cost[:n, :n]
    big[:n, n:] = cost[:n, n, None]
    big[n:, :n] = cost[None, n, :n]
    _, col = linear_assignment(big)
    pairs, conf = [], []
    for i in range(n):
        j = int(col[i])
        if i < j < n and col[j] == i and x[i, j] >= cfg.p_min:
            pairs.append((match.index_map[i], match.index_map[j]))
            conf.append(x[i, j])
    return PointStitchSet(np.array(pairs, np.int64).reshape(-1, 2), np.array(conf))


@dataclass(frozen=True, eq=False)
class MatchResult:
    stitches: PointStitchSet
    probability: np.ndarray
    mask: np.ndarray
    match: MatchMatrix | None

    @property
    def converged(self) -> bool:
        return self.match is None or self.match.converged


def run_matcher(points: BoundaryPointSet, cfg: MatcherConfig | None = None, affinity_fn=build_affinity) -> MatchResult:
    cfg = cfg or MatcherConfig()
    prob = score_stitch_probability(points, cfg)
    mask = prob >= cfg.classifier_threshold
    try:
        scores, rows = affinity_fn(points, mask, cfg)
    except MaskEmpty:
        return MatchResult(PointStitchSet.empty(), prob, mask, None)
    match = sinkhorn_normalize(scores, cfg, rows)
    return MatchResult(hungarian_assign(match, cfg), prob, mask, match)


def match_stitches(points: BoundaryPointSet, cfg: MatcherConfig | None = None) -> PointStitchSet:
    return run_matcher(points, cfg).stitches
