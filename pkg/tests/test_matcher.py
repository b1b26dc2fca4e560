from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from garmage.assignment import linear_assignment
from garmage.codec import encode_garment
from garmage.contour import resample_contours
from garmage.core import BadParams, BoundaryPointSet, GarmentMesh, MaskEmpty, MatcherConfig, MatchMatrix
from garmage.matcher import (
    build_affinity,
    classifier_sigma,
    hungarian_assign,
    run_matcher,
    score_stitch_probability,
    sinkhorn_normalize,
)
from garmage.synth import label_points, stitch_metrics
from garmage.vectorizer import find_runs

from conftest import grid_panel, plane_z0


def point_set(pos3, panel_ids, tangent3=None, loop_index=None):
    pos3 = np.asarray(pos3, float)
    m = len(pos3)
    tangent3 = np.tile([1.0, 0, 0], (m, 1)) if tangent3 is None else np.asarray(tangent3, float)
    if loop_index is None:
        loop_index = np.zeros(m, int)
        for p in np.unique(panel_ids):
            sel = np.flatnonzero(np.asarray(panel_ids) == p)
            loop_index[sel] = np.arange(len(sel))
    return BoundaryPointSet(
        panel_ids, loop_index, pos3, pos3[:, :2], tangent3, tangent3[:, :2], np.zeros(m), np.full(m, 0.004)
    )


# --------------------------------------------------------------------------- classifier


def test_coincident_partner_scores_one():
    pts = point_set([[0, 0, 0], [0, 0, 0]], [0, 1])
    p = score_stitch_probability(pts, MatcherConfig(classifier_sigma=0.01))
    assert p.tolist() == [1.0, 1.0]


def test_three_sigma_point_scores_exp_minus_4_5():
    sigma = 0.01
    pts = point_set([[0, 0, 0], [3 * sigma, 0, 0]], [0, 1])
    p = score_stitch_probability(pts, MatcherConfig(classifier_sigma=sigma))
    assert p == pytest.approx([np.exp(-4.5)] * 2, rel=1e-12)
    assert p[0] == pytest.approx(0.011, abs=5e-4)


def test_same_panel_neighbors_do_not_count():
    # eight points on one panel: neighbors within M/8 = 1 step are ineligible
    pos = np.stack([np.arange(8) * 0.01, np.zeros(8), np.zeros(8)], axis=1)
    p = score_stitch_probability(point_set(pos, np.zeros(8, int)), MatcherConfig(classifier_sigma=0.01))
    assert p[0] == pytest.approx(np.exp(-(0.02**2) / (2 * 0.01**2)))


def test_tube_seam_and_hem_probabilities(tube):
    mesh, gt, g, pts, result = tube
    lab = label_points(pts, gt)
    p = result.probability
    length = np.linalg.norm(gt.seams[0].uv_a[1] - gt.seams[0].uv_a[0])
    inner = (lab.seam >= 0) & (lab.arc > lab.spacing) & (lab.arc < length - lab.spacing)
    assert inner.sum() > 700
    assert p[inner].min() > 0.9
    for pid in (0, 1):
        rows = np.flatnonzero((pts.panel_ids == pid) & (lab.seam < 0))
        u = pts.uv[rows, 0]
        lo, hi = u.min(), u.max()
        mid = rows[(u - lo > 0.1 * (hi - lo)) & (hi - u > 0.1 * (hi - lo))]
        assert len(mid) > 100
        assert p[mid].max() < 0.1


# --------------------------------------------------------------------------- affinity


def test_coincident_opposite_tangents_score_one():
    pts = point_set([[0, 0, 0], [0, 0, 0]], [0, 1], tangent3=[[1, 0, 0], [-1, 0, 0]])
    cfg = MatcherConfig(temperature=1.0, weights=(1.0,) * 9)
    scores, rows = build_affinity(pts, np.array([True, True]), cfg)
    assert scores[0, 1] == 1.0 and scores[1, 0] == 1.0
    assert scores[0, 0] == 0.0 and scores[1, 1] == 0.0
    assert rows.tolist() == [0, 1]


def test_affinity_needs_two_points():
    pts = point_set([[0, 0, 0], [1, 0, 0]], [0, 1])
    with pytest.raises(MaskEmpty):
        build_affinity(pts, np.array([True, False]))


def test_tube_partners_dominate_rows(tube):
    mesh, gt, g, pts, result = tube
    scores, rows = build_affinity(pts, result.mask)
    lab = label_points(pts, gt)
    best = rows[np.argmax(scores, axis=1)]
    i = rows
    ok = (lab.seam[i] >= 0) & (lab.seam[best] == lab.seam[i]) & (lab.side[best] != lab.side[i])
    assert ok.mean() >= 0.98


# --------------------------------------------------------------------------- sinkhorn


def test_dominant_diagonal_becomes_identity():
    m = sinkhorn_normalize(np.array([[10, 0.1], [0.1, 10]]), MatcherConfig(slack_logit=-30))
    p = m.probs[:2, :2]
    assert p[0, 1] < 0.05 and p[1, 0] < 0.05
    assert p[0, 0] > 0.95 and p[1, 1] > 0.95


def test_all_equal_scores_stay_uniform():
    n = 6
    m = sinkhorn_normalize(np.ones((n, n)))
    core = m.probs[:n, :n]
    assert np.ptp(core) < 1e-12
    assert np.allclose(m.probs[:n].sum(axis=1), 1.0)
    # the slack takes part of each row's mass
    assert 1.0 / (n + 1) < core[0, 0] < 1.0 / n


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.just(12)), elements=st.floats(0.01, 100.0)))
def test_sinkhorn_is_doubly_stochastic(block):
    n = block.shape[0]
    m = sinkhorn_normalize(block[:, :n], MatcherConfig(sinkhorn_iters=5000))
    assert m.converged
    assert np.allclose(m.probs[:n].sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(m.probs[:, :n].sum(axis=0), 1.0, atol=1e-6)


def test_sharper_temperature_approaches_permutation():
    rng = np.random.default_rng(3)
    perm = rng.permutation(8)
    cost = rng.uniform(1.0, 2.0, (8, 8))
    cost[np.arange(8), perm] = 0.0
    target = np.zeros((8, 8))
    target[np.arange(8), perm] = 1.0
    dist = []
    for tau in (1.0, 0.1, 0.01):
        m = sinkhorn_normalize(np.exp(-cost / tau), MatcherConfig(slack_logit=-40, sinkhorn_iters=2000))
        dist.append(np.abs(m.probs[:8, :8] - target).max())
    assert dist[0] > dist[1] > dist[2]
    assert dist[2] < 1e-3


def test_iteration_cap_is_a_warning_state():
    m = sinkhorn_normalize(np.random.default_rng(0).random((5, 5)), MatcherConfig(sinkhorn_iters=1))
    assert not m.converged and m.iterations == 1
    assert np.allclose(m.probs.sum(axis=0), 1.0)


def test_sinkhorn_rejects_negative_scores():
    with pytest.raises(BadParams):
        sinkhorn_normalize(np.array([[1.0, -1.0], [0.0, 1.0]]))


# --------------------------------------------------------------------------- assignment


def brute_force(cost):
    n = len(cost)
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("seed", range(10))
def test_linear_assignment_matches_enumeration(seed):
    cost = np.random.default_rng(seed).random((7, 7))
    rows, cols = linear_assignment(cost)
    assert sorted(cols.tolist()) == list(range(7))
    assert cost[rows, cols].sum() == brute_force(cost)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 5).map(float)))
def test_rectangular_assignment_is_optimal(cost):
    rows, cols = linear_assignment(cost)
    n, m = cost.shape
    k = min(n, m)
    assert len(rows) == k and len(set(rows.tolist())) == k and len(set(cols.tolist())) == k
    if n <= m:
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    else:
        best = min(sum(cost[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))
    assert cost[rows, cols].sum() == pytest.approx(best)


def test_near_identity_permutation_is_recovered():
    # six points; point i belongs with point i + 3
    x = np.full((7, 7), 0.01)
    for i in range(3):
        x[i, i + 3] = x[i + 3, i] = 0.95
    np.fill_diagonal(x, 0.0)
    s = hungarian_assign(MatchMatrix(x, np.arange(6)))
    assert s.as_set() == {(0, 3), (1, 4), (2, 5)}
    assert np.allclose(s.confidence, 0.95)


def test_low_probability_pairs_are_dropped():
    x = np.full((5, 5), 0.5)
    x[0, 1] = x[1, 0] = 0.2
    s = hungarian_assign(MatchMatrix(x, np.arange(4)), MatcherConfig(p_min=0.3))
    assert (0, 1) not in s.as_set()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 10), st.just(11)), elements=st.floats(0.0, 1.0)))
def test_assignment_is_one_to_one(block):
    n = block.shape[0]
    m = sinkhorn_normalize(block[:, :n] + 1e-3)
    s = hungarian_assign(m)
    used = s.pairs.ravel()
    assert len(set(used.tolist())) == len(used)
    assert np.all(s.pairs[:, 0] < s.pairs[:, 1])


# --------------------------------------------------------------------------- end to end


def test_tube_matching_quality(tube):
    mesh, gt, g, pts, result = tube
    m = stitch_metrics(result.stitches, pts, gt)
    assert m["precision"] >= 0.98 and m["recall"] >= 0.98
    assert m["mean_pair_px"] <= 1.0


def test_tube_yields_two_seam_runs(tube):
    mesh, gt, g, pts, result = tube
    runs = find_runs(result.stitches, pts)
    long_runs = [r for r in runs if len(r.idx_a) > 20]
    assert len(long_runs) == 2
    assert {(r.panel_a, r.panel_b) for r in long_runs} == {(0, 1)}


def test_separated_panels_give_no_stitches():
    a = grid_panel(plane_z0, n=10, width=0.5, height=0.5)
    b = grid_panel(lambda uv: plane_z0(uv) + [3.0, 0, 0], n=10, width=0.5, height=0.5, panel_id=1, base=100)
    pts = resample_contours(encode_garment(GarmentMesh(*[np.concatenate(x) for x in zip(a, b)])))
    result = run_matcher(pts)
    assert len(result.stitches) == 0
    assert not result.mask.any()


@pytest.mark.parametrize("s", [2.0, 0.5])
def test_scale_equivariance(tube, s):
    mesh, gt, g, pts, result = tube
    scaled = BoundaryPointSet(
        pts.panel_ids, pts.loop_index, pts.pos3 * s, pts.uv, pts.tangent3, pts.tangent_uv, pts.arc_param, pts.pixel_pitch
    )
    assert classifier_sigma(scaled, MatcherConfig()) == pytest.approx(s * classifier_sigma(pts, MatcherConfig()))
    assert run_matcher(scaled).stitches.as_set() == result.stitches.as_set()


def test_matching_is_deterministic(tube):
    mesh, gt, g, pts, result = tube
    again = run_matcher(pts)
    assert np.array_equal(again.stitches.pairs, result.stitches.pairs)
    assert np.array_equal(again.stitches.confidence, result.stitches.confidence)
