from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from garmage.codec import encode_garment
from garmage.contour import allocate_budget, extract_contour, loop_length, resample_contours, resample_loop
from garmage.core import BadParams, EmptyImage, GarmentMesh, GeometryImage, MultiLoop, signed_area

from conftest import cylinder, grid_panel, plane_z0, single_panel


def alpha_image(mask):
    ch = np.zeros(mask.shape + (4,), np.float32)
    ch[..., 3] = mask
    return GeometryImage(ch)


def test_small_square_loop():
    mask = np.zeros((256, 256), bool)
    mask[100:110, 120:130] = True
    loop = extract_contour(alpha_image(mask))
    assert signed_area(loop) > 0
    # traced on the half-pixel outline: a 10 x 10 box around pixel centers 120..129
    assert loop.min(axis=0) == pytest.approx([119.5, 99.5])
    assert loop.max(axis=0) == pytest.approx([129.5, 109.5])
    # corners round off under the pre-blur; straight runs stay on the outline
    assert abs(loop_length(loop) - 4 * (10 - 1)) <= 1.0
    assert tuple(loop[0]) == min(map(tuple, loop))


def test_full_frame_hugs_border():
    loop = extract_contour(alpha_image(np.ones((64, 64), bool)))
    assert loop.min(axis=0) == pytest.approx([-0.5, -0.5])
    assert loop.max(axis=0) == pytest.approx([63.5, 63.5])
    edge = np.minimum(np.abs(loop + 0.5), np.abs(loop - 63.5)).min(axis=1)
    assert np.median(edge) < 1e-9


def test_disk_circumference():
    yy, xx = np.mgrid[:256, :256]
    loop = extract_contour(alpha_image((xx - 128) ** 2 + (yy - 128) ** 2 <= 40**2))
    assert loop_length(loop) == pytest.approx(2 * np.pi * 40, rel=0.02)


def test_two_components_raise_multiloop():
    mask = np.zeros((64, 64), bool)
    mask[5:15, 5:15] = True
    mask[30:40, 30:40] = True
    with pytest.raises(MultiLoop):
        extract_contour(alpha_image(mask))


def test_hole_raises_multiloop():
    mask = np.zeros((64, 64), bool)
    mask[5:40, 5:40] = True
    mask[15:25, 15:25] = False
    with pytest.raises(MultiLoop):
        extract_contour(alpha_image(mask))


def test_empty_alpha_raises():
    with pytest.raises(EmptyImage):
        extract_contour(alpha_image(np.zeros((16, 16), bool)))


def test_square_budget_eight_is_equally_spaced():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    pts = resample_loop(square, 8)
    gaps = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    assert len(pts) == 8
    assert gaps.var() < 1e-6 * 4.0


def test_budget_follows_perimeter():
    a = grid_panel(plane_z0, n=10, width=1.0, height=1.0)
    b = grid_panel(plane_z0, n=10, width=0.5, height=0.5, panel_id=1, base=100)
    mesh = GarmentMesh(*[np.concatenate(x) for x in zip(a, b)])
    sizes = resample_contours(encode_garment(mesh)).panel_sizes()
    assert abs(sizes[0] - 1000) <= 1 and abs(sizes[1] - 500) <= 1
    assert sizes[0] + sizes[1] == 1500


def test_allocate_budget_respects_minimum():
    assert allocate_budget([1.0, 1000.0], 100, minimum=8) == [8, 92]
    with pytest.raises(BadParams):
        allocate_budget([1.0, 1.0], 10, minimum=8)


def test_cylinder_points_lie_on_surface():
    f = cylinder(0.3)
    pts = resample_contours(encode_garment(single_panel(f, n=60, width=0.6)))
    assert np.abs(pts.pos3 - f(pts.uv)).max() <= 1e-3


def test_points_are_ccw_and_indexed():
    pts = resample_contours(encode_garment(single_panel(plane_z0, n=10)))
    rows = pts.panel_slice(0)
    assert pts.loop_index[rows].tolist() == list(range(len(rows)))
    assert signed_area(pts.uv[rows]) > 0
    assert np.allclose(np.linalg.norm(pts.tangent_uv, axis=1), 1.0)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 40), st.integers(0, 40), st.integers(6, 60), st.integers(6, 60)
)
def test_rectangle_loops_property(r0, c0, h, w):
    mask = np.zeros((112, 112), bool)
    mask[r0 : r0 + h, c0 : c0 + w] = True
    loop = extract_contour(alpha_image(mask))
    assert signed_area(loop) > 0
    # blur tails from opposite sides overlap slightly on very narrow panels
    assert loop.min(axis=0) == pytest.approx([c0 - 0.5, r0 - 0.5], abs=0.01)
    assert loop.max(axis=0) == pytest.approx([c0 + w - 0.5, r0 + h - 0.5], abs=0.01)
    # exact outline perimeter minus the rounded corners (less than a pixel each)
    assert 2 * (h + w) - 4 <= loop_length(loop) <= 2 * (h + w)
