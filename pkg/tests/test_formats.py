from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from conftest import assert_meshes_equal, assert_patterns_close, random_garmage, random_mesh, random_pattern

from garmage.codec import CodecConfig, encode_garment
from garmage.core import GarmentMesh, Segment, SegmentStitch, SewingPatternDoc, StitchSide, VectorPanel, validate
from garmage.formats import (
    BadMagic,
    BadStitchIndex,
    FormatError,
    MissingPanelGroup,
    NonPairedUV,
    SchemaViolation,
    TruncatedFile,
    VersionUnsupported,
    format_obj,
    format_pattern,
    garmage_bytes,
    garmage_from_bytes,
    load_garmage,
    load_mesh,
    load_pattern,
    parse_obj,
    parse_pattern,
    parse_stitches,
    pattern_to_dict,
    save_garmage,
    save_mesh,
    save_pattern,
)
from garmage.synth import generate
from garmage.vectorizer import vectorize

TWO_PANEL_OBJ = """\
o panel_0
v 0 0 0
vt 0 0
v 1 0 0
vt 1 0
v 1 1 0
vt 1 1
v 0 1 0
vt 0 1
o panel_1
v 1 0 0
vt 0 0
v 2 0 0
vt 1 0
v 2 1 0
vt 1 1
v 1 1 0
vt 0 1
o panel_0
f 1/1 2/2 3/3
f 1/1 3/3 4/4
o panel_1
f 5/5 6/6 7/7
f 5/5 7/7 8/8
"""


# --------------------------------------------------------------------------- OBJ


def test_two_panel_obj_with_two_stitches(tmp_path):
    (tmp_path / "m.obj").write_text(TWO_PANEL_OBJ)
    (tmp_path / "s.json").write_text(json.dumps([{"a": 1, "b": 4}, {"a": 2, "b": 7}]))
    mesh = load_mesh(tmp_path / "m.obj", tmp_path / "s.json")
    assert len(mesh.positions) == 8
    assert mesh.panels == [0, 1]
    assert mesh.stitches.tolist() == [[1, 4], [2, 7]]
    assert validate(mesh) == []


def test_face_spanning_two_groups_is_rejected():
    text = TWO_PANEL_OBJ.replace("f 5/5 7/7 8/8", "f 3/3 7/7 8/8")
    with pytest.raises(MissingPanelGroup, match="face 3"):
        parse_obj(text, "m.obj")


@pytest.mark.parametrize(
    "edit, error",
    [
        (lambda t: t.replace("o panel_1\nv", "o sleeve\nv"), MissingPanelGroup),
        (lambda t: "v 0 0 0\n" + t, MissingPanelGroup),
        (lambda t: t.replace("f 1/1 2/2 3/3", "f 1 2 3"), NonPairedUV),
        (lambda t: t.replace("f 1/1 2/2 3/3", "f 1/2 2/2 3/3"), NonPairedUV),
        (lambda t: t.replace("vt 1 1\n", "", 1), NonPairedUV),
        (lambda t: t.replace("panel_1", "panel_2"), MissingPanelGroup),
        (lambda t: t.replace("v 2 0 0", "v 2 zero 0"), FormatError),
        (lambda t: t.replace("f 1/1 2/2 3/3", "f 1/1 2/2 3/3 4/4"), FormatError),
        (lambda t: t.replace("f 1/1 2/2 3/3", "f 1/1 2/2 30/30"), FormatError),
    ],
)
def test_malformed_obj_raises_typed_error_with_location(edit, error):
    with pytest.raises(error) as info:
        parse_obj(edit(TWO_PANEL_OBJ), "m.obj")
    assert "m.obj" in str(info.value)


@pytest.mark.parametrize(
    "text",
    ["{}", "[{\"a\": 0}]", "[{\"a\": 0, \"b\": 99}]", "[{\"a\": 1, \"b\": 1}]", "[{\"a\": 0.5, \"b\": 1}]", "nope"],
)
def test_bad_stitch_sidecar(text):
    with pytest.raises(BadStitchIndex):
        parse_stitches(text, 8)


def test_obj_round_trip_on_templates(tmp_path):
    for template in ("tube_skirt", "two_panel_sleeve", "four_panel_skirt"):
        mesh, _ = generate(template)
        save_mesh(mesh, tmp_path / "m.obj", tmp_path / "s.json")
        assert_meshes_equal(load_mesh(tmp_path / "m.obj", tmp_path / "s.json"), mesh)


def test_obj_round_trip_random_meshes():
    rng = np.random.default_rng(5)
    for _ in range(50):
        mesh = random_mesh(rng)
        again = parse_obj(format_obj(mesh))
        assert_meshes_equal(again.with_stitches(mesh.stitches), mesh)
        assert format_obj(again) == format_obj(mesh)


def test_obj_keeps_vt_in_meters():
    mesh = GarmentMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0.0, 0.0], [2.5, 0.0], [0.0, 3.25]], [0, 0, 0], [[0, 1, 2]])
    assert "vt 2.5 0.0" in format_obj(mesh)


# --------------------------------------------------------------------------- GMG1


def test_single_256_panel_file_size(tmp_path):
    mesh, _ = generate("tube_skirt")
    g = encode_garment(mesh, CodecConfig(resolution=256))
    one = type(g)(g.panels[:1])
    save_garmage(one, tmp_path / "g.gmg")
    label = one.panels[0].label.encode()
    header = 4 + 4 + 4 + 4
    per_panel = 4 + 4 + 8 * 4 + 2 + len(label)
    assert (tmp_path / "g.gmg").stat().st_size == header + per_panel + 256 * 256 * 4 * 4


def test_header_layout_is_little_endian():
    rng = np.random.default_rng(0)
    g = random_garmage(rng)
    data = garmage_bytes(g)
    magic, version, count, reserved = struct.unpack_from("<4sIII", data)
    assert (magic, version, count, reserved) == (b"GMG1", 1, len(g), 0)
    h, w = struct.unpack_from("<II", data, 16)
    assert (h, w) == g.panels[0].image.channels.shape[:2]


def test_bad_magic():
    data = bytearray(garmage_bytes(random_garmage(np.random.default_rng(1))))
    data[:4] = b"PNG\x00"
    with pytest.raises(BadMagic):
        garmage_from_bytes(bytes(data))


def test_unsupported_version():
    data = bytearray(garmage_bytes(random_garmage(np.random.default_rng(1))))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionUnsupported):
        garmage_from_bytes(bytes(data))


@pytest.mark.parametrize("cut", [0, 3, 15, 17, 50, -1])
def test_truncated_file(cut):
    data = garmage_bytes(random_garmage(np.random.default_rng(2)))
    with pytest.raises(TruncatedFile):
        garmage_from_bytes(data[:cut] if cut >= 0 else data[:-1])


def test_trailing_bytes_are_rejected():
    data = garmage_bytes(random_garmage(np.random.default_rng(2)))
    with pytest.raises(FormatError, match="trailing"):
        garmage_from_bytes(data + b"\x00")


def test_garmage_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    for k in range(30):
        g = random_garmage(rng)
        save_garmage(g, tmp_path / "g.gmg")
        back = load_garmage(tmp_path / "g.gmg")
        assert garmage_bytes(back) == (tmp_path / "g.gmg").read_bytes()
        for pa, pb in zip(g.panels, back.panels):
            assert pa.label == pb.label
            assert pa.image.channels.tobytes() == pb.image.channels.tobytes()
            assert np.array_equal(pa.frame.as_vector().astype(np.float32), pb.frame.as_vector())


def test_encoded_template_round_trip(tmp_path):
    mesh, _ = generate("four_panel_skirt")
    g = encode_garment(mesh, CodecConfig(resolution=64))
    save_garmage(g, tmp_path / "g.gmg")
    assert garmage_bytes(load_garmage(tmp_path / "g.gmg")) == garmage_bytes(g)


# --------------------------------------------------------------------------- pattern JSON


def rectangle_doc(segment=1) -> SewingPatternDoc:
    corners = [(0.0, 0.0), (0.8, 0.0), (0.8, 0.5), (0.0, 0.5)]
    segs = tuple(Segment(corners[i], corners[(i + 1) % 4], i, (i + 1) % 4) for i in range(4))
    panels = (VectorPanel(0, segs, "front", 4), VectorPanel(1, segs, "back", 4))
    stitch = SegmentStitch(StitchSide(0, segment, 0.0, 1.0), StitchSide(1, 3, 0.0, 1.0), True)
    return SewingPatternDoc(panels, (stitch,))


def test_rectangle_doc_round_trip(tmp_path):
    doc = rectangle_doc()
    assert validate(doc) == []
    save_pattern(doc, tmp_path / "p.json")
    assert load_pattern(tmp_path / "p.json") == doc


def test_document_layout():
    data = pattern_to_dict(rectangle_doc())
    assert data["version"] == 1
    assert set(data["panels"][0]) >= {"id", "label", "loop"}
    assert data["panels"][0]["loop"][0]["from"] == [0.0, 0.0]
    assert data["stitches"][0] == {
        "a": {"panel": 0, "segment": 1, "t0": 0.0, "t1": 1.0},
        "b": {"panel": 1, "segment": 3, "t0": 0.0, "t1": 1.0},
        "reversed": True,
    }


def test_segment_out_of_range_is_a_schema_violation():
    text = format_pattern(rectangle_doc(segment=1)).replace('"segment": 1', '"segment": 7')
    with pytest.raises(SchemaViolation) as info:
        parse_pattern(text)
    assert "$.stitches[0].a.segment" in str(info.value)


@pytest.mark.parametrize(
    "edit, where",
    [
        (lambda d: d["panels"][0].pop("loop"), "$.panels[0]"),
        (lambda d: d["stitches"][0]["a"].update(t0=1.5), "$.stitches[0].a.t0"),
        (lambda d: d["panels"][1].update(id=0), "$.panels[1].id"),
        (lambda d: d["stitches"][0]["b"].update(panel=9), "$.stitches[0].b.panel"),
        (lambda d: d["panels"][0]["loop"][0].update(to=[1, 2, 3]), "$.panels[0].loop[0].to"),
    ],
)
def test_schema_violations_carry_json_path(edit, where):
    data = pattern_to_dict(rectangle_doc())
    edit(data)
    with pytest.raises(SchemaViolation) as info:
        parse_pattern(json.dumps(data))
    assert where in str(info.value)


def test_not_json_is_a_schema_violation():
    with pytest.raises(SchemaViolation):
        parse_pattern("{ nope")


def test_random_patterns_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        doc = random_pattern(rng)
        back = parse_pattern(format_pattern(doc))
        assert_patterns_close(doc, back)
        assert format_pattern(back) == format_pattern(doc)


def test_pipeline_pattern_round_trip(tube, tmp_path):
    mesh, gt, g, pts, result = tube
    doc = vectorize(g, result.stitches, pts)
    save_pattern(doc, tmp_path / "p.json")
    back = load_pattern(tmp_path / "p.json")
    assert_patterns_close(doc, back)
    assert validate(back) == []
