"""File formats: panel-labeled OBJ plus stitch sidecar, the GMG1 Garmage container, and pattern JSON.

OBJ conventions: each panel is an object ``o panel_<k>`` (k = 0..N-1);
``vt`` rows are pattern-space UV in meters, not normalized to [0, 1], and
pair 1:1 with ``v`` rows, so faces are written ``f a/a b/b c/c``.

GMG1 layout (little-endian)::

    header   "GMG1" | version u32 | panel count u32 | reserved u32 (0)
    panel    H u32 | W u32 | center 3 f32 | scale 3 f32 | uv scale 2 f32
             | label length u16 | label UTF-8 | H*W*4 f32 (row-major, channels last)

Panel frames are stored as float32; channel data round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import jsonschema
import numpy as np

from .core import (
    Garmage,
    GarmageError,
    GarmagePanel,
    GarmentMesh,
    GeometryImage,
    PanelFrame,
    Segment,
    SegmentStitch,
    SewingPatternDoc,
    StitchSide,
    VectorPanel,
)

MAGIC = b"GMG1"
GMG_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_PANEL = struct.Struct("<II8f")
_LABEL = struct.Struct("<H")

PATTERN_FORMAT = "garmage-pattern"
PATTERN_VERSION = 1
DECIMALS = 9


class FormatError(GarmageError):
    """Malformed or unsupported file content; ``location`` says where."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class MissingPanelGroup(FormatError):
    pass


class NonPairedUV(FormatError):
    pass


class BadStitchIndex(FormatError):
    pass


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class SchemaViolation(FormatError):
    pass


# --------------------------------------------------------------------------- #
# OBJ + stitch sidecar


def _num(x: float) -> str:
    return repr(float(x))


def format_obj(mesh: GarmentMesh) -> str:
    """OBJ text for ``mesh``; vertex order is preserved."""
    lines = ["# panel-labeled garment mesh; vt are pattern-space meters"]
    pids = mesh.panel_ids
    current = None
    for i, (p, t) in enumerate(zip(mesh.positions, mesh.uvs)):
        if pids[i] != current:
            current = int(pids[i])
            lines.append(f"o panel_{current}")
        lines.append(f"v {_num(p[0])} {_num(p[1])} {_num(p[2])}")
        lines.append(f"vt {_num(t[0])} {_num(t[1])}")
    # faces follow all vertices, grouped under their panel's object
    face_panel = pids[mesh.faces[:, 0]] if len(mesh.faces) else np.zeros(0, np.int64)
    for k in mesh.panels:
        sel = np.flatnonzero(face_panel == k)
        if len(sel) == 0:
            continue
        lines.append(f"o panel_{k}")
        for f in mesh.faces[sel] + 1:
            lines.append(f"f {f[0]}/{f[0]} {f[1]}/{f[1]} {f[2]}/{f[2]}")
    return "\n".join(lines) + "\n"


def parse_obj(text: str, where: str = "obj") -> GarmentMesh:
    verts, uvs, vpanel, faces = [], [], [], []
    panel = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        loc = f"{where}:{n}"
        try:
            if tok[0] in ("o", "g"):
                name = tok[1] if len(tok) > 1 else ""
                if not name.startswith("panel_") or not name[6:].isdigit():
                    raise MissingPanelGroup(f"group {name!r} is not named panel_<k>", loc)
                panel = int(name[6:])
            elif tok[0] == "v":
                if panel is None:
                    raise MissingPanelGroup("vertex before any panel group", loc)
                verts.append([float(t) for t in tok[1:4]])
                vpanel.append(panel)
                if len(verts[-1]) != 3:
                    raise FormatError("vertex needs 3 coordinates", loc)
            elif tok[0] == "vt":
                uvs.append([float(t) for t in tok[1:3]])
                if len(uvs[-1]) != 2:
                    raise FormatError("vt needs 2 coordinates", loc)
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise FormatError("only triangles are supported", loc)
                face = []
                for t in tok[1:]:
                    parts = t.split("/")
                    if len(parts) < 2 or parts[1] == "" or parts[0] != parts[1]:
                        raise NonPairedUV(f"face corner {t!r} must be v/vt with equal indices", loc)
                    face.append(int(parts[0]) - 1)
                if panel is None:
                    raise MissingPanelGroup("face before any panel group", loc)
                for v in face:
                    if not 0 <= v < len(verts):
                        raise FormatError(f"face references vertex {v + 1} of {len(verts)}", loc)
                spans = {vpanel[v] for v in face} | {panel}
                if len(spans) > 1:
                    raise MissingPanelGroup(f"face {len(faces)} spans panel groups {sorted(spans)}", loc)
                faces.append(face)
        except ValueError as exc:
            raise FormatError(f"bad number: {exc}", loc) from None
    if len(uvs) != len(verts):
        raise NonPairedUV(f"{len(verts)} v rows but {len(uvs)} vt rows", where)
    if not verts:
        raise FormatError("no vertices", where)
    ids = sorted(set(vpanel))
    if ids != list(range(len(ids))):
        raise MissingPanelGroup(f"panel groups {ids} are not 0..N-1", where)
    return GarmentMesh(
        np.array(verts, np.float64),
        np.array(uvs, np.float64),
        np.array(vpanel, np.int64),
        np.array(faces, np.int64).reshape(-1, 3),
    )


def format_stitches(pairs) -> str:
    pairs = np.asarray(pairs, np.int64).reshape(-1, 2)
    return json.dumps([{"a": int(a), "b": int(b)} for a, b in pairs], indent=1) + "\n"


def parse_stitches(text: str, n_vertices: int, where: str = "stitches") -> np.ndarray:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadStitchIndex(f"not JSON: {exc}", where) from None
    if not isinstance(data, list):
        raise BadStitchIndex("expected a list of {a, b} objects", where)
    out = []
    for k, item in enumerate(data):
        loc = f"{where}[{k}]"
        if not isinstance(item, dict) or set(item) != {"a", "b"}:
            raise BadStitchIndex("expected an object with keys a and b", loc)
        a, b = item["a"], item["b"]
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (a, b)):
            raise BadStitchIndex("indices must be integers", loc)
        if not (0 <= a < n_vertices and 0 <= b < n_vertices) or a == b:
            raise BadStitchIndex(f"pair ({a}, {b}) invalid for {n_vertices} vertices", loc)
        out.append((a, b))
    return np.array(out, np.int64).reshape(-1, 2)


def save_mesh(mesh: GarmentMesh, obj_path, stitches_path=None) -> None:
    Path(obj_path).write_text(format_obj(mesh))
    if stitches_path is not None:
        Path(stitches_path).write_text(format_stitches(mesh.stitches))


def _read_text(path, where: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8 text: {exc}", where) from None


def load_mesh(obj_path, stitches_path=None) -> GarmentMesh:
    mesh = parse_obj(_read_text(obj_path, str(obj_path)), str(obj_path))
    if stitches_path is not None:
        pairs = parse_stitches(_read_text(stitches_path, str(stitches_path)), len(mesh.positions), str(stitches_path))
        mesh = mesh.with_stitches(pairs)
    return mesh


# --------------------------------------------------------------------------- #
# GMG1 binary


def garmage_bytes(garmage: Garmage) -> bytes:
    parts = [_HEADER.pack(MAGIC, GMG_VERSION, len(garmage), 0)]
    for p in garmage.panels:
        h, w = p.image.height, p.image.width
        parts.append(_PANEL.pack(h, w, *p.frame.as_vector()))
        label = p.label.encode("utf-8")
        if len(label) > 0xFFFF:
            raise FormatError("label longer than 65535 bytes")
        parts.append(_LABEL.pack(len(label)) + label)
        parts.append(np.ascontiguousarray(p.image.channels, dtype="<f4").tobytes())
    return b"".join(parts)


def garmage_from_bytes(data: bytes, where: str = "gmg") -> Garmage:
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedFile(f"{what} needs {n} bytes at offset {pos}, file has {len(view)}", where)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    magic, version, count, _ = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise BadMagic(f"magic {bytes(magic)!r}, expected {MAGIC!r}", where)
    if version != GMG_VERSION:
        raise VersionUnsupported(f"version {version}, this reader supports {GMG_VERSION}", where)
    panels = []
    for k in range(count):
        h, w, *frame = _PANEL.unpack(take(_PANEL.size, f"panel {k} header"))
        (n_label,) = _LABEL.unpack(take(_LABEL.size, f"panel {k} label length"))
        try:
            label = bytes(take(n_label, f"panel {k} label")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"panel {k} label is not UTF-8: {exc}", where) from None
        raw = take(h * w * 16, f"panel {k} pixels")
        channels = np.frombuffer(raw, dtype="<f4").reshape(h, w, 4).astype(np.float32)
        f = [float(x) for x in frame]
        panels.append(GarmagePanel(GeometryImage(channels), PanelFrame(f[0:3], f[3:6], f[6:8]), label))
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after {count} panels", where)
    return Garmage(tuple(panels))


def save_garmage(garmage: Garmage, path) -> None:
    Path(path).write_bytes(garmage_bytes(garmage))


def load_garmage(path) -> Garmage:
    return garmage_from_bytes(Path(path).read_bytes(), str(path))


# --------------------------------------------------------------------------- #
# pattern JSON

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_SIDE = {
    "type": "object",
    "required": ["panel", "segment", "t0", "t1"],
    "additionalProperties": False,
    "properties": {
        "panel": {"type": "integer", "minimum": 0},
        "segment": {"type": "integer", "minimum": 0},
        "t0": {"type": "number", "minimum": 0, "maximum": 1},
        "t1": {"type": "number", "minimum": 0, "maximum": 1},
    },
}
PATTERN_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "panels", "stitches"],
    "properties": {
        "format": {"const": PATTERN_FORMAT},
        "version": {"type": "integer"},
        "panels": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "label", "loop"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "label": {"type": "string"},
                    "points": {"type": "integer", "minimum": 0},
                    "loop": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["from", "to"],
                            "additionalProperties": False,
                            "properties": {
                                "from": _POINT,
                                "to": _POINT,
                                "span": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                            },
                        },
                    },
                },
            },
        },
        "stitches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["a", "b", "reversed"],
                "additionalProperties": False,
                "properties": {"a": _SIDE, "b": _SIDE, "reversed": {"type": "boolean"}},
            },
        },
    },
}


def _r(x: float) -> float:
    return round(float(x), DECIMALS) + 0.0  # + 0.0 folds -0.0


def pattern_to_dict(doc: SewingPatternDoc) -> dict:
    panels = []
    for p in doc.panels:
        loop = [
            {"from": [_r(s.p0[0]), _r(s.p0[1])], "to": [_r(s.p1[0]), _r(s.p1[1])], "span": [s.start, s.end]}
            for s in p.segments
        ]
        panels.append({"id": p.panel_id, "label": p.label, "points": p.n_points, "loop": loop})

    def side(s: StitchSide) -> dict:
        return {"panel": s.panel, "segment": s.segment, "t0": _r(s.t0), "t1": _r(s.t1)}

    stitches = [{"a": side(s.a), "b": side(s.b), "reversed": bool(s.reversed)} for s in doc.stitches]
    return {"format": PATTERN_FORMAT, "version": PATTERN_VERSION, "panels": panels, "stitches": stitches}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def pattern_from_dict(data) -> SewingPatternDoc:
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(PATTERN_SCHEMA).iter_errors(data))
    if err is not None:
        raise SchemaViolation(err.message, _json_path(err.absolute_path))
    if data["version"] != PATTERN_VERSION:
        raise VersionUnsupported(f"pattern version {data['version']}", "$.version")
    seg_count = {}
    panels = []
    for k, p in enumerate(data["panels"]):
        if p["id"] in seg_count:
            raise SchemaViolation(f"duplicate panel id {p['id']}", f"$.panels[{k}].id")
        seg_count[p["id"]] = len(p["loop"])
        segs = tuple(
            Segment(tuple(s["from"]), tuple(s["to"]), *(s.get("span") or (0, 0))) for s in p["loop"]
        )
        panels.append(VectorPanel(p["id"], segs, p["label"], p.get("points", 0)))
    stitches = []
    for k, st in enumerate(data["stitches"]):
        sides = []
        for name in ("a", "b"):
            s = st[name]
            loc = f"$.stitches[{k}].{name}"
            if s["panel"] not in seg_count:
                raise SchemaViolation(f"panel {s['panel']} does not exist", loc + ".panel")
            if s["segment"] >= seg_count[s["panel"]]:
                raise SchemaViolation(
                    f"segment {s['segment']} of a {seg_count[s['panel']]}-segment panel", loc + ".segment"
                )
            sides.append(StitchSide(s["panel"], s["segment"], float(s["t0"]), float(s["t1"])))
        stitches.append(SegmentStitch(sides[0], sides[1], st["reversed"]))
    return SewingPatternDoc(tuple(panels), tuple(stitches))


def format_pattern(doc: SewingPatternDoc) -> str:
    return json.dumps(pattern_to_dict(doc), indent=1) + "\n"


def parse_pattern(text: str) -> SewingPatternDoc:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not JSON: {exc.msg} (line {exc.lineno})", "$") from None
    return pattern_from_dict(data)


def save_pattern(doc: SewingPatternDoc, path) -> None:
    Path(path).write_text(format_pattern(doc))


def load_pattern(path) -> SewingPatternDoc:
    return parse_pattern(_read_text(path, str(path)))
