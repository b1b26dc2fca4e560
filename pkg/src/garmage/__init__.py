"""Garmage: per-panel geometry images for garment meshes, with stitch
recovery, sewing-pattern vectorization and seam closing."""

from __future__ import annotations

from .assembler import RelaxParams, RelaxReport, build_constraints, relax_seams
from .codec import CodecConfig, decode_garment, decode_panel, encode_garment, encode_panel
from .contour import ContourConfig, extract_contour, resample_contours
from .core import (
    BoundaryPointSet,
    Garmage,
    GarmageError,
    GarmagePanel,
    GarmentMesh,
    GeometryImage,
    MatcherConfig,
    MatchMatrix,
    PanelFrame,
    PointStitchSet,
    SewingPatternDoc,
    validate,
)
from .formats import (
    load_garmage,
    load_mesh,
    load_pattern,
    save_garmage,
    save_mesh,
    save_pattern,
)
from .matcher import hungarian_assign, match_stitches, run_matcher, sinkhorn_normalize
from .synth import SynthParams, flat_seam, generate
from .vectorizer import VectorizerConfig, fit_segments, group_stitch_edges, optimize_endpoints, vectorize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_") and name != "annotations"]
