"""Command-line front end: one subcommand per pipeline stage plus ``pipeline``.

Exit codes: 0 success, 2 invalid input (missing file, malformed data,
failed validation), 3 numerical non-convergence (outputs are still
written). Reports are JSON; wall-clock numbers live under ``timings`` so
the rest of a report can be compared byte for byte between runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import formats
from .assembler import RelaxParams, build_constraints, relax_seams
from .codec import CodecConfig, decode_garment, encode_garment
from .contour import ContourConfig, resample_contours
from .core import BoundaryPointSet, Garmage, GarmageError, MatcherConfig, PointStitchSet, validate
from .matcher import run_matcher
from .synth import TEMPLATES, SynthParams, generate
from .vectorizer import GroupReport, VectorizerConfig, fit_panels, group_stitch_edges, stitch_edge_pairs, vectorize

CONFIG_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3
_SECTIONS = {
    "codec": CodecConfig,
    "contour": ContourConfig,
    "matcher": MatcherConfig,
    "vectorizer": VectorizerConfig,
    "relax": RelaxParams,
}


class UsageError(GarmageError):
    pass


# --------------------------------------------------------------------------- #
# config and reports


def load_config(path: str | None) -> dict:
    """Module configs from a versioned JSON file; missing sections take defaults."""
    cfg = {name: cls() for name, cls in _SECTIONS.items()}
    if path is None:
        return cfg
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: not JSON ({exc.msg})") from None
    if not isinstance(data, dict) or data.get("version") != CONFIG_VERSION:
        raise UsageError(f"config {path}: expected an object with \"version\": {CONFIG_VERSION}")
    for name, section in data.items():
        if name == "version":
            continue
        if name not in _SECTIONS or not isinstance(section, dict):
            raise UsageError(f"config {path}: unknown section {name!r}")
        known = {f.name for f in fields(_SECTIONS[name])}
        unknown = set(section) - known
        if unknown:
            raise UsageError(f"config {path}: unknown keys in {name}: {sorted(unknown)}")
        try:
            cfg[name] = replace(cfg[name], **section)
        except TypeError as exc:
            raise UsageError(f"config {path}: {name}: {exc}") from None
    return cfg


def config_dict(cfg: dict) -> dict:
    return {"version": CONFIG_VERSION, **{k: asdict(v) for k, v in cfg.items()}}


def resolve_threads(arg: int | None) -> int:
    env = os.environ.get("GARMAGE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"GARMAGE_THREADS={env!r} is not an integer") from None
    elif arg is not None:
        n = arg
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=1, sort_keys=True) + "\n")


class Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def stage(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = round(time.perf_counter() - self.t0, 6)

        return _Ctx()


# --------------------------------------------------------------------------- #
# stitch and point files


def stitches_to_dict(stitches: PointStitchSet, points: BoundaryPointSet) -> dict:
    sizes = points.panel_sizes()
    pairs = []
    for (i, j), c in zip(stitches.pairs, stitches.confidence):
        pairs.append(
            {
                "a": {"panel": int(points.panel_ids[i]), "index": int(points.loop_index[i])},
                "b": {"panel": int(points.panel_ids[j]), "index": int(points.loop_index[j])},
                "confidence": round(float(c), 9),
            }
        )
    return {"version": 1, "panel_points": [int(sizes[k]) for k in sorted(sizes)], "pairs": pairs}


def stitches_from_dict(data, points: BoundaryPointSet, where: str) -> PointStitchSet:
    sizes = points.panel_sizes()
    try:
        expected = [int(sizes[k]) for k in sorted(sizes)]
        if data.get("version") != 1 or data.get("panel_points") != expected:
            raise UsageError(
                f"{where}: stitch file was made for panel point counts {data.get('panel_points')}, "
                f"contours here give {expected}"
            )
        row = {(int(p), int(k)): r for r, (p, k) in enumerate(zip(points.panel_ids, points.loop_index))}
        pairs, conf = [], []
        for n, item in enumerate(data["pairs"]):
            a = row[(item["a"]["panel"], item["a"]["index"])]
            b = row[(item["b"]["panel"], item["b"]["index"])]
            pairs.append((a, b))
            conf.append(float(item.get("confidence", 1.0)))
    except (KeyError, TypeError, AttributeError) as exc:
        raise UsageError(f"{where}: malformed stitch file ({exc!r})") from None
    if len({v for p in pairs for v in p}) != 2 * len(pairs):
        raise UsageError(f"{where}: a boundary point appears in more than one pair")
    return PointStitchSet(np.array(pairs, np.int64).reshape(-1, 2), np.array(conf))


def points_to_dict(points: BoundaryPointSet) -> dict:
    r = lambda a: np.round(np.asarray(a, np.float64), 9).tolist()  # noqa: E731
    return {
        "version": 1,
        "panel_ids": points.panel_ids.tolist(),
        "loop_index": points.loop_index.tolist(),
        "pos3": r(points.pos3),
        "uv": r(points.uv),
        "tangent3": r(points.tangent3),
        "tangent_uv": r(points.tangent_uv),
        "arc_param": r(points.arc_param),
        "pixel_pitch": r(points.pixel_pitch),
    }


# --------------------------------------------------------------------------- #
# stage helpers


def _need(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return p


def _load_garmage(path: str) -> Garmage:
    return formats.load_garmage(_need(path))


def _points(garmage: Garmage, cfg: dict, threads: int) -> BoundaryPointSet:
    return resample_contours(garmage, cfg["contour"], cfg["codec"], threads)


def _match_report(result) -> dict:
    m = result.match
    return {
        "points_masked_in": int(result.mask.sum()),
        "pairs": len(result.stitches),
        "sinkhorn_iterations": m.iterations if m is not None else 0,
        "sinkhorn_converged": result.converged,
        "mean_confidence": float(result.stitches.confidence.mean()) if len(result.stitches) else None,
    }


def stage_match(garmage: Garmage, cfg: dict, threads: int, timer: Timer):
    with timer.stage("contour"):
        points = _points(garmage, cfg, threads)
    with timer.stage("match"):
        result = run_matcher(points, cfg["matcher"])
    report = _match_report(result)
    report["points"] = len(points)
    warnings = []
    if not result.converged:
        warnings.append("sinkhorn reached its iteration cap before the tolerance; matrix used as is")
    return points, result.stitches, report, warnings


def pattern_pairs(points, stitches, cfg: dict, timer: Timer) -> PointStitchSet:
    """Point stitches that survive grouping into stitch edges.

    Short runs at rounded panel corners pair a seam end with a hem point;
    closing them would need real fabric strain, so assembly follows the
    sewing pattern and skips them.
    """
    with timer.stage("group"):
        grouping = GroupReport()
        group_stitch_edges(stitches, points, fit_panels(points, cfg["vectorizer"]), cfg["vectorizer"], grouping)
    return stitch_edge_pairs(stitches, grouping)


def stage_assemble(garmage: Garmage, points, stitches, cfg: dict, threads: int, timer: Timer):
    with timer.stage("decode"):
        mesh = decode_garment(garmage, cfg["codec"], threads)
    with timer.stage("relax"):
        constraints = build_constraints(mesh, stitches, points)
        closed, rep = relax_seams(mesh, constraints, cfg["relax"])
    closed = closed.with_stitches(constraints.stitches)
    report = {
        "pairs_in": len(stitches),
        "stitch_constraints": len(constraints.stitches),
        "edge_constraints": len(constraints.edges),
        "dropped_pairs": constraints.duplicates,
        "strain_within_limit": rep.max_strain <= cfg["relax"].strain_limit,
        **rep.as_dict(),
    }
    return closed, report, rep.converged


# --------------------------------------------------------------------------- #
# subcommands


def cmd_encode(args, cfg, threads, timer):
    codec = replace(cfg["codec"], resolution=args.res) if args.res else cfg["codec"]
    mesh = formats.load_mesh(_need(args.input), _need(args.stitches) if args.stitches else None)
    problems = validate(mesh)
    if problems:
        raise UsageError("invalid mesh: " + "; ".join(map(str, problems[:5])))
    with timer.stage("encode"):
        g = encode_garment(mesh, codec, threads=threads)
    formats.save_garmage(g, args.out)
    return {"panels": len(g), "resolution": codec.resolution}, EXIT_OK


def cmd_decode(args, cfg, threads, timer):
    g = _load_garmage(args.input)
    with timer.stage("decode"):
        mesh = decode_garment(g, cfg["codec"], threads)
    formats.save_mesh(mesh, args.out)
    return {"vertices": len(mesh.positions), "faces": len(mesh.faces)}, EXIT_OK


def cmd_contour(args, cfg, threads, timer):
    g = _load_garmage(args.input)
    with timer.stage("contour"):
        points = _points(g, cfg, threads)
    write_json(args.out, points_to_dict(points))
    return {"points": len(points), "per_panel": points.panel_sizes()}, EXIT_OK


def cmd_match(args, cfg, threads, timer):
    g = _load_garmage(args.input)
    points, stitches, report, warnings = stage_match(g, cfg, threads, timer)
    write_json(args.out, stitches_to_dict(stitches, points))
    report["warnings"] = warnings
    return report, EXIT_OK


def _load_stitches(path: str, points) -> PointStitchSet:
    p = _need(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not JSON ({exc.msg})") from None
    return stitches_from_dict(data, points, path)


def cmd_vectorize(args, cfg, threads, timer):
    g = _load_garmage(args.input)
    with timer.stage("contour"):
        points = _points(g, cfg, threads)
    stitches = _load_stitches(args.stitches, points)
    report: dict = {}
    with timer.stage("vectorize"):
        doc = vectorize(g, stitches, points, cfg["vectorizer"], report)
    problems = validate(doc)
    formats.save_pattern(doc, args.out)
    report["violations"] = [str(p) for p in problems]
    return report, EXIT_INVALID if problems else EXIT_OK


def cmd_assemble(args, cfg, threads, timer):
    g = _load_garmage(args.input)
    with timer.stage("contour"):
        points = _points(g, cfg, threads)
    stitches = _load_stitches(args.stitches, points)
    if not args.all_pairs:
        stitches = pattern_pairs(points, stitches, cfg, timer)
    closed, report, converged = stage_assemble(g, points, stitches, cfg, threads, timer)
    formats.save_mesh(closed, args.out, args.stitches_out)
    return report, EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_synth(args, cfg, threads, timer):
    params = SynthParams(
        radius=args.radius, height=args.height, density=args.density,
        noise_uv_px=args.noise_uv, noise_3d=args.noise_3d, gap=args.gap, seed=args.seed,
    )
    mesh, gt = generate(args.template, params)
    formats.save_mesh(mesh, args.out, args.stitches_out)
    return {"template": args.template, "vertices": len(mesh.positions), "stitches": len(mesh.stitches)}, EXIT_OK


def cmd_validate(args, cfg, threads, timer):
    path = _need(args.input)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        asset = formats.load_mesh(path, _need(args.stitches) if args.stitches else None)
    elif suffix == ".gmg":
        asset = formats.load_garmage(path)
    elif suffix == ".json":
        asset = formats.load_pattern(path)
    else:
        raise UsageError(f"cannot tell the format of {path} (expected .obj, .gmg or .json)")
    problems = validate(asset)
    for p in problems:
        print(p, file=sys.stderr)
    return {"kind": type(asset).__name__, "violations": [str(p) for p in problems]}, (
        EXIT_INVALID if problems else EXIT_OK
    )


def cmd_pipeline(args, cfg, threads, timer):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    if args.template:
        mesh, _ = generate(args.template, SynthParams(seed=args.seed))
    elif args.input:
        mesh = formats.load_mesh(_need(args.input), _need(args.stitches) if args.stitches else None)
    else:
        raise UsageError("pipeline needs --input mesh.obj or --template NAME")
    problems = validate(mesh)
    if problems:
        raise UsageError("invalid mesh: " + "; ".join(map(str, problems[:5])))
    codec = replace(cfg["codec"], resolution=args.res) if args.res else cfg["codec"]
    cfg = {**cfg, "codec": codec}
    stages: dict = {}
    with timer.stage("encode"):
        g = encode_garment(mesh, codec, threads=threads)
    formats.save_garmage(g, out / "g.gmg")
    g = formats.load_garmage(out / "g.gmg")  # later stages see exactly what is on disk
    stages["encode"] = {"panels": len(g), "resolution": codec.resolution}

    points, stitches, stages["match"], warnings = stage_match(g, cfg, threads, timer)
    write_json(out / "stitches.json", stitches_to_dict(stitches, points))

    vec_report: dict = {}
    grouping = GroupReport()
    with timer.stage("vectorize"):
        doc = vectorize(g, stitches, points, cfg["vectorizer"], vec_report, grouping)
    formats.save_pattern(doc, out / "pattern.json")
    vec_report["violations"] = [str(p) for p in validate(doc)]
    stages["vectorize"] = vec_report

    pairs = stitch_edge_pairs(stitches, grouping)
    closed, stages["assemble"], converged = stage_assemble(g, points, pairs, cfg, threads, timer)
    formats.save_mesh(closed, out / "closed.obj", out / "closed.stitches.json")
    report = {"stages": stages, "warnings": warnings, "config": config_dict(cfg)}
    code = EXIT_OK
    if vec_report["violations"]:
        code = EXIT_INVALID
    elif not converged:
        code = EXIT_NOT_CONVERGED
    return report, code


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="versioned JSON file with codec/contour/matcher/vectorizer/relax sections")
    common.add_argument("--threads", type=int, help="worker threads (default: CPU count; GARMAGE_THREADS overrides)")

    parser = argparse.ArgumentParser(prog="garmage", description="Garment mesh <-> Garmage <-> sewing pattern pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="mesh.obj -> Garmage")
    p.add_argument("--input", required=True)
    p.add_argument("--stitches", help="optional stitch sidecar for validation")
    p.add_argument("--res", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("decode", parents=[common], help="Garmage -> grid mesh.obj")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("contour", parents=[common], help="Garmage -> resampled boundary points (JSON)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("match", parents=[common], help="Garmage -> point stitches")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("vectorize", parents=[common], help="Garmage + stitches -> pattern.json")
    p.add_argument("--input", required=True)
    p.add_argument("--stitches", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("assemble", parents=[common], help="Garmage + stitches -> seam-closed mesh")
    p.add_argument("--input", required=True)
    p.add_argument("--stitches", required=True)
    p.add_argument(
        "--all-pairs", action="store_true",
        help="close every given pair, not only those that group into stitch edges",
    )
    p.add_argument("--stitches-out", help="write the closed mesh's vertex stitch pairs here")
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage; artifacts go to --outdir")
    p.add_argument("--input", help="mesh.obj (or use --template)")
    p.add_argument("--stitches")
    p.add_argument("--template", choices=TEMPLATES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int)
    p.add_argument("--outdir", required=True)
    p.add_argument("--report", help="default: <outdir>/report.json")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic garment OBJ and ground-truth stitches")
    p.add_argument("--template", required=True, choices=TEMPLATES)
    p.add_argument("--out", required=True)
    p.add_argument("--stitches-out")
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--density", type=int, default=32)
    p.add_argument("--noise-uv", type=float, default=0.0)
    p.add_argument("--noise-3d", type=float, default=0.0)
    p.add_argument("--gap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")

    p = sub.add_parser("validate", parents=[common], help="check an .obj, .gmg or pattern .json file")
    p.add_argument("--input", required=True)
    p.add_argument("--stitches")
    p.add_argument("--report")
    return parser


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "contour": cmd_contour,
    "match": cmd_match,
    "vectorize": cmd_vectorize,
    "assemble": cmd_assemble,
    "pipeline": cmd_pipeline,
    "synth": cmd_synth,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    timer = Timer()
    try:
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        report, code = COMMANDS[args.command](args, cfg, threads, timer)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GarmageError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = {"command": args.command, "exit_code": code, **report, "timings": timer.timings}
    report_path = args.report
    if report_path is None and args.command == "pipeline":
        report_path = str(Path(args.outdir) / "report.json")
    if report_path:
        write_json(report_path, report)
    if code == EXIT_NOT_CONVERGED:
        print("warning: did not converge within the iteration cap; outputs were written", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
