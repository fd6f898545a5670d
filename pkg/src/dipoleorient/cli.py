"""Command-line interface: ``dipoleorient {orient,interpolate,eval,synth}``.

Exit codes: 0 success, 1 input error (bad flag, unreadable file), 2 internal
invariant violation.
"""

import argparse
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .cloud import InvariantError, PointCloud
from .evaluation import SHAPES, EvalReport, SyntheticShape, accuracy, generate, scramble_signs
from .geometry import SpatialIndex, estimate_normals_pca
from .io import (
    CloudFormatError,
    parse_cloud,
    read_confidence_file,
    write_cloud,
    write_report,
    write_trace_tsv,
    write_xyz,
)
from .patching import MIN_PATCH_SIZE, PLANARITY_THRESHOLD, VOXEL_WIDTH, ConfidenceProvider
from .pipeline import OrientParams, orient
from .propagation import interpolate_orientation

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INVARIANT = 2

AXES = {"x": 0, "y": 1, "z": 2}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which is reserved here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_flip_to(text: str):
    """``"12:+x"`` -> ``(12, array([1, 0, 0]))``."""
    try:
        idx, axis = text.split(":")
        idx = int(idx)
        axis = axis.strip().replace("−", "-")
        sign = -1.0 if axis.startswith("-") else 1.0
        axis = axis.lstrip("+-")
        d = np.zeros(3)
        d[AXES[axis]] = sign
    except (ValueError, KeyError):
        raise argparse.ArgumentTypeError(
            f"expected <index>:<+x|-x|+y|-y|+z|-z>, got {text!r}") from None
    if idx < 0:
        raise argparse.ArgumentTypeError("flip-to index must be non-negative")
    return idx, d


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_pipeline_flags(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--voxel-width", type=float, default=VOXEL_WIDTH,
                   help="voxel edge in unit-cube coordinates (default 1/25)")
    g.add_argument("--min-patch", type=int, default=MIN_PATCH_SIZE,
                   help="smallest patch before merging (default %(default)s)")
    g.add_argument("--planar-thresh", type=float, default=PLANARITY_THRESHOLD,
                   help="planarity eigenvalue ratio (default %(default)s)")
    g.add_argument("--knn", type=_positive_int, default=16,
                   help="neighbors for normal estimation (default %(default)s)")
    g.add_argument("--diffusion-passes", type=int, default=1,
                   help="point-level correction passes (default %(default)s)")
    g.add_argument("--subsample-above", type=int, default=500_000,
                   help="orient a subsample when N exceeds this (default %(default)s)")
    g.add_argument("--subsample-fraction", type=float, default=0.1,
                   help="per-patch subsample fraction (default %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    g.add_argument("--confidence", default="uniform",
                   help="uniform | consistency | file:<path> (default uniform)")
    g.add_argument("--flip-to", type=parse_flip_to, default=None, metavar="INDEX:DIR",
                   help="negate the result globally unless point INDEX faces DIR")
    g.add_argument("--threads", type=_positive_int, default=None,
                   help="cap on worker threads for field sums")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dipoleorient",
                     description="Global normal orientation with dipole propagation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("orient", help="orient the normals of a point cloud")
    p.add_argument("input", help="XYZ or PLY cloud ('-' for stdin)")
    p.add_argument("-o", "--output", default="-", help="output PLY/XYZ ('-' for stdout)")
    _add_pipeline_flags(p)
    p.add_argument("--report", help="write a JSON run report here")
    p.add_argument("--trace", help="write the patch visit order as TSV here")
    p.add_argument("--figures", help="write diagnostic PNGs into this directory")
    p.add_argument("--truth", help="ground-truth cloud for scoring")
    p.add_argument("--colorize", action="store_true",
                   help="color output points by orientation error (needs --truth)")
    p.add_argument("--ascii", action="store_true", help="write ASCII instead of binary PLY")

    p = sub.add_parser("interpolate", help="orient new points from given oriented points")
    p.add_argument("given", help="cloud with oriented normals")
    p.add_argument("new", help="cloud to orient; normals estimated when absent")
    p.add_argument("-o", "--output", default="-", help="oriented new points ('-' for stdout)")
    p.add_argument("--knn", type=_positive_int, default=16,
                   help="neighbors for normal estimation (default %(default)s)")
    p.add_argument("--confidence", default="uniform",
                   help="uniform | file:<path> weights of the given points")
    p.add_argument("--recorrect", action="store_true",
                   help="also re-check the given normals against the full field")
    p.add_argument("--given-output", help="write the (re-corrected) given cloud here")
    p.add_argument("--report", help="write a JSON run report here")
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--ascii", action="store_true")

    p = sub.add_parser("eval", help="score an oriented cloud against ground truth")
    p.add_argument("estimate")
    p.add_argument("truth")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--figures", help="write an error map PNG into this directory")

    p = sub.add_parser("synth", help="sample a synthetic shape with exact normals")
    p.add_argument("--shape", choices=SHAPES, default="sphere")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--noise", type=float, default=0.0,
                   help="sigma as a fraction of the bounding-box diagonal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scramble", action="store_true",
                   help="negate each normal with probability 1/2")
    p.add_argument("--no-normals", action="store_true", help="write positions only (XYZ)")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--ascii", action="store_true")
    return parser


# --------------------------------------------------------------------------
# stdin/stdout plumbing
# --------------------------------------------------------------------------

def _read(path: str) -> PointCloud:
    if path != "-":
        if not Path(path).exists():
            raise FileNotFoundError(f"no such file: {path}")
        if Path(path).is_file():
            return parse_cloud(path)
        data = Path(path).read_bytes()  # fifo, e.g. shell process substitution
    else:
        data = sys.stdin.buffer.read()
    suffix = ".ply" if data.startswith(b"ply") else ".xyz"
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d) / f"stdin{suffix}"
        tmp.write_bytes(data)
        return parse_cloud(tmp)


def _write(cloud: PointCloud, path: str, colorize=None, binary=True):
    if path != "-":
        if str(path).lower().endswith(".xyz"):
            write_xyz(cloud, path)
        else:
            write_cloud(cloud, path, colorize=colorize, binary=binary)
        return
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d) / "out.ply"
        write_cloud(cloud, tmp, colorize=colorize, binary=binary)
        with open(tmp, "rb") as f:
            shutil.copyfileobj(f, sys.stdout.buffer)
        sys.stdout.buffer.flush()


def _confidence(text: str, n: int) -> ConfidenceProvider:
    if text.startswith("file:"):
        return ConfidenceProvider("file", values=read_confidence_file(text[5:], n))
    if text not in ("uniform", "consistency"):
        raise UsageError(f"unknown confidence strategy {text!r}")
    return ConfidenceProvider(text)


def _set_threads(n):
    if n is not None:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _say(msg):
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_orient(args) -> int:
    _set_threads(args.threads)
    cloud = _read(args.input)
    truth = _read(args.truth) if args.truth else None
    if args.colorize and truth is None:
        raise UsageError("--colorize needs --truth")
    if truth is not None and len(truth) != len(cloud):
        raise UsageError(f"truth has {len(truth)} points, input has {len(cloud)}")
    if args.flip_to is not None and args.flip_to[0] >= len(cloud):
        raise UsageError(f"flip-to index {args.flip_to[0]} out of range")
    params = OrientParams(
        voxel_width=args.voxel_width, min_patch=args.min_patch,
        planar_thresh=args.planar_thresh, knn=args.knn,
        diffusion_passes=args.diffusion_passes, subsample_above=args.subsample_above,
        subsample_fraction=args.subsample_fraction, seed=args.seed,
        confidence=_confidence(args.confidence, len(cloud)), flip_to=args.flip_to,
    )
    result = orient(cloud, params)
    if truth is not None:
        acc = result.report.score(result.cloud, truth)
        _say(f"accuracy {acc.percent:.3f}% ({acc.correct}/{acc.total}, sign {acc.sign:+d})")
    _write(result.cloud, args.output, colorize=truth if args.colorize else None,
           binary=not args.ascii)
    if args.report:
        write_report(result.report, args.report)
    if args.trace:
        write_trace_tsv(result.trace, args.trace)
    if args.figures:
        from .figures import write_figures

        write_figures(args.figures, result.trace, result.cloud, truth)
    return EXIT_OK


def cmd_interpolate(args) -> int:
    _set_threads(args.threads)
    t0 = time.perf_counter()
    given = _read(args.given)
    if given.normals is None:
        raise UsageError("the given cloud has no normals")
    if args.confidence != "uniform":
        provider = _confidence(args.confidence, len(given))
        if provider.strategy != "file":
            raise UsageError("interpolate supports uniform or file:<path> confidence")
        given.confidence = np.clip(provider.values, 0.0, 1.0)
    new = _read(args.new)
    normals = new.normals
    if normals is None:
        both = PointCloud(np.vstack([given.positions, new.positions]),
                          np.vstack([given.normals, np.zeros((len(new), 3))]))
        both.normal_given[len(given):] = False
        if len(both) <= args.knn:
            raise UsageError(f"need more than {args.knn} points to estimate normals")
        only = ~both.normal_given
        both, _ = estimate_normals_pca(both, SpatialIndex(both.positions), args.knn, only=only)
        normals = both.normals[len(given):]
    res = interpolate_orientation(given, new.positions, normals, recorrect=args.recorrect)
    out = PointCloud(new.positions, res.normals)
    _write(out, args.output, binary=not args.ascii)
    if args.given_output:
        g = given.copy()
        g.normals = res.given_normals
        _write(g, args.given_output, binary=not args.ascii)
    _say(f"oriented {len(out)} points, {int(res.flipped.sum())} flipped, "
         f"{res.low_confidence} undecided")
    if args.report:
        report = EvalReport(
            parameters={"recorrect": args.recorrect, "knn": args.knn,
                        "confidence": args.confidence},
            point_count=len(out),
            flips_in_diffusion=int(res.given_flipped.sum()),
            clamped_pairs=res.clamped_pairs,
            low_confidence_points=res.low_confidence,
            wall_times={"interpolation": time.perf_counter() - t0},
        )
        write_report(report, args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    est = _read(args.estimate)
    truth = _read(args.truth)
    if est.normals is None or truth.normals is None:
        raise UsageError("both clouds need normals")
    acc = accuracy(est, truth)
    print(f"accuracy\t{acc.percent:.6f}\ncorrect\t{acc.correct}\ntotal\t{acc.total}\n"
          f"global_sign\t{acc.sign:+d}")
    if args.report:
        write_report(EvalReport(accuracy=acc.percent, global_sign=acc.sign,
                                point_count=acc.total), args.report)
    if args.figures:
        from .figures import write_figures

        write_figures(args.figures, cloud=est, truth=truth)
    return EXIT_OK


def cmd_synth(args) -> int:
    cloud = generate(SyntheticShape(args.shape, args.n, args.noise, args.seed))
    if args.scramble:
        cloud = scramble_signs(cloud, args.seed)
    if args.no_normals:
        cloud = PointCloud(cloud.positions)
        if args.output == "-":
            np.savetxt(sys.stdout.buffer, cloud.positions, fmt="%.17g")
        else:
            write_xyz(cloud, args.output)
        return EXIT_OK
    _write(cloud, args.output, binary=not args.ascii)
    return EXIT_OK


COMMANDS = {"orient": cmd_orient, "interpolate": cmd_interpolate,
            "eval": cmd_eval, "synth": cmd_synth}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        _say(f"error: {e}")
        return EXIT_INPUT
    except InvariantError as e:
        _say(f"internal error: {e}")
        return EXIT_INVARIANT
    except (CloudFormatError, FileNotFoundError, ValueError, OSError) as e:
        _say(f"error: {e}")
        return EXIT_INPUT


def main():
    sys.exit(run())
