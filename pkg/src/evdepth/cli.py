"""Command-line front end.

Subcommands: simulate, slice, encode, evaluate, align, dataset build,
dataset export, fusion run, bench. Human-readable summaries go to stdout;
``--json`` switches machine-readable output on. Exit codes are a stable
scripting contract: 0 success, 1 usage error, 2 data/contract error,
3 I/O error. EVDEPTH_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import resource
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import DEFAULT_CLAMP_MIN, ENCODER_DEFAULTS, FUSION_DEFAULTS, LOSS_DEFAULTS, max_threads
from .errors import DomainError, EvDepthError, ParameterError
from .events import EventSlice, read_events, slice_sbn, slice_sbt, write_events
from .fusion import (
    load_model_params,
    make_model_params,
    run_sequence,
    save_model_params,
    toy_extractor,
)
from .imgio import depth_valid_mask, load_depth, load_mask_pgm, read_pfm, save_depth_pfm
from .losses import lstsq_align
from .metrics import aggregate, evaluate, write_reports_csv, write_reports_json
from .pipeline import build_manifest, export_stacks, load_manifest, save_manifest
from .simulator import SimConfig, frames_from_dir, simulate
from .stacks import StackLayout, encode, save_stack_pfm, save_stack_ppm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3

_LAYOUTS = tuple(layout.value for layout in StackLayout)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _emit_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    frames = frames_from_dir(args.frames)
    stream = simulate(frames, SimConfig(args.contrast))
    write_events(stream, args.out, fmt=args.format)
    n_pos = int((stream.ps > 0).sum())
    if args.json:
        _emit_json(
            {
                "frames": len(frames),
                "n_events": len(stream),
                "n_positive": n_pos,
                "n_negative": len(stream) - n_pos,
                "out": str(args.out),
            }
        )
    else:
        print(
            f"simulated {len(stream)} events ({n_pos} positive, "
            f"{len(stream) - n_pos} negative) from {len(frames)} frames -> {args.out}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# slice / encode


def _make_slice(stream, args) -> EventSlice:
    if args.count is not None:
        return slice_sbn(stream, args.td_us, args.count)
    window = args.dt_us if args.dt_us is not None else ENCODER_DEFAULTS.window_us
    return slice_sbt(stream, args.td_us, window)


def cmd_slice(args) -> int:
    if args.dt_us is not None and args.count is not None:
        return _usage_error("--dt-us and --count are mutually exclusive")
    if args.dt_us is None and args.count is None:
        return _usage_error("slice needs --dt-us (SBT) or --count (SBN)")
    stream = read_events(args.events)
    sl = _make_slice(stream, args)
    write_events(sl.to_stream(), args.out, fmt=args.format)
    if args.json:
        _emit_json(
            {
                "n_events": len(sl),
                "t_start_us": sl.t_start_us,
                "t_end_us": sl.t_end_us,
                "out": str(args.out),
            }
        )
    else:
        print(f"{len(sl)} events in [{sl.t_start_us}, {sl.t_end_us}] us -> {args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    if args.dt_us is not None and args.count is not None:
        return _usage_error("--dt-us and --count are mutually exclusive")
    stream = read_events(args.events)
    sl = _make_slice(stream, args)
    if len(sl) == 0:
        print(f"warning: empty slice at t_d={args.td_us} us, writing all-zero stack", file=sys.stderr)
    stack = encode(sl, StackLayout(args.layout), bins=args.bins)
    out = Path(args.out)
    if out.suffix.lower() == ".ppm":
        written = [save_stack_ppm(stack, out)]
    elif out.suffix.lower() == ".pfm":
        written = save_stack_pfm(stack, out)
    else:
        return _usage_error(f"output must end in .pfm or .ppm, got {out.name!r}")
    if args.json:
        _emit_json(
            {
                "layout": args.layout,
                "n_events": len(sl),
                "t_start_us": sl.t_start_us,
                "t_end_us": sl.t_end_us,
                "files": [str(p) for p in written],
            }
        )
    else:
        print(f"encoded {len(sl)} events as {args.layout} -> {', '.join(str(p) for p in written)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# align / evaluate


def cmd_align(args) -> int:
    pred = load_depth(args.pred)
    target = load_depth(args.target)
    mask = depth_valid_mask(target)
    if args.mask:
        mask &= load_mask_pgm(args.mask)
    affine = lstsq_align(pred, target, mask)
    if args.json:
        _emit_json(
            {"scale": affine.scale, "shift": affine.shift, "degenerate": affine.degenerate}
        )
    else:
        print(f"s={affine.scale:.12g} t={affine.shift:.12g} degenerate={affine.degenerate}")
    return EXIT_OK


def _depth_files(directory: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.suffix.lower() in (".pfm", ".pgm") and p.is_file()
    }


def cmd_evaluate(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {pred_dir}")
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {gt_dir}")
    preds = _depth_files(pred_dir)
    gts = _depth_files(gt_dir)
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise ParameterError(
            "prediction/ground-truth sets differ; "
            f"missing gt for {only_pred or 'none'}, missing pred for {only_gt or 'none'}"
        )
    if not preds:
        raise ParameterError(f"no depth files under {pred_dir}")
    mask_dir = Path(args.mask_dir) if args.mask_dir else None
    clamp = (args.clamp_min, args.clamp_max)
    align = not args.no_align

    def one(stem: str):
        pred = load_depth(preds[stem])
        gt = load_depth(gts[stem])
        mask = depth_valid_mask(gt)
        if mask_dir is not None:
            mask_path = mask_dir / f"{stem}.pgm"
            if not mask_path.is_file():
                raise FileNotFoundError(f"missing mask for frame {stem!r}: {mask_path}")
            mask &= load_mask_pgm(mask_path)
        return stem, evaluate(pred, gt, mask, align=align, clamp=clamp)

    stems = sorted(preds)
    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        frames = list(pool.map(one, stems))
    agg = aggregate([r for _, r in frames], weights=args.agg)
    if args.json_out:
        write_reports_json(args.json_out, frames, agg)
    if args.csv_out:
        write_reports_csv(args.csv_out, frames, agg)
    if args.json:
        _emit_json(
            {
                "frames": [{"frame": name, **r.to_dict()} for name, r in frames],
                "aggregate": agg.to_dict(),
            }
        )
    else:
        header = f"{'frame':<20} abs_rel  sq_rel    rmse  rmse_log  si_log  d1     d2     d3"
        print(header)
        for name, r in frames:
            print(
                f"{name:<20} {r.abs_rel:7.4f} {r.sq_rel:7.4f} {r.rmse:7.4f}  "
                f"{r.rmse_log:7.4f} {r.si_log:7.4f} {r.delta1:6.4f} {r.delta2:6.4f} {r.delta3:6.4f}"
            )
        print(
            f"{'aggregate':<20} {agg.abs_rel:7.4f} {agg.sq_rel:7.4f} {agg.rmse:7.4f}  "
            f"{agg.rmse_log:7.4f} {agg.si_log:7.4f} {agg.delta1:6.4f} {agg.delta2:6.4f} {agg.delta3:6.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# dataset build / export


def cmd_dataset_build(args) -> int:
    if args.mode == "sbn" and args.count is None:
        return _usage_error("--mode sbn needs --count")
    manifest = build_manifest(
        args.events,
        args.frames,
        args.proxy,
        window_us=args.dt_us,
        mode=args.mode,
        count=args.count,
        layout=args.layout,
        bins=args.bins,
        gt_dir=args.gt,
        mask_dir=args.mask,
        teacher=args.teacher,
        lam=args.lam,
        k_scales=args.k_scales,
        drop_empty=args.drop_empty,
    )
    save_manifest(manifest, args.out)
    n_empty = sum(r.empty_slice for r in manifest.records)
    if args.json:
        _emit_json(
            {"records": len(manifest.records), "empty_slices": n_empty, "out": str(args.out)}
        )
    else:
        print(
            f"manifest with {len(manifest.records)} records "
            f"({n_empty} empty slices) -> {args.out}"
        )
    return EXIT_OK


def cmd_dataset_export(args) -> int:
    manifest = load_manifest(args.manifest)
    written = export_stacks(manifest, args.out, fmt=args.format)
    if args.json:
        _emit_json({"files": [str(p) for p in written]})
    else:
        print(f"exported {len(written)} {manifest.encoder.layout} stacks -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fusion run


def cmd_fusion_run(args) -> int:
    stacks_dir = Path(args.stacks)
    if not stacks_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {stacks_dir}")
    stack_paths = sorted(p for p in stacks_dir.iterdir() if p.suffix.lower() == ".pfm")
    if not stack_paths:
        raise ParameterError(f"no .pfm stacks under {stacks_dir}")
    arrays = []
    for p in stack_paths:
        arr = read_pfm(p)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arrays.append(arr)
    if args.params:
        params = load_model_params(args.params)
    else:
        params = make_model_params(seed=args.seed)
    if args.params_out:
        save_model_params(params, args.params_out)
    depths = run_sequence(
        arrays,
        lambda a: toy_extractor(a, seed=args.seed, scales=params.scales, channels=params.channels),
        params,
        unroll=args.unroll,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for p, depth in zip(stack_paths, depths):
        out_path = out_dir / f"{p.stem}.depth.pfm"
        save_depth_pfm(out_path, depth)
        written.append(out_path)
    if args.json:
        _emit_json({"steps": len(written), "seed": args.seed, "files": [str(p) for p in written]})
    else:
        print(f"ran {len(written)} steps (seed {args.seed}, unroll {args.unroll}) -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _full_stream_slice(stream) -> EventSlice:
    if len(stream) == 0:
        raise DomainError("cannot bench an empty stream")
    t0, t1 = int(stream.ts[0]), int(stream.ts[-1])
    if t1 <= t0:
        raise DomainError("cannot bench a zero-duration stream")
    return EventSlice(
        stream.width, stream.height, stream.xs, stream.ys, stream.ps, stream.ts, t0, t1
    )


def cmd_bench(args) -> int:
    layouts = _LAYOUTS if args.layouts == "all" else tuple(args.layouts.split(","))
    for layout in layouts:
        if layout not in _LAYOUTS:
            return _usage_error(f"unknown layout {layout!r}; choose from {', '.join(_LAYOUTS)}")
    if args.repetitions < 1:
        return _usage_error("--repetitions must be >= 1")
    stream = read_events(args.events)
    sl = _full_stream_slice(stream)
    results = {}
    for layout in layouts:
        times = []
        digest = None
        for _ in range(args.repetitions):
            start = time.perf_counter()
            stack = encode(sl, StackLayout(layout), bins=args.bins)
            elapsed = time.perf_counter() - start
            times.append(elapsed)
            h = hashlib.sha256(stack.values.tobytes()).hexdigest()[:16]
            if digest is None:
                digest = h
            elif digest != h:
                raise EvDepthError(f"{layout}: nondeterministic encode (hash {h} != {digest})")
        median = statistics.median(times)
        results[layout] = {
            "times_s": times,
            "median_s": median,
            "events_per_s": len(stream) / median,
            "hash": digest,
        }
    peak_rss_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    payload = {
        "n_events": len(stream),
        "repetitions": args.repetitions,
        "layouts": results,
        "peak_rss_kb": peak_rss_kb,
    }
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.json:
        _emit_json(payload)
    else:
        print(f"bench over {len(stream)} events, {args.repetitions} repetition(s):")
        for layout, r in results.items():
            print(
                f"  {layout:<10} median {r['median_s']:.3f} s   "
                f"{r['events_per_s']:,.0f} events/s   hash {r['hash']}"
            )
        print(f"  peak RSS ~ {peak_rss_kb / 1024:.0f} MiB")
    if args.baseline:
        with open(args.baseline, "r", encoding="ascii") as fh:
            baseline = json.load(fh)
        for layout, r in results.items():
            base = baseline.get("layouts", {}).get(layout, {}).get("events_per_s")
            if base is None:
                print(f"baseline: no entry for {layout}", file=sys.stderr)
                continue
            ratio = r["events_per_s"] / base
            if ratio < 1.0 - args.tolerance:
                print(
                    f"REGRESSION {layout}: {r['events_per_s']:,.0f} events/s vs "
                    f"baseline {base:,.0f} ({ratio:.2f}x)",
                    file=sys.stderr,
                )
            elif ratio > 1.0 + args.tolerance:
                print(f"improvement {layout}: {ratio:.2f}x baseline", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evdepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="frames directory -> event file")
    p.add_argument("--frames", required=True, help="directory of 8-bit PGM frames")
    p.add_argument("--contrast", required=True, type=float, help="log-intensity threshold C")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "evb"), default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    for name, func in (("slice", cmd_slice), ("encode", cmd_encode)):
        p = sub.add_parser(name, help=f"{name} an event stream")
        p.add_argument("--events", required=True)
        p.add_argument("--td-us", required=True, type=int, help="reference timestamp (us)")
        p.add_argument("--dt-us", type=int, default=None, help="SBT window (us)")
        p.add_argument("--count", type=int, default=None, help="SBN event count")
        p.add_argument("--out", required=True)
        p.add_argument("--json", action="store_true")
        if name == "slice":
            p.add_argument("--format", choices=("csv", "evb"), default=None)
        else:
            p.add_argument("--layout", choices=_LAYOUTS, default=StackLayout.TENCODE.value)
            p.add_argument("--bins", type=int, default=ENCODER_DEFAULTS.voxel_bins)
        p.set_defaults(func=func)

    p = sub.add_parser("align", help="least-squares scale/shift of pred onto target")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("evaluate", help="depth metrics over paired directories")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--mask-dir", default=None)
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--clamp-min", type=float, default=DEFAULT_CLAMP_MIN)
    p.add_argument("--clamp-max", type=float, default=float("inf"))
    p.add_argument("--agg", choices=("uniform", "per-pixel"), default="uniform")
    p.add_argument("--json-out", default=None)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dataset", help="distillation dataset tools")
    dsub = p.add_subparsers(dest="dataset_command", parser_class=_Parser)

    b = dsub.add_parser("build", help="build a dataset manifest")
    b.add_argument("--events", required=True)
    b.add_argument("--frames", required=True)
    b.add_argument("--proxy", required=True)
    b.add_argument("--gt", default=None)
    b.add_argument("--mask", default=None)
    b.add_argument("--dt-us", type=int, default=ENCODER_DEFAULTS.window_us)
    b.add_argument("--mode", choices=("sbt", "sbn"), default="sbt")
    b.add_argument("--count", type=int, default=None)
    b.add_argument("--layout", choices=_LAYOUTS, default=StackLayout.TENCODE.value)
    b.add_argument("--bins", type=int, default=None)
    b.add_argument("--teacher", default="unspecified")
    b.add_argument("--lam", type=float, default=LOSS_DEFAULTS.lam)
    b.add_argument("--k-scales", type=int, default=LOSS_DEFAULTS.k_scales)
    b.add_argument("--drop-empty", action="store_true")
    b.add_argument("--out", required=True)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_dataset_build)

    e = dsub.add_parser("export", help="encode every manifest record to disk")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("pfm", "ppm"), default="pfm")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_dataset_export)

    p = sub.add_parser("fusion", help="recurrent fusion tools")
    fsub = p.add_subparsers(dest="fusion_command", parser_class=_Parser)
    r = fsub.add_parser("run", help="run the recurrent model over a stack sequence")
    r.add_argument("--stacks", required=True, help="directory of PFM stacks")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=FUSION_DEFAULTS.seed)
    r.add_argument("--unroll", type=int, default=FUSION_DEFAULTS.unroll)
    r.add_argument("--params", default=None, help="load parameters (.bin archive)")
    r.add_argument("--params-out", default=None, help="save parameters (.bin archive)")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_fusion_run)

    p = sub.add_parser("bench", help="encoder throughput report")
    p.add_argument("--events", required=True)
    p.add_argument("--layouts", default="all", help="comma-separated, or 'all'")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--bins", type=int, default=ENCODER_DEFAULTS.voxel_bins)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--baseline", default=None, help="JSON report to compare against")
    p.add_argument("--tolerance", type=float, default=0.2)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except EvDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
