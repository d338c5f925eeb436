"""Command-line entry points.

    pxattack run --config cfg.json
    pxattack area-analysis --config cfg.json --alphas -1000,-10,10,1000
    pxattack segment --image img.png --n 64 --alpha 10 --out seg.rtf
    pxattack metrics --image img.png --seg seg.rtf
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .harness import area_analysis, emit_report, load_config, run_experiment
from .image import load_png, srgb_to_lab
from .superpixel import compactness, icv, load_segment_map, save_segment_map, slic


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    if args.jobs:
        config.jobs = args.jobs
    report = run_experiment(config)
    paths = emit_report(report, config.output_dir)
    final = report.success_rate_at(config.max_iters)
    print(f"attacked {len(report.results)} images; success rate {final:.2f}%")
    print(f"reports written to {paths['summary'].parent}")
    return 0


def _cmd_area_analysis(args) -> int:
    config = load_config(args.config)
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    connectivity = {
        "both": [True, False],
        "on": [True],
        "off": [False],
    }[args.connectivity]
    rows = area_analysis(config, alphas, connectivity)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "area_analysis.csv"
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "connectivity", "icv", "co", "success_rate_percent"])
        for row in rows:
            writer.writerow(
                [row["alpha"], "true" if row["connectivity"] else "false",
                 repr(row["icv"]), repr(row["co"]), repr(row["success_rate_percent"])]
            )
    for row in rows:
        print(
            f"alpha={row['alpha']:>8} connected={str(row['connectivity']):<5} "
            f"ICV={row['icv']:.4f} CO={row['co']:.4f} "
            f"success={row['success_rate_percent']:.2f}%"
        )
    print(f"table written to {out_path}")
    return 0


def _cmd_segment(args) -> int:
    img = load_png(args.image)
    labels = slic(
        img,
        args.n,
        alpha=args.alpha,
        enforce=not args.disconnected,
        kmeans_iters=args.kmeans_iters,
    )
    save_segment_map(labels, args.out)
    print(f"{int(labels.max()) + 1} segments written to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    img = load_png(args.image)
    labels = load_segment_map(args.seg)
    if labels.shape != img.shape[:2]:
        print(
            f"error: segment map {labels.shape} does not match image {img.shape[:2]}",
            file=sys.stderr,
        )
        return 1
    result = {
        "icv": icv(srgb_to_lab(img), labels),
        "co": compactness(labels),
        "segments": int(labels.max()) + 1,
    }
    print(json.dumps(result))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pxattack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an attack experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--output-dir", help="override the config's output directory")
    run.add_argument("--jobs", type=int, help="attack this many images in parallel")
    run.set_defaults(func=_cmd_run)

    area = sub.add_parser("area-analysis", help="ICV/CO vs success rate per alpha")
    area.add_argument("--config", required=True)
    area.add_argument("--alphas", required=True, help="comma-separated alpha values")
    area.add_argument("--connectivity", choices=["both", "on", "off"], default="both")
    area.add_argument("--output-dir")
    area.set_defaults(func=_cmd_area_analysis)

    seg = sub.add_parser("segment", help="superpixel-segment a PNG into an rtf map")
    seg.add_argument("--image", required=True)
    seg.add_argument("--n", type=int, required=True, help="maximum segment count")
    seg.add_argument("--alpha", type=float, default=10.0)
    seg.add_argument("--kmeans-iters", type=int, default=10)
    seg.add_argument("--disconnected", action="store_true",
                     help="skip connectivity enforcement")
    seg.add_argument("--out", required=True)
    seg.set_defaults(func=_cmd_segment)

    met = sub.add_parser("metrics", help="ICV and compactness of a segment map")
    met.add_argument("--image", required=True)
    met.add_argument("--seg", required=True)
    met.set_defaults(func=_cmd_metrics)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
