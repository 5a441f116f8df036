"""Command-line interface.

Subcommands cover the full pipeline: ``phantom`` -> ``project`` ->
``reconstruct`` -> ``bin`` -> ``segment`` -> ``eval``, plus ``sweep`` (grid
search over segmentation parameters) and ``composite`` (PPM emission).

Every command writes a resolved-config JSON next to its primary output
(``<output>.config.json``) recording the exact parameters that produced it.

Exit codes: 0 success, 2 validation or usage error, 3 I/O error
(unreadable, malformed, or truncated files), 4 internal error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .binning import adaptive_rebin, clip_spectrum, uniform_rebin
from .fams import FamsParams, segment_fams
from .graphcut import GraphCutParams, Neighborhood, segment_fh
from .metrics import MetricsReport, dice_multilabel, homogeneity_score, mask_background
from .model import (
    FormatError,
    load_labels,
    load_volume,
    rgb_composite,
    save_labels,
    save_volume,
    write_ppm,
)
from .synth import (
    EnergyAxis,
    PhantomSpec,
    add_poisson_noise,
    art_tv_reconstruct,
    default_phantom,
    forward_project,
    generate_phantom,
    load_sinogram,
    save_sinogram,
)

_NBR = {
    "n7": Neighborhood.N7,
    "n27": Neighborhood.N27,
    "n27w": Neighborhood.N27W,
}


def _parse_floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_ints(text: str, n: int, what: str) -> tuple[int, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated values, got {text!r}")
    return tuple(int(p) for p in parts)


def _write_config(out_path: str, command: str, params: dict) -> None:
    body = {"command": command, "version": __version__, "params": params}
    with open(f"{out_path}.config.json", "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _args_record(args: argparse.Namespace) -> dict:
    rec = {k: v for k, v in vars(args).items() if k != "func"}
    return rec


# ---------------------------------------------------------------------------
# commands


def _cmd_bin(args: argparse.Namespace) -> int:
    vol = load_volume(args.input)
    if args.clip is not None:
        lo, hi = _parse_floats(args.clip, 2, "--clip")
        vol = clip_spectrum(vol, lo, hi)
    if args.mode == "uniform":
        out = uniform_rebin(vol, args.bins)
    else:
        out, plan = adaptive_rebin(vol, args.bins)
        with open(f"{args.output}.plan.json", "w") as fh:
            fh.write(plan.to_json() + "\n")
    save_volume(args.output, out)
    _write_config(args.output, "bin", _args_record(args))
    print(f"wrote {args.output} ({out.n_channels} channels)")
    return 0


def _gc_params(args: argparse.Namespace) -> GraphCutParams:
    return GraphCutParams(
        k=args.k,
        min_size=args.min_size,
        neighborhood=_NBR[args.nbr],
        sigma=args.sigma,
    )


def _fams_params(args: argparse.Namespace) -> FamsParams:
    return FamsParams(
        k_neigh=args.k_neigh,
        lsh_cuts=args.lsh_cuts,
        lsh_partitions=args.lsh_partitions,
        quant_bits=args.quant_bits,
        max_iters=args.max_iters,
        epsilon=args.epsilon,
        mode_merge_radius=args.merge_radius,
        use_lsh=not args.no_lsh,
        seed=args.seed,
    )


def _cmd_segment(args: argparse.Namespace) -> int:
    vol = load_volume(args.input)
    if args.algo == "gc":
        seg = segment_fh(vol, _gc_params(args))
    else:
        seg = segment_fams(vol, _fams_params(args), use_gradient=not args.signatures)
    save_labels(args.output, seg.labels)
    record = _args_record(args)
    record["resolved"] = seg.params
    record["source_digest"] = seg.source_digest
    _write_config(args.output, "segment", record)
    n_seg = int(seg.labels.segment_ids().size)
    print(f"wrote {args.output} ({n_seg} segments)")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = load_labels(args.pred)
    truth = load_labels(args.truth)
    if not args.no_mask_background:
        pred = mask_background(pred, truth)
    report = MetricsReport(dice=dice_multilabel(truth, pred))
    if args.volume is not None:
        vol = load_volume(args.volume)
        report.homogeneity = homogeneity_score(vol, pred)
    with open(args.output, "w") as fh:
        fh.write(report.to_json() + "\n")
    if args.csv is not None:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    _write_config(args.output, "eval", _args_record(args))
    print(f"dice_overall={report.dice.overall:.4f}")
    return 0


def _cmd_phantom(args: argparse.Namespace) -> int:
    if args.spec is not None:
        with open(args.spec) as fh:
            spec = PhantomSpec.from_json(fh.read())
    else:
        spec = default_phantom()
    lo, hi, n = _parse_floats(args.energies, 3, "--energies")
    energy = EnergyAxis(np.linspace(lo, hi, int(n)))
    vol, labels = generate_phantom(spec, energy)
    save_volume(args.output, vol)
    if args.labels is not None:
        save_labels(args.labels, labels)
    _write_config(args.output, "phantom", _args_record(args))
    print(f"wrote {args.output} ({vol.n_channels} channels, dims {vol.dims})")
    return 0


def _cmd_project(args: argparse.Namespace) -> int:
    vol = load_volume(args.input)
    sino = forward_project(vol, args.angles, args.detectors)
    if args.noise_n0 is not None:
        sino = add_poisson_noise(sino, args.noise_n0, args.seed)
    save_sinogram(args.output, sino)
    _write_config(args.output, "project", _args_record(args))
    print(f"wrote {args.output} ({sino.n_angles} angles x {sino.n_detectors} detectors)")
    return 0


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    sino = load_sinogram(args.input)
    nx, ny = _parse_ints(args.size, 2, "--size")
    sx, sy = _parse_floats(args.voxel_size, 2, "--voxel-size")
    vol = art_tv_reconstruct(
        sino,
        (nx, ny),
        iters=args.iters,
        tv_weight=args.tv_weight,
        tv_steps=args.tv_steps,
        voxel_size=(sx, sy),
    )
    save_volume(args.output, vol)
    _write_config(args.output, "reconstruct", _args_record(args))
    print(f"wrote {args.output} ({nx}x{ny}, {vol.n_channels} channels)")
    return 0


def _cmd_composite(args: argparse.Namespace) -> int:
    vol = load_volume(args.input)
    r, g, b = _parse_ints(args.channels, 3, "--channels")
    stack = rgb_composite(vol, (r, g, b))
    if not 0 <= args.slice < stack.shape[0]:
        raise ValueError(f"slice {args.slice} out of range")
    write_ppm(args.output, stack[args.slice])
    _write_config(args.output, "composite", _args_record(args))
    print(f"wrote {args.output}")
    return 0


def _parse_grid(text: str, algo: str) -> list[dict]:
    """Parse 'a=1,2;b=3' into the list of parameter combinations."""
    valid = {f.name for f in fields(GraphCutParams if algo == "gc" else FamsParams)}
    axes: list[tuple[str, list]] = []
    for clause in text.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        name, _, values = clause.partition("=")
        name = name.strip()
        if name not in valid:
            raise ValueError(f"unknown {algo} parameter {name!r} in grid")
        parsed = []
        for raw in values.split(","):
            raw = raw.strip()
            if algo == "gc" and name == "neighborhood":
                parsed.append(_NBR[raw])
            else:
                num = float(raw)
                parsed.append(int(num) if num == int(num) and "." not in raw else num)
        axes.append((name, parsed))
    if not axes:
        raise ValueError("empty parameter grid")
    names = [a[0] for a in axes]
    combos = []
    for values in itertools.product(*(a[1] for a in axes)):
        combos.append(dict(zip(names, values)))
    return combos


def _cmd_sweep(args: argparse.Namespace) -> int:
    vol = load_volume(args.input)
    truth = load_labels(args.truth) if args.truth is not None else None
    combos = _parse_grid(args.grid, args.algo)
    rows = []
    for combo in combos:
        if args.algo == "gc":
            seg = segment_fh(vol, GraphCutParams(**combo))
        else:
            base = {"seed": args.seed}
            base.update(combo)
            seg = segment_fams(vol, FamsParams(**base))
        if truth is not None:
            pred = mask_background(seg.labels, truth)
            score = dice_multilabel(truth, pred).overall
        else:
            score = homogeneity_score(vol, seg.labels)
        rows.append((combo, score))
    # dice: higher is better; homogeneity: lower is better
    rows.sort(key=lambda r: (-r[1] if truth is not None else r[1]))
    metric = "dice_overall" if truth is not None else "homogeneity"
    names = sorted({k for combo, _ in rows for k in combo})
    lines = ["rank," + ",".join(names) + f",{metric}"]
    for rank, (combo, score) in enumerate(rows, start=1):
        cells = [str(rank)]
        for n in names:
            val = combo.get(n, "")
            cells.append(val.value if isinstance(val, Neighborhood) else str(val))
        cells.append(str(score))
        lines.append(",".join(cells))
    with open(args.output, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_config(args.output, "sweep", _args_record(args))
    print(f"wrote {args.output} ({len(rows)} combinations, ranked by {metric})")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mectseg",
        description="Multi-energy CT segmentation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"mectseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bin", help="clip and rebin the energy axis")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=["uniform", "adaptive"], required=True)
    p.add_argument("--bins", type=int, required=True)
    p.add_argument("--clip", help="LO,HI keV; applied before rebinning")
    p.set_defaults(func=_cmd_bin)

    p = sub.add_parser("segment", help="segment a spectral volume")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--algo", choices=["gc", "fams"], required=True)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_argument_group("graph merge (gc)")
    g.add_argument("--k", type=float, default=3.0)
    g.add_argument("--min-size", type=int, default=625)
    g.add_argument("--nbr", choices=sorted(_NBR), default="n27")
    g.add_argument("--sigma", type=float, default=1.0)
    f = p.add_argument_group("mean shift (fams)")
    f.add_argument("--k-neigh", type=int, default=220)
    f.add_argument("--lsh-cuts", type=int, default=24)
    f.add_argument("--lsh-partitions", type=int, default=35)
    f.add_argument("--quant-bits", type=int, default=16)
    f.add_argument("--max-iters", type=int, default=100)
    f.add_argument("--epsilon", type=float, default=1e-3)
    f.add_argument("--merge-radius", type=float, default=None)
    f.add_argument("--no-lsh", action="store_true", help="exact neighbor search")
    f.add_argument(
        "--signatures",
        action="store_true",
        help="cluster raw spectra instead of spectral gradients",
    )
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="score a predicted labeling against truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("-o", "--output", required=True, help="metrics JSON path")
    p.add_argument("--csv", help="also write metrics as CSV")
    p.add_argument("--volume", help="spectral volume for the homogeneity score")
    p.add_argument(
        "--no-mask-background",
        action="store_true",
        help="keep predicted segments that cover true background",
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("phantom", help="voxelize a synthetic phantom")
    p.add_argument("-s", "--spec", help="phantom JSON (default: built-in 4-disk)")
    p.add_argument("-o", "--output", required=True, help="volume output (.msv)")
    p.add_argument("--labels", help="ground-truth labels output (.msl)")
    p.add_argument("--energies", default="30,130,16", help="LO,HI,N bin centers in keV")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("project", help="forward-project a single-slice volume")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="sinogram output (.mss)")
    p.add_argument("--angles", type=int, required=True)
    p.add_argument("--detectors", type=int, default=256)
    p.add_argument("--noise-n0", type=float, help="photon flux for Poisson noise")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("reconstruct", help="iterative reconstruction from a sinogram")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="volume output (.msv)")
    p.add_argument("--size", required=True, help="NX,NY output grid")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--tv-weight", type=float, default=1e-3)
    p.add_argument("--tv-steps", type=int, default=5)
    p.add_argument("--voxel-size", default="1,1", help="SX,SY in mm")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("sweep", help="grid-search segmentation parameters")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="ranked CSV output")
    p.add_argument("--algo", choices=["gc", "fams"], required=True)
    p.add_argument("--grid", required=True, help="e.g. 'k=1,3,10;min_size=100,625'")
    p.add_argument("--truth", help="rank by dice against these labels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("composite", help="emit an RGB channel composite as PPM")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--channels", required=True, help="R,G,B channel indices")
    p.add_argument("--slice", type=int, default=0)
    p.set_defaults(func=_cmd_composite)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
