"""``enhance`` command line entry point.

Exit codes: 0 success, 1 no solution / runtime failure, 2 config or usage
error, 3 empty run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import consensus
from .errors import ConfigError, DecodeError, DegenerateInput, EmptyRun, EnhanceError, NoSolution, ShapeMismatch
from .imageio import decode_image, luminance, write_image
from .pipeline import SIDECAR_SUFFIX, RunConfig, format_report, run_combine
from .rankcore import kendall_tau, kendall_tau_sampled
from .register import SolveParams, StarList, build_index, detect_stars, solve, write_sidecar
from .report import write_report
from .synth import SynthRecipe, make_sky, observe_frame

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2, 3

log = logging.getLogger("enhance")


def cmd_synth(args) -> int:
    try:
        recipe = SynthRecipe.from_text(Path(args.spec).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth, catalog = make_sky(recipe.scene)
    write_image(out / "truth.png", truth, bits=16)
    np.save(out / "truth.npy", truth)
    catalog.write(out / "catalog.txt")
    (out / "recipe.txt").write_text(recipe.to_text())

    names = []
    for i, spec in enumerate(recipe.observation_specs()):
        frame, to_canvas = observe_frame(truth, spec)
        name = f"obs_{i:04d}.png"
        write_image(out / name, frame)
        write_sidecar(to_canvas, out / (name + SIDECAR_SUFFIX))
        names.append(name)

    c = recipe.scene.canvas
    lines = [
        f"width={c.width}",
        f"height={c.height}",
        *(f"input={n}" for n in names),
        "reference=truth.png",
        "solve_mode=sidecar",
        "init_mode=from-image",
        f"seed={recipe.scene.seed}",
        "state_out=result/state.enhc",
        "render_out=result/consensus.png",
        "report_out=result/report.txt",
    ]
    (out / "combine.cfg").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(names)} observations, truth and catalog to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    catalog = StarList.read(args.catalog)
    lum = luminance(decode_image(args.image))
    detected = detect_stars(lum, max_stars=args.max_stars, nsigma=args.nsigma)
    params = SolveParams(image_width=lum.shape[1], image_height=lum.shape[0], match_radius=args.match_radius)
    try:
        transform = solve(detected, build_index(catalog), catalog, params)
    except NoSolution as exc:
        print(f"no solution: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"scale={float(transform.scale)!r}")
    print(f"rotation_deg={transform.rotation_deg!r}")
    print(f"dx={float(transform.dx)!r}")
    print(f"dy={float(transform.dy)!r}")
    if args.sidecar_out:
        write_sidecar(transform, args.sidecar_out)
    return EXIT_OK


def _channel_path(path: str, name: str, n: int) -> Path:
    p = Path(path)
    return p if n == 1 else p.with_name(f"{p.stem}.{name}{p.suffix}")


def cmd_combine(args) -> int:
    config = RunConfig.from_file(args.config)
    result = run_combine(config)
    names = [m.channel for m in result.report.channels]
    if config.state_out:
        for state, name in zip(result.states, names):
            p = _channel_path(config.state_out, name, len(names))
            p.parent.mkdir(parents=True, exist_ok=True)
            consensus.save_state(state, p)
    if config.render_out:
        Path(config.render_out).parent.mkdir(parents=True, exist_ok=True)
        write_image(config.render_out, result.renders)
    if config.report_out:
        write_report(result, config.report_out)
    sys.stdout.write(format_report(result.report))
    return EXIT_OK


def cmd_render(args) -> int:
    state = consensus.load_state(args.state)
    source = luminance(decode_image(args.match_to))
    image = consensus.render(state, source)
    write_image(args.out, image)
    return EXIT_OK


def cmd_tau(args) -> int:
    a = luminance(decode_image(args.a)).ravel()
    b = luminance(decode_image(args.b)).ravel()
    if args.exact:
        print(f"tau_b={float(kendall_tau(a, b))!r}")
    else:
        est, se = kendall_tau_sampled(a, b, args.pairs, args.seed)
        print(f"tau_a={float(est)!r}")
        print(f"stderr={float(se)!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enhance", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and observations")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="plate-solve one image against a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--sidecar-out")
    p.add_argument("--nsigma", type=float, default=8.0)
    p.add_argument("--max-stars", type=int, default=200)
    p.add_argument("--match-radius", type=float, default=2.0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("combine", help="run a combine job from a key=value config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("render", help="histogram-match a saved state to an image")
    p.add_argument("--state", required=True)
    p.add_argument("--match-to", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("tau", help="Kendall tau between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="exact tau-b")
    mode.add_argument("--pairs", type=int, default=100_000, help="sampled tau-a pair budget")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tau)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyRun as exc:
        print(f"empty run: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (DecodeError, ShapeMismatch, DegenerateInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnhanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
