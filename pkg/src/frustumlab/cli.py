"""Batch command-line interface.

Subcommands: genpairs (synthesize a pose-pair dataset), calibrate (solve a
pose-pair file), fig9 (calibration-error-vs-sample-count sweep), kwire /
tha (virtual-OR experiments), replay (validate and summarize a session
file), serve (HTTP service). Report paths write a CSV and render a PNG
figure alongside it. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FrustumLabError, InvalidParams
from .experiments import (
    DEFAULT_NOISE,
    ZERO_NOISE,
    ExperimentConfig,
    NoiseLevel,
    run_kwire_experiment,
    run_tha_experiment,
)
from .handeye import MotionRange, NoiseModel, calibrate, generate_pose_pairs, sampling_experiment
from .geometry import FrameId, RigidTransform, relative_rotation_angle_deg, rotation_about
from .session_io import load_pairs, replay, save_pairs, save_session
from .simulator import calibration_to_dict, pose_to_dict

DEFAULT_TRUTH = RigidTransform(
    rotation_about((0.3, -0.5, 0.8), 140.0), (50.0, -80.0, 950.0), FrameId.H, FrameId.X
)


def _parse_levels(spec: str) -> tuple[NoiseLevel, ...]:
    """Named noise levels: zero, default, px<sigma>, scale<factor>."""
    levels = []
    for token in spec.split(","):
        token = token.strip()
        if token == "zero":
            levels.append(ZERO_NOISE)
        elif token == "default":
            levels.append(DEFAULT_NOISE)
        elif token.startswith("px"):
            levels.append(NoiseLevel(label=token, pixel_sigma=float(token[2:])))
        elif token.startswith("scale"):
            s = float(token[5:])
            levels.append(
                NoiseLevel(
                    label=token,
                    localizer_rot_deg=DEFAULT_NOISE.localizer_rot_deg * s,
                    localizer_trans_mm=DEFAULT_NOISE.localizer_trans_mm * s,
                    pixel_sigma=DEFAULT_NOISE.pixel_sigma * s,
                    calib_rot_sigma_deg=DEFAULT_NOISE.calib_rot_sigma_deg * s,
                    calib_trans_sigma_mm=DEFAULT_NOISE.calib_trans_sigma_mm * s,
                    tremor_deg=DEFAULT_NOISE.tremor_deg * s,
                )
            )
        else:
            raise InvalidParams(f"unknown noise level {token!r}")
    return tuple(levels)


def cmd_genpairs(args) -> int:
    pairs = generate_pose_pairs(
        DEFAULT_TRUTH,
        args.n,
        MotionRange(args.rot_range, args.trans_range),
        NoiseModel(args.rot_sigma, args.trans_sigma, args.seed),
    )
    noise = NoiseModel(args.rot_sigma, args.trans_sigma, args.seed)
    save_pairs(pairs, args.out, ground_truth_x=DEFAULT_TRUTH, noise=noise)
    print(f"wrote {len(pairs)} pose pairs to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    pairs, truth = load_pairs(args.pairs)
    result = calibrate(pairs)
    payload = calibration_to_dict(result)
    if truth is not None:
        payload["rotation_error_vs_truth_deg"] = relative_rotation_angle_deg(
            result.x.rotation, truth.rotation
        )
        payload["translation_error_vs_truth_mm"] = float(
            np.linalg.norm(result.x.translation - truth.translation)
        )
        payload["ground_truth_x"] = pose_to_dict(truth)
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_fig9(args) -> int:
    from . import reports

    pairs, truth = load_pairs(args.pairs)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = sampling_experiment(pairs, sizes, args.repeats, ground_truth_x=truth, seed=args.seed)
    out = Path(args.out)
    reports.write_rows_csv(rows, out)
    figure = reports.render_sampling_figure(rows, out.with_suffix(".png"))
    for row in rows:
        print(
            f"N={row.n:4d}  rot {row.mean_rot_err:.4f} +/- {row.sd_rot_err:.4f} deg   "
            f"trans {row.mean_trans_err:.3f} +/- {row.sd_trans_err:.3f} mm   "
            f"degenerate {row.n_degenerate}"
        )
    print(f"wrote {out} and {figure}")
    return 0


def _run_experiment(args, runner, kind: str) -> int:
    from . import reports

    config = ExperimentConfig(
        levels=_parse_levels(args.levels), repeats=args.repeats, seed=args.seed
    )
    out_dir = Path(args.out_dir)
    session_dir = out_dir / "sessions"

    def sink(session):
        if not args.no_sessions:
            save_session(session, session_dir / f"{session.id}.json")

    report = runner(config, session_sink=sink)
    csv_path = reports.write_rows_csv(report.rows, out_dir / f"{kind}.csv")
    if kind == "kwire":
        figure = reports.render_kwire_figure(report, out_dir / f"{kind}.png")
    else:
        figure = reports.render_tha_figure(report, out_dir / f"{kind}.png")
    for level, stats in sorted(report.summary().items()):
        parts = "  ".join(f"{col} {m:.4g} +/- {sd:.4g}" for col, (m, sd) in stats.items())
        print(f"{kind} [{level}] over {args.repeats} repeats: {parts}")
    print(f"wrote {csv_path} and {figure}")
    return 0


def cmd_kwire(args) -> int:
    return _run_experiment(args, run_kwire_experiment, "kwire")


def cmd_tha(args) -> int:
    return _run_experiment(args, run_tha_experiment, "tha")


def cmd_replay(args) -> int:
    session = replay(args.file, verify=not args.no_verify)
    summary = {
        "id": session.id,
        "phantom": session.phantom.kind.value,
        "shots": len(session.shots),
        "annotations": len(session.annotations),
        "plans": len(session.plans),
        "events": len(session.events),
        "dose": session.dose,
        "outcome": session.outcome,
        "verified": not args.no_verify,
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    state_dir = args.state_dir or os.environ.get("FRUSTUM_STATE_DIR", "frustum-state")
    app = create_app(state_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frustumlab",
        description="X-ray viewing-frustum geometry toolkit: calibration, planning, virtual OR",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genpairs", help="synthesize a pose-pair dataset with known ground truth")
    p.add_argument("--n", type=int, default=120)
    p.add_argument("--rot-sigma", type=float, default=0.0, help="rotation noise std (deg)")
    p.add_argument("--trans-sigma", type=float, default=0.0, help="translation noise std (mm)")
    p.add_argument("--rot-range", type=float, default=60.0)
    p.add_argument("--trans-range", type=float, default=150.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_genpairs)

    p = sub.add_parser("calibrate", help="solve a pose-pair file for the tracker-to-source transform")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fig9", help="calibration error vs sample count sweep (CSV + figure)")
    p.add_argument("--pairs", required=True)
    p.add_argument("--sizes", default="5,10,20,40,80,120", help="comma-separated subset sizes")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fig9.csv")
    p.set_defaults(func=cmd_fig9)

    for kind in ("kwire", "tha"):
        p = sub.add_parser(kind, help=f"run the synthetic {kind} experiment (CSV + figure + sessions)")
        p.add_argument("--levels", default="zero,default", help="zero,default,px<sigma>,scale<f>")
        p.add_argument("--repeats", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=f"{kind}-results")
        p.add_argument("--no-sessions", action="store_true", help="skip writing session files")
        p.set_defaults(func=cmd_kwire if kind == "kwire" else cmd_tha)

    p = sub.add_parser("replay", help="validate and summarize a recorded session file")
    p.add_argument("file")
    p.add_argument("--no-verify", action="store_true", help="skip the replay recompute check")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--state-dir", default=None, help="defaults to $FRUSTUM_STATE_DIR or ./frustum-state")
    p.add_argument("--ui-dir", default=None, help="static UI bundle to serve under /ui")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FrustumLabError as exc:
        print(json.dumps({"code": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"code": "not_found", "message": str(exc)}), file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
