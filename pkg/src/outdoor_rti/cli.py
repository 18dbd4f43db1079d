"""Command-line front end.

Every subcommand takes ``--seed``, ``--config`` and ``--out``; it echoes the
resolved configuration, writes its artifacts plus a ``manifest.json`` into
the output directory, and exits with status 1 and a one-line diagnostic on
any failure. ``--manifest FILE`` replays the command recorded in a manifest.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .channel_model import (GLOBAL, NODE_SPECIFIC, CalibrationWindow, LinkChannelStats, estimate_stats,
                            fade_levels, fit_path_loss, load_model, save_model)
from .evaluation import Schedule, check_calibration_windows, run_experiment, selection_for_window
from .pipeline import RtiPipeline
from .rti import RtiConfig, write_pgm
from .scene import (SurveyNoiseConfig, estimate_node_positions, forest_deployment, load_deployment,
                    load_survey, save_deployment)
from .selection import Strategy, energy_coefficient, select
from .simulate import RssTrace, ScenarioConfig, Trajectory, TruthTrace, WindProfile, generate_trace, load_scenario
from .tracking import TrackerConfig

log = logging.getLogger("outdoor_rti")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config and manifest helpers
# ---------------------------------------------------------------------------

def load_config(path):
    """(RtiConfig, TrackerConfig) from a JSON file holding RtiConfig keys and an
    optional ``tracker`` object. Unknown keys are rejected."""
    if path is None:
        return RtiConfig(), TrackerConfig()
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise CliError(f"{path}: config must be a JSON object")
    d = dict(d)
    tracker = TrackerConfig.from_dict(d.pop("tracker", {}) or {})
    return RtiConfig.from_dict(d), tracker


def resolved(config: RtiConfig, tracker: TrackerConfig) -> dict:
    d = config.to_dict()
    d["tracker"] = dict(vars(tracker))
    return d


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out, command, argv, seed, config, inputs, outputs, extra=None):
    m = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "version": __version__,
    }
    if extra:
        m.update(extra)
    _dump(m, os.path.join(out, "manifest.json"))


def _echo(command, seed, config):
    print(json.dumps({"command": command, "seed": seed, "config": config}, sort_keys=True))


def _deployment(path):
    return load_deployment(path) if path else forest_deployment()


def _window(spec, n_frames, config):
    """``START:END`` frame range, or the first calibration window by default."""
    if spec:
        try:
            a, b = spec.split(":")
            return CalibrationWindow(int(a), int(b))
        except ValueError as exc:
            raise CliError(f"bad --window {spec!r}: expected START:END frame indices") from exc
    n = Schedule.from_times(config.t_s).calib_frames
    return CalibrationWindow(0, min(n, n_frames))


def _schedule(args, config):
    return Schedule.from_times(config.t_s, args.calib_s, args.reselect_s)


def _parse_walk(spec):
    pts = []
    for item in spec.split(";"):
        t, x, y = (float(v) for v in item.split(","))
        pts.append((t, x, y))
    return Trajectory(pts)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, config, tracker):
    if args.scenario:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            sc = ScenarioConfig.from_dict({**sc.to_dict(), "seed": args.seed})
    else:
        dep = _deployment(args.deployment)
        walkers = [_parse_walk(w) for w in (args.walk or [])]
        sc = ScenarioConfig(dep, args.duration, t_s=config.t_s, seed=args.seed or 0, walkers=walkers,
                            wind=WindProfile.constant(args.wind))
    g = generate_trace(sc)
    out = args.out
    g.trace.to_csv(os.path.join(out, "trace.csv"))
    g.truth.to_csv(os.path.join(out, "truth.csv"))
    _dump(sc.to_dict(), os.path.join(out, "scenario.json"))
    save_deployment(sc.deployment, os.path.join(out, "deployment.json"))
    save_model(g.model, os.path.join(out, "planted_model.json"))
    print(f"frames={g.trace.n_frames} links={len(g.trace.links)} channels={len(g.trace.channels)} "
          f"missing={float(np.isnan(g.trace.rss).mean()):.4f}")
    return sc.seed, ["trace.csv", "truth.csv", "scenario.json", "deployment.json", "planted_model.json"], \
        {"scenario": args.scenario, "deployment": args.deployment}


def _load_trace(args, config):
    dep = _deployment(args.deployment)
    trace = RssTrace.from_csv(args.trace, dep, config.t_s)
    return dep, trace


def cmd_fit_pathloss(args, config, tracker):
    dep, trace = _load_trace(args, config)
    window = _window(args.window, trace.n_frames, config)
    stats = estimate_stats(trace, window)
    model = fit_path_loss(stats, dep, args.mode)
    stats = fade_levels(stats, model, dep)
    save_model(model, os.path.join(args.out, "model.json"))
    stats.to_csv(os.path.join(args.out, "stats.csv"))
    print(f"mode={model.mode} window={window.start}:{window.end} pairs={int(stats.present.sum())}")
    return args.seed, ["model.json", "stats.csv"], {"deployment": args.deployment, "trace": args.trace}


def cmd_select(args, config, tracker):
    dep = _deployment(args.deployment)
    strategy = Strategy.parse(args.strategy)
    inputs = {"deployment": args.deployment}
    if args.stats:
        stats = LinkChannelStats.from_csv(args.stats, dep)
        if args.model:
            stats = fade_levels(stats, load_model(args.model), dep)
            inputs["model"] = args.model
        elif stats.fade is not None:
            stats = stats.with_fade(stats.fade, strategy.model_mode)
        sel = select(stats, strategy, config.upsilon_r)
        inputs["stats"] = args.stats
    elif args.trace:
        trace = RssTrace.from_csv(args.trace, dep, config.t_s)
        sel = selection_for_window(trace, _window(args.window, trace.n_frames, config), strategy, dep, config)
        inputs["trace"] = args.trace
    else:
        raise CliError("select needs --stats or --trace")
    sel.to_csv(os.path.join(args.out, "selection.csv"))
    theta = energy_coefficient(sel, dep.n_nodes, len(dep.channels))
    print(f"strategy={strategy.value} selected={sel.size} theta_e={theta!r}")
    return args.seed, ["selection.csv"], inputs


def _write_estimates(path, trace, frames):
    """One row per track matched in a frame; rows with confirmed=1 are the
    frame's position estimates."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t", "track_id", "x", "y", "confirmed"])
        for k, tracks in enumerate(frames):
            for tid, x, y, conf in tracks:
                w.writerow([k, f"{trace.t[k]:.6f}", tid, f"{x:.6f}", f"{y:.6f}", int(conf)])


def _write_image_csv(image2d, path):
    np.savetxt(path, np.asarray(image2d)[::-1], delimiter=",", fmt="%.9g")


def cmd_run(args, config, tracker):
    dep, trace = _load_trace(args, config)
    strategy = Strategy.parse(args.strategy)
    schedule = _schedule(args, config)
    windows = schedule.windows(trace.n_frames)
    if not windows:
        raise CliError("trace too short for one calibration window")
    ends = {w.end: w for w in windows}
    calib = np.zeros(trace.n_frames, dtype=bool)
    for w in windows:
        calib[w.start:w.end] = True
    pipe = RtiPipeline(dep, config, tracker, subtract_background=not args.no_subtract)
    grid = pipe.projection.grid
    img_dir = os.path.join(args.out, "images")
    outputs = ["estimates.csv"]
    if args.image_every > 0:
        os.makedirs(img_dir, exist_ok=True)
    hi = 12.0 * pipe.tracker.scale or 1.0  # full scale: 12 dB on every covering link
    frames, detected = [], 0
    for k in range(trace.n_frames):
        if k in ends:
            pipe.set_selection(selection_for_window(trace, ends[k], strategy, dep, config))
        res = pipe.step(trace.rss[k], calibrating=bool(calib[k]))
        frames.append(res.tracks)
        detected += len(res.estimates) > 0
        if args.image_every > 0 and k % args.image_every == 0:
            img = grid.to_image(res.subtracted)
            if args.image_format in ("pgm", "both"):
                write_pgm(img, os.path.join(img_dir, f"frame_{k:06d}.pgm"), 0.0, hi)
                outputs.append(f"images/frame_{k:06d}.pgm")
            if args.image_format in ("csv", "both"):
                _write_image_csv(img, os.path.join(img_dir, f"frame_{k:06d}.csv"))
                outputs.append(f"images/frame_{k:06d}.csv")
    _write_estimates(os.path.join(args.out, "estimates.csv"), trace, frames)
    print(f"strategy={strategy.value} frames={trace.n_frames} frames_with_detection={detected}")
    return args.seed, outputs, {"deployment": args.deployment, "trace": args.trace}


def _parse_sweeps(items):
    out = {}
    for item in items or []:
        name, _, values = item.partition("=")
        if not values:
            raise CliError(f"bad --sweep {item!r}: expected NAME=V1,V2,...")
        out[name] = [float(v) for v in values.split(",")]
    return out


def cmd_eval(args, config, tracker):
    dep, trace = _load_trace(args, config)
    truth = TruthTrace.from_csv(args.truth)
    if truth.n_frames != trace.n_frames:
        raise CliError(f"truth has {truth.n_frames} frames, trace has {trace.n_frames}")
    strategies = [Strategy.parse(s) for s in args.strategies.split(",")]
    schedule = _schedule(args, config)
    check_calibration_windows(schedule.windows(trace.n_frames), truth)
    report = run_experiment(trace, truth, strategies, dep, config, schedule, tracker,
                            ablation=args.ablation, sweeps=_parse_sweeps(args.sweep), workers=args.workers)
    outputs = ["report.csv", "episodes.csv"]
    report.to_csv(os.path.join(args.out, "report.csv"))
    report.episodes_to_csv(os.path.join(args.out, "episodes.csv"))
    if report.sweeps:
        report.sweeps_to_csv(os.path.join(args.out, "sweeps.csv"))
        outputs.append("sweeps.csv")
    print(f"{'strategy':<8} {'theta_e':>8} {'FA[%]':>8} {'e_m[m]':>8} {'e_s[m]':>8}")
    for r in report.rows + report.ablation:
        name = r.strategy + ("" if r.background_subtraction else "*")
        print(f"{name:<8} {r.theta_e:8.4f} {r.false_alarm_pct:8.3f} {r.e_m:8.3f} {r.e_s:8.3f}")
    if report.ablation:
        print("* without background subtraction")
    return args.seed, outputs, {"deployment": args.deployment, "trace": args.trace, "truth": args.truth}


def cmd_locate_nodes(args, config, tracker):
    survey = load_survey(args.survey)
    noise = SurveyNoiseConfig(args.var_length, args.var_angle)
    nodes = estimate_node_positions(survey, noise, args.reference_node)
    _dump({"reference_node": args.reference_node if args.reference_node is not None else survey[0].link.tx,
           "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in nodes]},
          os.path.join(args.out, "positions.json"))
    print(f"nodes={len(nodes)} measurements={len(survey)}")
    return args.seed, ["positions.json"], {"survey": args.survey}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (simulate) / recorded seed")
    common.add_argument("--config", help="JSON with RTI parameters and an optional 'tracker' object")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--manifest", help="replay the command recorded in this manifest")

    p = argparse.ArgumentParser(prog="outdoor-rti", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate an RSS trace and ground truth")
    s.add_argument("--scenario", help="scenario JSON (overrides the flags below)")
    s.add_argument("--deployment", help="deployment JSON (default: built-in 20-node forest layout)")
    s.add_argument("--duration", type=float, default=300.0, help="seconds")
    s.add_argument("--wind", type=float, default=0.0, help="constant wind severity in [0, 1]")
    s.add_argument("--walk", action="append", help="walker waypoints 't,x,y;t,x,y;...' (repeatable)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-pathloss", parents=[common], help="calibration stats and path-loss model")
    s.add_argument("--deployment")
    s.add_argument("--trace", required=True)
    s.add_argument("--window", help="calibration frames START:END (default: first 300 s)")
    s.add_argument("--mode", choices=[NODE_SPECIFIC, GLOBAL], default=NODE_SPECIFIC)
    s.set_defaults(func=cmd_fit_pathloss)

    s = sub.add_parser("select", parents=[common], help="link-channel selection and energy coefficient")
    s.add_argument("--deployment")
    s.add_argument("--strategy", required=True)
    s.add_argument("--stats", help="stats CSV written by fit-pathloss")
    s.add_argument("--model", help="path-loss model JSON used to recompute fade levels")
    s.add_argument("--trace", help="trace CSV (alternative to --stats)")
    s.add_argument("--window")
    s.set_defaults(func=cmd_select)

    for name, func, hlp in (("run", cmd_run, "stream a trace through the pipeline"),
                            ("eval", cmd_eval, "compare strategies on one trace")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--deployment")
        s.add_argument("--trace", required=True)
        s.add_argument("--calib-s", type=float, default=300.0, help="calibration window length, s")
        s.add_argument("--reselect-s", type=float, default=7200.0, help="reselection period, s")
        s.set_defaults(func=func)
        if name == "run":
            s.add_argument("--strategy", default="OUT+")
            s.add_argument("--image-every", type=int, default=1, help="write every n-th image (0: none)")
            s.add_argument("--image-format", choices=["pgm", "csv", "both"], default="pgm",
                           help="PGM is scaled 0..12 dB-equivalent; CSV holds raw intensities, north row first")
            s.add_argument("--no-subtract", action="store_true", help="disable background subtraction")
        else:
            s.add_argument("--truth", required=True)
            s.add_argument("--strategies", default="OUT+,OUTw,COM+,COMw,FLB_U,FLB_w,FLB+,RFL_p,RFL_f,RFL+")
            s.add_argument("--ablation", action="store_true", help="add OUT+ without background subtraction")
            s.add_argument("--sweep", action="append", help="NAME=V1,V2 with NAME in lambda,t_w,t_b,t_w_t_b")
            s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("locate-nodes", parents=[common], help="node positions from a length/angle survey")
    s.add_argument("--survey", required=True)
    s.add_argument("--reference-node", type=int)
    s.add_argument("--var-length", type=float, default=0.5, help="length variance, m^2")
    s.add_argument("--var-angle", type=float, default=5.0, help="angle variance, deg^2")
    s.set_defaults(func=cmd_locate_nodes)
    return p


def _without_out(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def _replay_argv(argv):
    """Swap ``--manifest FILE`` for the argv it recorded (``--out`` may be overridden)."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--manifest")
    parser.add_argument("--out")
    known, _ = parser.parse_known_args(argv)
    if not known.manifest:
        return argv
    with open(known.manifest) as fh:
        recorded = list(json.load(fh)["argv"])
    if known.out is not None:
        recorded += ["--out", known.out]
    return recorded


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _replay_argv(argv)
    except (OSError, ValueError, KeyError) as exc:
        print(f"outdoor-rti: error: cannot read manifest: {exc}", file=sys.stderr)
        return 1
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config, tracker = load_config(args.config)
        cfg = resolved(config, tracker)
        _echo(args.command, args.seed, cfg)
        os.makedirs(args.out, exist_ok=True)
        seed, outputs, inputs = args.func(args, config, tracker)
        inputs["config"] = args.config
        write_manifest(args.out, args.command, _without_out(argv), seed, cfg, inputs, outputs)
    except (CliError, ValueError, KeyError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"outdoor-rti: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
