"""Batch front-end: single-shot estimation, Monte-Carlo campaigns, selftest.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 selftest failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .ao import KnownConstants, run_ao
from .bench import MCReport, run_campaign, run_proposed, vr_metrics
from .config import ConfigError, DEFAULT_CONFIG, parse_config, parse_config_text, validation_lines
from .extract import extract_result
from .synth import set_snr, synthesize


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfsense",
        description="Near-field sensing with visibility-region detection: "
                    "simulate, estimate, and benchmark.")
    parser.add_argument("--config", help="TOML scene/experiment file (built-in default scene if omitted)")
    parser.add_argument("--mode", choices=("single", "campaign", "selftest"),
                        default="single")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--snr", type=float, help="override the scene SNR in dB")
    parser.add_argument("--trials", type=int, help="override the campaign trial count")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. --override ising.coupling=2.0")
    return parser


def _collect_overrides(args) -> list:
    overrides = []
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value.strip()))
    if args.snr is not None:
        overrides.append(("noise.snr_db", repr(args.snr)))
    if args.trials is not None:
        overrides.append(("campaign.trials", repr(args.trials)))
    if args.seed is not None:
        overrides.append(("campaign.seed", repr(args.seed)))
    return overrides


def _write_trace(state, path) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,stage,f1,f2,f3,total\n")
        for iteration, stage, f1, f2, f3, total in state.trace:
            fh.write(f"{iteration},{stage},{f1:.17g},{f2:.17g},{f3:.17g},{total:.17g}\n")


def _result_record(result, scene, obs) -> dict:
    paths = []
    for l, p in enumerate(result.paths):
        blocked = []
        if p.visibility is not None:
            blocked = (np.flatnonzero(p.visibility == 0) + 1).tolist()
        paths.append({
            "aoa_deg": float(np.rad2deg(p.aoa)),
            "distance_m": p.distance,
            "ue_distance_m": p.ue_distance,
            "gain": [p.gain.real, p.gain.imag],
            "position_m": list(p.position),
            "fit_residual": p.fit_residual,
            "blocked_antennas": blocked,
        })
    truth = [{
        "aoa_deg": float(np.rad2deg(p.aoa)),
        "distance_m": p.distance,
        "ue_distance_m": p.ue_distance,
        "gain": [p.gain.real, p.gain.imag],
        "position_m": list(p.position()),
        "blocked_antennas": (np.flatnonzero(obs.vr.b[:, l] == 0) + 1).tolist(),
    } for l, p in enumerate(scene.paths)]
    return {"method": result.method, "converged": result.converged,
            "iterations": result.iterations, "paths": paths, "truth": truth}


def _run_single(scene, ao_config, ising, grid, campaign, out_dir) -> int:
    from . import plots

    obs = synthesize(scene, np.random.default_rng(scene.seed))
    constants = KnownConstants.from_scene(scene)
    state = run_ao(obs, constants, ising, ao_config)
    result = extract_result(obs.y, state, scene.geom, scene.ofdm, grid,
                            scene.noise_variance, rounds=campaign.fit_rounds)
    record = _result_record(result, scene, obs)
    b_hat = np.stack([p.visibility for p in result.paths], axis=1)
    detection, false_alarm = vr_metrics(b_hat, obs.vr.b)
    record["vr_detection"] = detection
    record["vr_false_alarm"] = false_alarm

    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        json.dump(record, fh, indent=2)
    _write_trace(state, os.path.join(out_dir, "trace_ao.csv"))
    plots.save_vr_figure(b_hat, obs.vr.b, os.path.join(out_dir, "vr_detection.svg"))
    plots.save_scatter_map(result, scene, os.path.join(out_dir, "scatterer_map.svg"))

    for l, p in enumerate(result.paths):
        tx, ty = scene.paths[l].position()
        ex, ey = p.position
        print(f"path {l}: position ({ex:.4f}, {ey:.4f}) m, truth ({tx:.4f}, {ty:.4f}) m, "
              f"error {np.hypot(ex - tx, ey - ty):.4f} m")
    print(f"visibility: detection {detection:.3f}, false alarm {false_alarm:.3f}")
    print(f"converged: {state.converged} after {state.iterations} iterations")
    print(f"artifacts written to {out_dir}")
    return 0


def _run_campaign(scene, ao_config, ising, grid, campaign, out_dir) -> int:
    from . import plots

    report = run_campaign(scene, campaign.snr_db, campaign.trials, campaign.methods,
                          campaign.seed, ising, ao_config, grid,
                          rounds=campaign.fit_rounds)
    report.to_csv(os.path.join(out_dir, "report.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(report.summary_text())
    plots.save_rmse_curves(report, os.path.join(out_dir, "rmse_vs_snr.svg"))
    for snr in report.snr_points():
        line = [f"snr {snr:g} dB:"]
        for method in report.methods():
            line.append(f"{method} loc {report.value(snr, method, 'location_rmse'):.4g} m")
        print("  ".join(line))
    print(f"artifacts written to {out_dir}")
    return 0


def _run_selftest() -> int:
    from .selftest import run_selftests

    results = run_selftests()
    failures = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        failures += 0 if ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 4


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.mode == "selftest":
        return _run_selftest()
    try:
        overrides = _collect_overrides(args)
        if args.config is not None:
            parsed = parse_config(args.config, overrides)
        else:
            parsed = parse_config_text(DEFAULT_CONFIG, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    scene, ao_config, ising, grid, campaign = parsed
    for line in validation_lines(scene):
        print(f"# {line}", file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.mode == "single":
            return _run_single(scene, ao_config, ising, grid, campaign, args.out)
        return _run_campaign(scene, ao_config, ising, grid, campaign, args.out)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
