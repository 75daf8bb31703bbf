"""Command-line interface: site finding, potential grids, shuttling, Ramsey
sequences, and reliability statistics, emitting plot-ready CSV artifacts.

All commands are deterministic for a given seed; output files contain no
timestamps, so reruns are byte-identical.  Exit codes: 0 success, 1
simulation-level failure (e.g. ion lost, no sites), 2 configuration or
parse errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constants import MG24, MG25, UM, IonSpecies, angular_to_mhz, joule_to_mev
from .dynamics import SimulationOptions, transport_simulate
from .qubit import (DetectionModel, QubitParams, StarkPulse,
                    calibrate_quadratic_coeff, result_to_csv, scenario_sequence,
                    simulate_sequence)
from .reference import paper_unit_cell
from .sites import SearchBox, find_sites, siteset_to_csv
from .stats import (FluorescenceModel, LoadingModel, failure_rate_bound,
                    heating_bound_from_fluorescence, loading_analytics,
                    loading_simulate, scatter_rate_relative,
                    storage_limited_expectation)
from .trapmodel import (ConfigurationError, ChipPlaneError, ControlConfig,
                        PseudopotentialField, RfDrive, TotalPotential,
                        load_layout, load_voltage_table)
from .waveform import (Route, RouteLeg, apply_filter, compile_route, load_route,
                       max_slew_rate, quantize, waveform_to_csv)

DEFAULT_SEED = 20260810
DATA_ENV_VAR = "IONSHUTTLE_DATA_DIR"

EXIT_OK = 0
EXIT_SIMULATION = 1
EXIT_CONFIG = 2


def _data_dir() -> Path:
    env = os.environ.get(DATA_ENV_VAR)
    if env:
        return Path(env)
    return Path(__file__).parent / "data"


def _load_inputs(args):
    layout_path = Path(args.layout) if args.layout else _data_dir() / "reference_layout.txt"
    volt_path = Path(args.voltages) if args.voltages else _data_dir() / "control_voltages.csv"
    if not layout_path.exists():
        raise ConfigurationError(f"layout file not found: {layout_path}")
    if not volt_path.exists():
        raise ConfigurationError(f"voltage table not found: {volt_path}")
    layout = load_layout(layout_path)
    configs = load_voltage_table(volt_path)
    return layout, configs


def _species(name: str) -> IonSpecies:
    if name == "mg24":
        return MG24
    if name == "mg25":
        return MG25
    raise ConfigurationError(f"unknown species '{name}'")


def _drive(args) -> RfDrive:
    return RfDrive(omega_rf=2 * np.pi * args.f_rf * 1e6, u_rf=args.u_rf)


def _out_path(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(default_name)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _config(configs, name: str) -> ControlConfig:
    if name not in configs:
        raise ConfigurationError(
            f"unknown configuration '{name}' (have: {', '.join(sorted(configs))})")
    return configs[name]


_DEFAULT_BOX_UM = (-60.0, 60.0, -60.0, 60.0, 40.0, 140.0)


def _parse_box(text: str | None):
    if not text:
        return _DEFAULT_BOX_UM
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 6:
        raise ConfigurationError("--box needs 'x0,x1,y0,y1,z0,z1' in um")
    return tuple(parts)


def cmd_sites(args) -> int:
    layout, configs = _load_inputs(args)
    config = _config(configs, args.config_name)
    box_um = _parse_box(args.box)
    box = SearchBox((box_um[0] * UM, box_um[1] * UM),
                    (box_um[2] * UM, box_um[3] * UM),
                    (box_um[4] * UM, box_um[5] * UM))
    siteset = find_sites(layout, _drive(args), config, _species(args.species),
                         box, args.grid_spacing * UM, workers=args.workers)
    out = _out_path(args, "sites.csv")
    out.write_text(f"# ionshuttle v{__version__} sites: config={config.name} "
                   f"species={args.species}\n" + siteset_to_csv(siteset),
                   encoding="utf-8")
    print(f"{len(siteset)} site(s) found "
          f"({siteset.seeds_total} seeds, {siteset.seeds_failed} failed); "
          f"wrote {out}")
    for s in siteset.sites:
        p = s.position / UM
        f = angular_to_mhz(s.mode_frequencies)
        print(f"  {s.label:4s} ({p[0]:8.2f},{p[1]:8.2f},{p[2]:8.2f}) um  "
              f"f = {f[0]:.3f}/{f[1]:.3f}/{f[2]:.3f} MHz  q = {s.mathieu_q:.2f}")
    return EXIT_OK if len(siteset) > 0 else EXIT_SIMULATION


def cmd_potential_grid(args) -> int:
    layout, configs = _load_inputs(args)
    config = _config(configs, args.config_name)
    box = _parse_box(args.box)
    if box[4] <= 0:
        raise ChipPlaneError("grid must lie above the chip plane (z > 0)")
    n = args.resolution
    axes = [np.linspace(box[2 * i] * UM, box[2 * i + 1] * UM, n) if n > 1
            else np.array([0.5 * (box[2 * i] + box[2 * i + 1]) * UM])
            for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    species = _species(args.species)
    drive = _drive(args)
    if args.field == "rf":
        energy = PseudopotentialField(layout, drive, species).energy(grid)
    else:
        energy = TotalPotential(layout, drive, config, species).energy(grid)
    mev = joule_to_mev(energy)
    levels = [float(x) for x in args.iso_levels.split(",")]
    out = _out_path(args, "potential_grid.csv")
    lines = [f"# ionshuttle v{__version__} potential grid: field={args.field} "
             f"config={config.name}",
             f"# iso_levels_mev = {','.join(f'{lv:g}' for lv in levels)}",
             "x_um,y_um,z_um,energy_mev"]
    for p, e in zip(grid, mev):
        lines.append(f"{p[0] / UM:.3f},{p[1] / UM:.3f},{p[2] / UM:.3f},{e:.9g}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sampled {grid.shape[0]} points; iso levels (meV): "
          f"{', '.join(f'{lv:g}' for lv in levels)}; wrote {out}")
    return EXIT_OK


def _route_from_args(args, configs) -> Route:
    if args.route:
        route = load_route(args.route)
    else:
        t = args.t_playback * 1e-3
        route = Route((RouteLeg("phi_H", 0.0, 0.0),
                       RouteLeg("phi_1", t, 0.0),
                       RouteLeg("phi_H", t, 0.0)))
    route.validate(configs, allow_any_timing=args.allow_any_timing)
    return route


def cmd_shuttle(args) -> int:
    layout, configs = _load_inputs(args)
    species = _species(args.species)
    drive = _drive(args)
    route = _route_from_args(args, configs)

    wf = compile_route(route, configs, allow_any_timing=args.allow_any_timing)
    wf = quantize(wf)
    slew = max_slew_rate(wf)
    fwf = apply_filter(wf)

    box = SearchBox((-60e-6, 60e-6), (-60e-6, 60e-6), (40e-6, 140e-6))
    start_cfg = route.legs[0].config_name
    end_cfg = route.legs[-1].config_name
    s_start = find_sites(layout, drive, configs[start_cfg], species, box,
                         args.grid_spacing * UM, workers=args.workers)
    s_end = (s_start if end_cfg == start_cfg else
             find_sites(layout, drive, configs[end_cfg], species, box,
                        args.grid_spacing * UM, workers=args.workers))
    if len(s_start) == 0 or len(s_end) == 0:
        print("no trapping sites under the route configurations", file=sys.stderr)
        return EXIT_SIMULATION
    start = s_start.by_label(args.start_site)
    try:
        end = s_end.by_label(args.end_site)
    except KeyError:
        end = min(s_end.sites, key=lambda s: np.linalg.norm(s.position - start.position))
    opts = SimulationOptions(rng_seed=args.seed, decimation=args.decimation)
    result = transport_simulate(layout, drive, species, fwf, [start, end], opts)

    out = _out_path(args, "waveform.csv")
    out.write_text(waveform_to_csv(wf, comments=[
        f"ionshuttle v{__version__} route {wf.meta.get('route', '')}",
        f"max_slew_V_per_ms = {slew.overall_v_per_ms():.6f} ({slew.worst_channel})",
    ]), encoding="utf-8")
    report = _out_path(args, "transport_report.txt") if args.out is None \
        else out.with_suffix(".report.txt")
    q = result.quanta_per_mode
    lines = [
        f"route = {wf.meta.get('route', '')}",
        f"duration_s = {wf.duration:.6g}",
        f"max_slew_V_per_ms = {slew.overall_v_per_ms():.6f}",
        f"max_slew_channel = {slew.worst_channel}",
        f"quantization_clamped_samples = {wf.meta.get('clamped_samples', 0)}",
        f"ion_lost = {result.ion_lost}",
        f"confined = {result.confined}",
        f"final_site = {result.final_site}",
        f"quanta_per_mode = {q[0]:.6g},{q[1]:.6g},{q[2]:.6g}",
        f"total_quanta = {result.total_quanta:.6g}",
        f"max_excursion_um = {result.max_excursion / UM:.3f}",
    ]
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"wrote {out} and {report}")
    return EXIT_SIMULATION if result.ion_lost else EXIT_OK


def cmd_ramsey(args) -> int:
    cell = paper_unit_cell()
    params = QubitParams(field_origin=tuple(cell["T_H"]))
    target = np.radians(args.background_phase_deg)
    coeff = calibrate_quadratic_coeff(params, cell, target)
    params = QubitParams(quadratic_shift_coeff=coeff,
                         field_origin=tuple(cell["T_H"]))
    seq = scenario_sequence(args.scenario, stark=StarkPulse())
    phis = np.linspace(0.0, 2 * np.pi, args.n_phases, endpoint=False)
    detection = DetectionModel() if args.detection else None
    result = simulate_sequence(seq, params, cell, phis, args.shots, args.seed,
                               detection=detection)
    out = _out_path(args, f"ramsey_{args.scenario}.csv")
    out.write_text(result_to_csv(result, comments=[
        f"ionshuttle v{__version__} ramsey scenario {args.scenario}",
        f"shots = {args.shots} (0 = analytic)",
        f"quadratic_shift_coeff_hz_per_t2 = {coeff:.6e}",
    ]), encoding="utf-8")
    print(f"scenario {args.scenario}: contrast = {result.fitted_contrast:.4f} "
          f"+- {result.contrast_sigma:.4f}, offset = "
          f"{np.degrees(result.fitted_phase_offset):.2f} +- "
          f"{np.degrees(result.phase_sigma):.2f} deg "
          f"(defined={result.phase_defined}); wrote {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    lines: list[str] = [f"# ionshuttle v{__version__} stats {args.stats_command}"]
    if args.stats_command == "loading":
        model = LoadingModel(p_success=args.p_success,
                             attempt_duration=args.attempt_duration,
                             max_attempts=args.max_attempts)
        ana = loading_analytics(model)
        mc = loading_simulate(model, args.trials, args.seed)
        lines += [
            f"p_success = {model.p_success}",
            f"attempt_duration_s = {model.attempt_duration}",
            f"max_attempts = {model.max_attempts}",
            f"trials = {args.trials}",
            f"analytic_p_within_5 = {ana.success_within[min(4, model.max_attempts - 1)]:.6f}",
            f"mc_p_within_5 = {mc.success_within[min(4, model.max_attempts - 1)]:.6f}",
            f"analytic_p_terminated = {ana.p_terminated:.6f}",
            f"mc_p_terminated = {mc.n_terminated / mc.n_trials:.6f}",
            f"mean_wall_time_s = {ana.mean_wall_time:.4f}",
        ]
    elif args.stats_command == "heating-bound":
        model = FluorescenceModel()
        bound = heating_bound_from_fluorescence(args.delta, model)
        lines += [
            f"delta_fluorescence = {args.delta}",
            f"nbar_upper_bound = {bound.nbar:.4f}",
            f"flag = {bound.flag}",
            "# calibration note: the published conversion (-2.1 % -> 84 quanta)",
            "# used unpublished beam parameters; this model's default detection",
            "# beam gives the value above for the same fluorescence change.",
        ]
    elif args.stats_command == "failure-bound":
        fb = failure_rate_bound(args.n, args.failures, args.confidence)
        lines += [
            f"n_trials = {fb.n_trials}",
            f"n_failures = {fb.n_failures}",
            f"confidence = {fb.confidence}",
            f"upper_bound = {fb.upper:.6e}",
            f"lower_bound = {fb.lower:.6e}",
            f"rule_of_three = {fb.rule_of_three:.6e}",
            f"naive = {fb.naive:.6e}",
        ]
    elif args.stats_command == "storage":
        se = storage_limited_expectation(args.tau, args.duration, args.n)
        lines += [
            f"storage_tau_s = {args.tau}",
            f"sequence_duration_s = {args.duration}",
            f"survival_probability = {se.survival_probability:.9f}",
            f"expected_consecutive = {se.expected_consecutive:.4f}",
            f"ratio_tau_over_duration = {se.ratio_approximation:.4f}",
            f"unlimited = {se.unlimited}",
        ]
    else:
        raise ConfigurationError(f"unknown stats subcommand {args.stats_command}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _out_path(args, "stats.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ionshuttle",
        description="Surface-trap array shuttling simulator and analysis toolkit.")
    parser.add_argument("--version", action="version", version=__version__)

    def add_common(p, needs_layout=True):
        if needs_layout:
            p.add_argument("--layout", help="layout file (default: shipped reference; "
                           f"directory override via ${DATA_ENV_VAR})")
            p.add_argument("--voltages", help="voltage table CSV (default: shipped)")
            p.add_argument("--species", default="mg24", choices=["mg24", "mg25"])
            p.add_argument("--u-rf", type=float, default=200.0,
                           help="rf amplitude, V zero-to-peak")
            p.add_argument("--f-rf", type=float, default=52.4,
                           help="rf drive frequency, MHz")
            p.add_argument("--workers", type=int, default=1,
                           help="concurrency cap for site refinement")
            p.add_argument("--grid-spacing", type=float, default=5.0,
                           help="site-search seed grid spacing, um")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--out", help="output file path")
        p.add_argument("--units", default="lab", choices=["lab"],
                       help="output units (lab: um/MHz/meV)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sites", help="locate trapping sites of a configuration")
    add_common(p)
    p.add_argument("--config-name", default="phi_pyramid")
    p.add_argument("--box", help="search box 'x0,x1,y0,y1,z0,z1' in um")
    p.set_defaults(func=cmd_sites)

    p = sub.add_parser("potential-grid", help="sample the potential on a grid (meV)")
    add_common(p)
    p.add_argument("--config-name", default="phi_H")
    p.add_argument("--box", help="grid box 'x0,x1,y0,y1,z0,z1' in um")
    p.add_argument("--resolution", type=int, default=41, help="points per axis")
    p.add_argument("--field", default="rf", choices=["rf", "total"])
    p.add_argument("--iso-levels", default="0.5,4.0",
                   help="isosurface levels to echo, meV")
    p.set_defaults(func=cmd_potential_grid)

    p = sub.add_parser("shuttle", help="compile, audit and simulate a route")
    add_common(p)
    p.add_argument("--route", help="route file (default: phi_H -> phi_1 -> phi_H)")
    p.add_argument("--t-playback", type=float, default=0.1,
                   help="per-leg playback time for the default route, ms")
    p.add_argument("--start-site", default="T_H")
    p.add_argument("--end-site", default="T_H")
    p.add_argument("--decimation", type=int, default=2000)
    p.add_argument("--allow-any-timing", action="store_true",
                   help="skip the published t_playback range check")
    p.set_defaults(func=cmd_shuttle)

    p = sub.add_parser("ramsey", help="simulate a published Ramsey scenario")
    add_common(p, needs_layout=False)
    p.add_argument("--scenario", default="ii",
                   choices=["i", "ii", "iii", "reference"])
    p.add_argument("--shots", type=int, default=1000,
                   help="shots per phase point (0 = analytic mode)")
    p.add_argument("--n-phases", type=int, default=12)
    p.add_argument("--detection", action="store_true",
                   help="emulate photon-count detection")
    p.add_argument("--background-phase-deg", type=float, default=5.0,
                   help="calibrated gradient phase of scenario i")
    p.set_defaults(func=cmd_ramsey)

    p = sub.add_parser("stats", help="reliability statistics")
    stats_sub = p.add_subparsers(dest="stats_command", required=True)

    q = stats_sub.add_parser("loading")
    add_common(q, needs_layout=False)
    q.add_argument("--p-success", type=float, default=0.4)
    q.add_argument("--attempt-duration", type=float, default=1.2)
    q.add_argument("--max-attempts", type=int, default=10)
    q.add_argument("--trials", type=int, default=100000)
    q.set_defaults(func=cmd_stats)

    q = stats_sub.add_parser("heating-bound")
    add_common(q, needs_layout=False)
    q.add_argument("--delta", type=float, default=-0.021,
                   help="fractional fluorescence change (negative)")
    q.set_defaults(func=cmd_stats)

    q = stats_sub.add_parser("failure-bound")
    add_common(q, needs_layout=False)
    q.add_argument("--n", type=int, default=100000)
    q.add_argument("--failures", type=int, default=0)
    q.add_argument("--confidence", type=float, default=0.95)
    q.set_defaults(func=cmd_stats)

    q = stats_sub.add_parser("storage")
    add_common(q, needs_layout=False)
    q.add_argument("--tau", type=float, default=900.0)
    q.add_argument("--duration", type=float, default=9e-3)
    q.add_argument("--n", type=int, default=100000)
    q.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ChipPlaneError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
