"""Command-line interface: run episodes, Monte Carlo batches, validate scenarios.

Scenario files are strict JSON documents (see README for the schema); the
--scenario flag accepts either a file path or the name of a bundled preset.
Outputs are CSV with a fixed column layout and 12-significant-digit decimals,
so identical inputs produce byte-identical files.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 I/O error.
"""

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

from .scenario import (
    Scenario,
    ScenarioParseError,
    ScenarioValidationError,
    scenario_from_dict,
    scenario_to_dict,
)
from .simulator import McSummary, RunResult, run_episode, run_monte_carlo

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

PRESETS = (
    "fig1_two_targets",
    "fig3_single_target",
    "fig4_arc_robust",
    "fig4_arc_point",
    "fig5_doppler_3d",
    "fig5_doppler_3d_control_off",
    "fig7_mixed_sensors",
)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _read_scenario_text(spec: str) -> str:
    path = Path(spec)
    if path.exists():
        return path.read_text()
    if spec in PRESETS:
        return resources.files("trackctl").joinpath(f"presets/{spec}.json").read_text()
    raise FileNotFoundError(
        f"{spec!r} is neither a readable file nor a bundled preset "
        f"(presets: {', '.join(PRESETS)})"
    )


def load_scenario(spec: str, mode_override=None) -> Scenario:
    """Load and validate a scenario from a path or preset name.

    Raises FileNotFoundError/OSError, json.JSONDecodeError,
    ScenarioParseError or ScenarioValidationError.
    """
    text = _read_scenario_text(spec)
    doc = json.loads(text)
    scenario = scenario_from_dict(doc)
    if mode_override is not None:
        scenario = dataclasses.replace(scenario, mode=mode_override)
    return scenario


def _fmt(value) -> str:
    return format(float(value), ".12g")


def _axis_names(d: int):
    pos = ["px", "py", "pz"][:d]
    vel = ["vx", "vy", "vz"][:d]
    return pos + vel


def episode_csv_lines(result: RunResult, scenario: Scenario):
    d = scenario.d
    axes = _axis_names(d)
    ctrl = ["ux", "uy", "uz"][:d]
    header = ["t", "target_id"]
    header += [f"true_{a}" for a in axes]
    header += [f"est_{a}" for a in axes]
    header += ["pos_err_m", "vel_err_mps", "crb_ref"]
    n_sensors = result.sensor_states.shape[1]
    for m in range(n_sensors):
        header += [f"sensor{m}_{a}" for a in axes]
        header += [f"sensor{m}_{c}" for c in ctrl]
    yield ",".join(header)
    T, n_targets = result.pos_err.shape
    for t in range(T):
        sensor_cells = []
        for m in range(n_sensors):
            sensor_cells += [_fmt(v) for v in result.sensor_states[t, m]]
            sensor_cells += [_fmt(v) for v in result.controls[t, m]]
        for n in range(n_targets):
            cells = [str(t), str(n)]
            cells += [_fmt(v) for v in result.truth[t, n]]
            cells += [_fmt(v) for v in result.estimates[t, n]]
            cells += [
                _fmt(result.pos_err[t, n]),
                _fmt(result.vel_err[t, n]),
                _fmt(result.crb_ref[t, n]),
            ]
            cells += sensor_cells
            yield ",".join(cells)


def mc_csv_lines(summary: McSummary):
    yield "t,target_id,p10,p50,p90,mean_crb"
    T, n_targets = summary.p50.shape
    for t in range(T):
        for n in range(n_targets):
            yield ",".join(
                [
                    str(t),
                    str(n),
                    _fmt(summary.p10[t, n]),
                    _fmt(summary.p50[t, n]),
                    _fmt(summary.p90[t, n]),
                    _fmt(summary.mean_crb[t, n]),
                ]
            )


def _write_lines(path: str, lines) -> None:
    with open(path, "w") as handle:
        for line in lines:
            handle.write(line + "\n")


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario, args.mode)
    except (FileNotFoundError, OSError) as exc:
        return _fail(str(exc), EXIT_IO)
    except json.JSONDecodeError as exc:
        return _fail(f"invalid JSON: {exc}", EXIT_PARSE)
    except ScenarioParseError as exc:
        return _fail(str(exc), EXIT_PARSE)
    except ScenarioValidationError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    result = run_episode(scenario, args.seed)
    try:
        _write_lines(args.out, episode_csv_lines(result, scenario))
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}", EXIT_IO)
    if not args.quiet:
        print(f"wrote episode trace ({scenario.steps} steps) to {args.out}")
    return EXIT_OK


def cmd_mc(args) -> int:
    try:
        scenario = load_scenario(args.scenario, args.mode)
    except (FileNotFoundError, OSError) as exc:
        return _fail(str(exc), EXIT_IO)
    except json.JSONDecodeError as exc:
        return _fail(f"invalid JSON: {exc}", EXIT_PARSE)
    except ScenarioParseError as exc:
        return _fail(str(exc), EXIT_PARSE)
    except ScenarioValidationError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    if args.runs < 1:
        return _fail("--runs must be at least 1", EXIT_VALIDATION)
    summary = run_monte_carlo(scenario, args.runs, args.seed)
    try:
        _write_lines(args.out, mc_csv_lines(summary))
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}", EXIT_IO)
    if not args.quiet:
        print(f"wrote Monte Carlo summary ({args.runs} runs) to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (FileNotFoundError, OSError) as exc:
        return _fail(str(exc), EXIT_IO)
    except json.JSONDecodeError as exc:
        return _fail(f"invalid JSON: {exc}", EXIT_PARSE)
    except ScenarioParseError as exc:
        return _fail(str(exc), EXIT_PARSE)
    except ScenarioValidationError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    print(json.dumps(scenario_to_dict(scenario), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackctl",
        description="Track maneuvering targets with CRB-driven mobile sensor control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one episode and write its CSV trace")
    run.add_argument("--scenario", required=True, help="scenario file or preset name")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--mode", choices=["robust", "point"], default=None)
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    mc = sub.add_parser("mc", help="run a Monte Carlo batch and write the summary CSV")
    mc.add_argument("--scenario", required=True, help="scenario file or preset name")
    mc.add_argument("--runs", type=int, required=True)
    mc.add_argument("--seed", type=int, default=0, help="base seed (run i uses seed+i)")
    mc.add_argument("--out", required=True, help="output CSV path")
    mc.add_argument("--mode", choices=["robust", "point"], default=None)
    mc.add_argument("--quiet", action="store_true")
    mc.set_defaults(func=cmd_mc)

    val = sub.add_parser("validate", help="parse, validate and print a scenario")
    val.add_argument("--scenario", required=True, help="scenario file or preset name")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
