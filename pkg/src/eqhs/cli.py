"""Command-line interface: generate layouts, analyze, simulate, run studies.

All file I/O lives here; the library modules stay pure. Exit codes are a
stable contract: 0 success (and controllable), 1 input error, 2 negative
analysis outcome (uncontrollable layout).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis, dynamics, montecarlo
from .hypergraph import (Topology, TopologyKind, incidence_matrix, make_topology,
                         switched_template_column, topology_from_dict,
                         topology_to_dict)

log = logging.getLogger("eqhs")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NEGATIVE = 2


class InputError(ValueError):
    """User input problem; maps to exit code 1."""


def parse_soc(value) -> float:
    """SOC literal to fraction: 0.65 stays 0.65, '65%' becomes 0.65."""
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("%"):
            return float(text[:-1]) / 100.0
        return float(text)
    return float(value)


def _parse_soc_list(value) -> list[float]:
    if isinstance(value, str):
        value = value.split(",")
    return [parse_soc(v) for v in value]


def _fmt_machine(x: float) -> str:
    return f"{x:.17g}"


def _fmt_human(x: float) -> str:
    return f"{x:.4g}"


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _matrix_as_text(topology: Topology) -> str:
    """Incidence matrix with exact rational entries, column-aligned."""
    if topology.switched:
        cols = [topology.edges[0].column_fractions(topology.n)]
    else:
        cols = [e.column_fractions(topology.n) for e in topology.edges]
    cells = [[str(cols[j][i]) for j in range(len(cols))] for i in range(topology.n)]
    width = max(len(s) for row in cells for s in row)
    return "\n".join(" ".join(s.rjust(width) for s in row) for row in cells)


def _cmd_topology(args) -> int:
    try:
        topology = make_topology(args.kind, args.n, args.m, args.current_limit)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    payload = json.dumps(topology_to_dict(topology), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n")
        log.info("wrote %s", args.out)
    else:
        print(payload)
    if args.print_matrix:
        print(_matrix_as_text(topology))
    return EXIT_OK


def _pack_from_args(args, n: int, m: int | None) -> dynamics.PackConfig:
    if args.capacities:
        caps = tuple(float(v) for v in args.capacities.split(","))
        if len(caps) != n:
            raise InputError(f"{len(caps)} capacities for n={n} cells")
        return dynamics.PackConfig(n, caps, args.eta, args.sample_period, m=m)
    return dynamics.PackConfig.uniform(n, args.capacity_ah, args.eta,
                                       args.sample_period, m=m)


def _cmd_analyze(args) -> int:
    data = _load_json(args.topology)
    try:
        topology = topology_from_dict(data)
        pack = _pack_from_args(args, topology.n, topology.m)
        report = analysis.controllability(pack, topology)
        te_bound = None
        if args.te_gain is not None:
            if args.x0 is None:
                raise InputError("--te-gain needs --x0 to bound the time from")
            x0 = np.array(_parse_soc_list(args.x0))
            te_bound = analysis.te_upper_bound(pack, topology, args.te_gain,
                                               x0, parse_soc(args.epsilon))
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = report.to_json_dict()
    out["te_bound_s"] = te_bound
    print(json.dumps(out, indent=2))
    return EXIT_OK if report.controllable is not False else EXIT_NEGATIVE


def _scenario_topology(spec, base: Path) -> Topology:
    if isinstance(spec, str):
        spec = {"path": spec}
    if "path" in spec:
        return topology_from_dict(_load_json(str(base / spec["path"])))
    return make_topology(spec["kind"], int(spec["n"]), spec.get("m"),
                         float(spec.get("current_limit_a", 0.5)))


def _scenario_policy(spec) -> dynamics.ControlPolicy:
    mode = dynamics.PolicyMode(spec.get("mode", "sign-constant"))
    if mode is dynamics.PolicyMode.SIGN_CONSTANT:
        gains = spec.get("magnitudes_a")
        gains = tuple(gains) if isinstance(gains, list) else gains
        return dynamics.ControlPolicy.sign_constant(gains)
    gains = spec["gains"]
    gains = tuple(gains) if isinstance(gains, list) else float(gains)
    return dynamics.ControlPolicy(dynamics.PolicyMode.PROPORTIONAL, gains)


def _cmd_simulate(args) -> int:
    data = _load_json(args.scenario)
    base = Path(args.scenario).resolve().parent
    try:
        topology = _scenario_topology(data["topology"], base)
        pack_spec = data.get("pack", {})
        caps = pack_spec.get("capacity_ah", 3.1)
        caps = tuple(float(c) for c in caps) if isinstance(caps, list) \
            else (float(caps),) * topology.n
        pack = dynamics.PackConfig(topology.n, caps,
                                   float(pack_spec.get("coulombic_efficiency", 1.0)),
                                   float(pack_spec.get("sample_period_s", 1.0)),
                                   m=topology.m)
        policy = _scenario_policy(data.get("policy", {}))
        x0 = np.array(_parse_soc_list(data["initial_soc"]))
        epsilon = parse_soc(data.get("epsilon", 0.001))
        external = data.get("external_current_a", 0.0)
        external = np.array(external, dtype=float) if isinstance(external, list) \
            else float(external)
        stride = int(data.get("record_stride", 1))
        max_steps = data.get("max_steps")
    except KeyError as exc:
        raise InputError(f"scenario is missing field {exc}") from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    try:
        run = analysis.simulate_until_balanced(
            pack, topology, policy, x0, epsilon, max_steps,
            external_current=external, record_stride=max(stride, 1),
            force=args.force)
    except ValueError as exc:
        if "cannot balance" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NEGATIVE
        raise InputError(str(exc)) from exc

    if args.out:
        _write_trajectory_csv(args.out, run, pack)
        log.info("wrote %s", args.out)
    if run.clamped:
        print("warning: SOC hit the [0, 1] bounds and was clamped", file=sys.stderr)
    if run.converged:
        print(f"T_e = {_fmt_human(run.te_seconds)} s ({run.steps} steps)")
    else:
        print(f"NOT CONVERGED after {run.steps} steps "
              f"(imbalance {_fmt_human(dynamics.imbalance(run.soc_final))})")
    return EXIT_OK


def _write_trajectory_csv(path: str, run: analysis.SimRun,
                          pack: dynamics.PackConfig) -> None:
    n = run.soc_final.size
    header = "step,t_seconds," + ",".join(f"soc_{i}" for i in range(1, n + 1)) \
        + ",imbalance"
    lines = [header]
    for k, soc, imb in zip(run.recorded_steps, run.recorded_soc,
                           run.recorded_imbalance):
        t = k * pack.sample_period
        lines.append(f"{int(k)},{_fmt_machine(t)},"
                     + ",".join(_fmt_machine(v) for v in soc)
                     + f",{_fmt_machine(imb)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_mc(args) -> int:
    data = _load_json(args.study)
    if args.seed is not None:
        data["seed"] = args.seed
    if "seed" not in data:
        raise InputError("no RNG seed: set 'seed' in the study spec or pass --seed")
    for key in ("soc_low", "soc_high", "epsilon"):
        if key in data:
            data[key] = parse_soc(data[key])
    try:
        study = montecarlo.McStudy.from_dict(data)
        report = montecarlo.run_study(study, workers=args.workers)
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.csv"
    report_path.write_text("\n".join(montecarlo.report_csv_lines(report)) + "\n")
    for combo in report.combos:
        hist_path = out_dir / f"hist_{combo.kind.value}_n{combo.n}_m{combo.m}.csv"
        hist_path.write_text("\n".join(montecarlo.histogram_csv_lines(combo)) + "\n")
    log.info("wrote %s and %d histograms", report_path, len(report.combos))

    for n, m in study.pack_sizes:
        ranked = report.ranking(n, m)
        print(f"n={n}, m={m}")
        print(f"  {'topology':<12} {'lambda2':>10} {'mean_te_s':>12} "
              f"{'std_te_s':>12} {'converged':>9}")
        for c in ranked:
            print(f"  {c.kind.value:<12} {_fmt_human(c.lambda2):>10} "
                  f"{_fmt_human(c.mean_te):>12} {_fmt_human(c.std_te):>12} "
                  f"{c.converged:>5}/{c.samples}")
        print("  ranking: " + " < ".join(c.kind.value for c in ranked))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqhs",
        description="Model, analyze, and compare active battery equalization "
                    "systems via their equalizer incidence matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_topo = sub.add_parser("topology", help="generate a canonical layout")
    p_topo.add_argument("--kind", required=True,
                        choices=[k.value for k in TopologyKind])
    p_topo.add_argument("--n", type=int, required=True, help="cell count")
    p_topo.add_argument("--m", type=int, default=None, help="module count")
    p_topo.add_argument("--current-limit", type=float, default=0.5,
                        help="per-equalizer current magnitude limit, amperes")
    p_topo.add_argument("--out", help="write topology JSON here (default: stdout)")
    p_topo.add_argument("--print-matrix", action="store_true",
                        help="print the incidence matrix with rational entries")
    p_topo.set_defaults(func=_cmd_topology)

    p_an = sub.add_parser("analyze", help="controllability and connectivity report")
    p_an.add_argument("topology", help="topology JSON file")
    p_an.add_argument("--capacity-ah", type=float, default=3.1)
    p_an.add_argument("--capacities", help="comma-separated per-cell Ah")
    p_an.add_argument("--eta", type=float, default=1.0)
    p_an.add_argument("--sample-period", type=float, default=1.0)
    p_an.add_argument("--te-gain", type=float,
                      help="smallest proportional gain for the time bound")
    p_an.add_argument("--x0", help="initial SOCs, comma-separated (65%% ok)")
    p_an.add_argument("--epsilon", default="0.1%")
    p_an.set_defaults(func=_cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run one balancing scenario")
    p_sim.add_argument("scenario", help="scenario JSON file")
    p_sim.add_argument("--out", help="trajectory CSV path")
    p_sim.add_argument("--force", action="store_true",
                       help="simulate even if the layout is uncontrollable")
    p_sim.set_defaults(func=_cmd_simulate)

    p_mc = sub.add_parser("mc", help="run a Monte Carlo comparison study")
    p_mc.add_argument("study", help="study JSON file")
    p_mc.add_argument("--out-dir", required=True)
    p_mc.add_argument("--seed", type=int,
                      help="RNG seed (overrides the study file)")
    p_mc.add_argument("--workers", type=int, default=0,
                      help="process count, 0 = auto")
    p_mc.set_defaults(func=_cmd_mc)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EQHS_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
