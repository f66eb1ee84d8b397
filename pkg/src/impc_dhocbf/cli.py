"""Command-line front end: ``impc-dhocbf sim | bench | validate``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import BenchConfig, BenchResult, run_bench
from .config import load_scenario_file, normalized_json, case_study_path, to_scenario
from .impc import ClosedLoopResult, ConfigurationError, closed_loop

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2

TRAJECTORY_HEADER = ("t", "x", "y", "theta", "v", "u1", "u2", "j_conv", "converged",
                     "feasible", "e_abs", "e_rel", "h_min", "solve_ms")
BENCH_HEADER = ("N", "m_cbf", "gamma1", "gamma2", "trials", "mean_s", "std_s", "infeas_rate")


def fmt(v) -> str:
    """Locale-independent cell formatting; ``None`` and NaN become empty cells."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.15g" % v


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def trajectory_rows(res: ClosedLoopResult):
    """One row per solved step plus the final state (or the failing step)."""
    for t, rep in enumerate(res.reports):
        x = res.states[t]
        u = res.inputs[t] if t < len(res.inputs) else (None, None)
        yield (t, *x, *u, rep.j_conv, rep.converged, rep.feasible, rep.e_abs, rep.e_rel,
               rep.h_min, rep.wall_time * 1e3)
    T = len(res.inputs)
    if T == len(res.reports):
        yield (T, *res.states[T]) + (None,) * 9


def write_trajectory_csv(path, res: ClosedLoopResult) -> None:
    _write_csv(Path(path), TRAJECTORY_HEADER, trajectory_rows(res))


def write_bench_csv(path, result: BenchResult) -> None:
    rows = []
    for r in result.rows:
        g = list(r.gammas) + [None] * max(0, 2 - len(r.gammas))
        rows.append((r.N, r.m_cbf, g[0], g[1], r.trials, r.mean_s, r.std_s, r.infeas_rate))
    _write_csv(Path(path), BENCH_HEADER, rows)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _config_path(arg: Optional[str]) -> Path:
    return case_study_path() if arg is None else Path(arg)


def cmd_sim(args) -> int:
    sf = load_scenario_file(_config_path(args.config))
    scn = to_scenario(sf, t_sim=args.t_sim)
    res = closed_loop(scn)
    write_trajectory_csv(args.out, res)
    if not res.completed:
        rep = res.reports[-1]
        print(f"step {rep.t} infeasible: {rep.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_bench(args) -> int:
    sf = load_scenario_file(_config_path(args.config))
    scn = to_scenario(sf)
    cfg = BenchConfig(
        trials=args.trials,
        seed=args.seed,
        horizons=args.horizons or (scn.N,),
        m_cbf_values=args.m_cbf or (scn.cbf.m_cbf,),
        gammas=scn.cbf.gammas,
    )
    write_bench_csv(args.out, run_bench(cfg, scn))
    return EXIT_OK


def cmd_validate(args) -> int:
    sf = load_scenario_file(_config_path(args.config))
    print(normalized_json(sf))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="impc-dhocbf",
                description="Iterative convex MPC with discrete high-order barrier functions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    cfg_help = "scenario JSON (default: bundled case-study scenario)"

    s = sub.add_parser("sim", help="run a closed-loop simulation")
    s.add_argument("--config", help=cfg_help)
    s.add_argument("--out", required=True, help="trajectory CSV path")
    s.add_argument("--t-sim", type=int, default=None, help="override the number of steps")
    s.set_defaults(func=cmd_sim)

    b = sub.add_parser("bench", help="randomized one-step feasibility/timing benchmark")
    b.add_argument("--config", help=cfg_help)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--horizons", type=_int_list, default=None, help="e.g. 4,8,12")
    b.add_argument("--m-cbf", type=_int_list, default=None, help="barrier orders, e.g. 1,2")
    b.add_argument("--out", required=True, help="benchmark CSV path")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="check a scenario file and echo it normalized")
    v.add_argument("--config", help=cfg_help)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
