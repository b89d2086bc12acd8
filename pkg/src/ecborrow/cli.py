"""Command-line driver for simulation and resampling studies.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure budget exceeded (more than 1% failed fits in any result cell).
Every run prints its fully resolved configuration so it can be reproduced
verbatim.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ParseError, SchemaError
from .io import (
    load_manifest_data,
    read_manifest,
    read_oc_csv,
    synth_data,
    write_oc_csv,
)
from .methods import METHOD_ORDER, MethodConfig, normalize_method_id
from .mixed import ReSpec
from .oc import OcRow
from .resample import ResampleConfig, run_resampling_study, swap_source
from .scenarios import SCENARIO_IDS, run_scenario, scenario_spec

FAILURE_BUDGET = 0.01

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BUDGET = 4


def _positive_int(token: str) -> int:
    v = int(token)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {token}")
    return v


def _level(token: str) -> float:
    v = float(token)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {token}")
    return v


def _nonneg_float(token: str) -> float:
    v = float(token)
    if v < 0.0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {token}")
    return v


def _unit_interval(token: str) -> float:
    v = float(token)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {token}")
    return v


def _odd_nodes(token: str) -> int:
    v = int(token)
    if v < 11 or v % 2 == 0:
        raise argparse.ArgumentTypeError(f"quadrature nodes must be odd and >= 11, got {token}")
    return v


def _scenario_list(token: str) -> tuple[int, ...]:
    try:
        ids = tuple(int(part) for part in token.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected scenario ids like 1 or 1,2,5; got {token!r}")
    bad = [i for i in ids if i not in SCENARIO_IDS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"scenario ids must be in 1..12, got {','.join(map(str, bad))}"
        )
    return ids


def _method_list(token: str) -> tuple[str, ...]:
    try:
        return tuple(normalize_method_id(part) for part in token.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(token: str) -> tuple[int, ...]:
    try:
        if ":" in token:
            parts = [int(p) for p in token.split(":")]
            if len(parts) == 2:
                parts.append(5)
            start, stop, step = parts
            if step < 1 or stop < start:
                raise ValueError
            return tuple(range(start, stop + 1, step))
        return tuple(int(p) for p in token.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected start:stop[:step] or a comma list, got {token!r}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecborrow",
        description="Analyze RCTs with external control data and benchmark the methods.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_common = argparse.ArgumentParser(add_help=False)
    run_common.add_argument("--reps", type=_positive_int, default=10_000)
    run_common.add_argument("--seed", type=int, default=0)
    run_common.add_argument(
        "--methods",
        type=_method_list,
        default=METHOD_ORDER,
        help="comma list, default all eight",
    )
    run_common.add_argument("--alpha", type=_level, default=0.05)
    run_common.add_argument("--psw-c", type=_nonneg_float, default=1.0)
    run_common.add_argument("--strata", type=_positive_int, default=5)
    run_common.add_argument("--nodes", type=_odd_nodes, default=31)
    run_common.add_argument("--jobs", type=_positive_int, default=None)
    run_common.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", parents=[run_common], help="run selected scenarios")
    p_sim.add_argument("--scenario", type=_scenario_list, required=True)

    sub.add_parser("simulate-all", parents=[run_common], help="run all 12 scenarios")

    p_res = sub.add_parser(
        "resample", parents=[run_common], help="resampling study over an n1 grid"
    )
    p_res.add_argument("--manifest", required=True)
    p_res.add_argument("--n1-grid", type=_grid, default=tuple(range(75, 180, 5)))
    p_res.add_argument("--spike-prob", type=_unit_interval, default=0.2)
    p_res.add_argument("--ratio-r", type=_positive_int, default=2)
    p_res.add_argument("--source-study", default=None)

    p_synth = sub.add_parser("synth-data", help="write the synthetic control-only fixture")
    p_synth.add_argument("--out", default="synth_fixture")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--shift-study", default=None)
    p_synth.add_argument("--shift", type=float, default=0.05)

    p_rep = sub.add_parser("report", help="print a results CSV as an aligned table")
    p_rep.add_argument("path")
    return parser


def _echo_config(ns: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(ns).items())}
    print("resolved config:", json.dumps(resolved, default=str, sort_keys=True))


def _method_config(ns: argparse.Namespace) -> MethodConfig:
    return MethodConfig(
        alpha=ns.alpha,
        psw_c=ns.psw_c,
        strata=ns.strata,
        re_spec=ReSpec(nodes=ns.nodes),
    )


def _format_table(rows: list[OcRow]) -> str:
    header = ("key", "method", "effect", "reject", "bias", "rmse", "reps", "mc_se", "fail")
    body = [
        (
            r.key,
            r.method,
            r.effect,
            f"{r.rejection_rate:.4f}",
            f"{r.bias:.4f}",
            f"{r.rmse:.4f}",
            str(r.reps),
            f"{r.mc_se:.4f}",
            f"{r.failure_rate:.4f}",
        )
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def _finish(rows: list[OcRow], out: str) -> int:
    write_oc_csv(rows, out)
    print(_format_table(rows))
    print(f"wrote {len(rows)} rows to {out}")
    worst = max(r.failure_rate for r in rows)
    if worst > FAILURE_BUDGET:
        offenders = [
            f"{r.key}/{r.method}/{r.effect}={r.failure_rate:.4f}"
            for r in rows
            if r.failure_rate > FAILURE_BUDGET
        ]
        print(
            f"failure budget exceeded (> {FAILURE_BUDGET:.0%}): " + ", ".join(offenders),
            file=sys.stderr,
        )
        return EXIT_BUDGET
    return EXIT_OK


def _jobs(ns: argparse.Namespace) -> int:
    return ns.jobs if ns.jobs else (os.cpu_count() or 1)


def _cmd_simulate(ns: argparse.Namespace, ids: tuple[int, ...]) -> int:
    cfg = _method_config(ns)
    rows: list[OcRow] = []
    for sid in ids:
        for effect in ("null", "positive"):
            spec = scenario_spec(sid, effect)
            rows.extend(
                run_scenario(spec, ns.methods, ns.reps, ns.seed, cfg, jobs=_jobs(ns))
            )
    return _finish(rows, ns.out or "oc_simulate.csv")


def _cmd_resample(ns: argparse.Namespace) -> int:
    manifest = read_manifest(ns.manifest)
    if ns.source_study:
        manifest = swap_source(manifest, ns.source_study)
    source, externals, names = load_manifest_data(manifest)
    rcfg = ResampleConfig(
        n1_grid=ns.n1_grid,
        ratio_r=ns.ratio_r,
        spike_prob=ns.spike_prob,
        reps=ns.reps,
        seed=ns.seed,
    )
    rows = run_resampling_study(
        source,
        externals,
        names,
        rcfg,
        methods=ns.methods,
        method_cfg=_method_config(ns),
        jobs=_jobs(ns),
    )
    return _finish(rows, ns.out or "oc_resample.csv")


def _cmd_synth(ns: argparse.Namespace) -> int:
    manifest = synth_data(
        ns.out, seed=ns.seed, shift_study=ns.shift_study, shift=ns.shift
    )
    for s in manifest.studies:
        print(f"{s.role:>16}  {s.size:>5}  {s.path}")
    print(f"manifest: {os.path.join(ns.out, 'manifest.json')}")
    return EXIT_OK


def _cmd_report(ns: argparse.Namespace) -> int:
    print(_format_table(read_oc_csv(ns.path)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    _echo_config(ns)
    try:
        if ns.command == "simulate":
            return _cmd_simulate(ns, ns.scenario)
        if ns.command == "simulate-all":
            return _cmd_simulate(ns, SCENARIO_IDS)
        if ns.command == "resample":
            return _cmd_resample(ns)
        if ns.command == "synth-data":
            return _cmd_synth(ns)
        return _cmd_report(ns)
    except (ParseError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
