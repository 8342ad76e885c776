"""Command-line entry point: ``wallplan <verb> ...``.

Exit codes: 2 unreadable input, 3 bad weights or sizes, 4 planning failure,
5 oracle guard violation or empty corpus.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import coordinate, oracle, render
from .errors import BadDelta, BadWeights, InvalidMission, PlanningError, TooLarge
from .mission import Criteria, MissionSpec, dump_mission, load_mission, mission_to_json, validate_mission
from .schedule import (
    check_schedule,
    dump_schedule,
    load_schedule,
    mission_context,
    objective,
)
from .taems import validate_tree

EXIT_PARSE = 2
EXIT_WEIGHTS = 3
EXIT_PLANNING = 4
EXIT_ORACLE = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _mission(path: str) -> MissionSpec:
    try:
        return load_mission(path)
    except (OSError, InvalidMission) as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc


def _criteria(args, spec: MissionSpec) -> Criteria:
    base = spec.criteria
    crit = Criteria(
        base.alpha if args.alpha is None else args.alpha,
        base.beta if args.beta is None else args.beta,
        base.gamma if args.gamma is None else args.gamma,
        base.delta if args.delta is None else args.delta,
    )
    try:
        return crit.validate()
    except (BadWeights, BadDelta) as exc:
        raise CliError(EXIT_WEIGHTS, str(exc)) from exc


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def task_counts(spec: MissionSpec, schedule) -> dict[str, int]:
    tree, _ = mission_context(spec)
    tasks: dict[str, set[str]] = {a.id: set() for a in spec.planning_agents}
    for e in schedule.entries:
        tasks.setdefault(e.agent, set()).add(tree.unit_of[e.action])
    return {a: len(ts) for a, ts in sorted(tasks.items())}


def summary(spec: MissionSpec, schedule, criteria: Criteria) -> str:
    lines = [
        f"makespan {schedule.makespan:.3f}",
        f"cost {schedule.total_cost:.3f}",
        f"quality {schedule.total_quality:.3f}",
        f"objective {objective(schedule, spec, criteria):.6f}",
    ]
    for agent, n in task_counts(spec, schedule).items():
        lines.append(f"tasks {agent} {n}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# verbs


def cmd_plan(args) -> int:
    spec = _mission(args.mission)
    crit = _criteria(args, spec)
    spec = spec.with_criteria(crit)
    try:
        sched, trace = coordinate.run_coordination(spec, args.seed)
    except (PlanningError, ValueError) as exc:
        raise CliError(EXIT_PLANNING, f"planning failed: {exc}") from exc
    if args.out:
        dump_schedule(sched, args.out)
    if args.trace:
        Path(args.trace).write_text(coordinate.trace_to_ndjson(trace), encoding="utf-8")
    sys.stdout.write(summary(spec, sched, crit))
    return 0


def cmd_coordinate(args) -> int:
    spec = _mission(args.mission)
    crit = _criteria(args, spec)
    spec = spec.with_criteria(crit)
    try:
        sched, trace = coordinate.run_coordination(spec, args.seed)
    except (PlanningError, ValueError) as exc:
        raise CliError(EXIT_PLANNING, f"coordination failed: {exc}") from exc
    text = coordinate.trace_to_ndjson(trace)
    if args.replay:
        try:
            recorded = Path(args.replay).read_text(encoding="utf-8")
            coordinate.trace_from_ndjson(recorded)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(EXIT_PARSE, f"unreadable trace: {exc}") from exc
        if recorded != text:
            raise CliError(EXIT_PLANNING, "replay diverged from the recorded trace")
        sys.stdout.write("replay matches\n")
    if args.trace:
        _write(args.trace, text)
    if args.out:
        dump_schedule(sched, args.out)
    for task, agent in sorted(coordinate.awards_from_trace(trace).items()):
        sys.stdout.write(f"award {task} {agent}\n")
    return 0


def _criteria_set(text: str) -> tuple[tuple[float, float, float], ...]:
    if text == "table":
        return oracle.TABLE_ROWS
    rows = []
    for chunk in text.split(";"):
        try:
            vals = tuple(float(v) for v in chunk.split(","))
        except ValueError as exc:
            raise CliError(EXIT_WEIGHTS, f"bad criteria row {chunk!r}") from exc
        try:
            Criteria(*vals).validate()
        except (TypeError, BadWeights) as exc:
            raise CliError(EXIT_WEIGHTS, f"bad criteria row {chunk!r}") from exc
        rows.append(vals)
    return tuple(rows)


def cmd_compare(args) -> int:
    rows = _criteria_set(args.criteria_set)
    folder = Path(args.corpus)
    files = sorted(folder.glob("*.json")) if folder.is_dir() else []
    if not files:
        raise CliError(EXIT_ORACLE, f"no missions in {args.corpus}")
    missions = [_mission(str(f)) for f in files]
    try:
        report = oracle.table_report(missions, rows, baseline=not args.no_baseline)
    except TooLarge as exc:
        raise CliError(EXIT_ORACLE, str(exc)) from exc
    except PlanningError as exc:
        raise CliError(EXIT_PLANNING, str(exc)) from exc
    report["missions"] = [f.name for f in files]
    if args.out:
        Path(args.out).write_text(oracle.report_json(report), encoding="utf-8")
    sys.stdout.write(oracle.format_table(report))
    return 0


def cmd_gen(args) -> int:
    if args.bricks < 1 or args.agents < 1:
        raise CliError(EXIT_WEIGHTS, "need at least one brick and one agent")
    spec = oracle.random_mission(args.seed, args.bricks, args.agents, orange=args.orange)
    if args.out:
        dump_mission(spec, args.out)
    else:
        sys.stdout.write(json.dumps(mission_to_json(spec), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_render(args) -> int:
    try:
        sched = load_schedule(args.schedule)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_PARSE, f"unreadable schedule: {exc}") from exc
    try:
        text = render.render_svg(sched) if args.format == "svg" else render.render_text(sched)
    except PlanningError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    _write(args.out, text)
    return 0


def cmd_validate(args) -> int:
    spec = _mission(args.mission)
    problems = list(validate_mission(spec))
    if not problems:
        tree, table = mission_context(spec)
        problems += [f"{v.rule}: {v.subject} {v.detail}".rstrip() for v in validate_tree(tree)]
        if args.schedule and not problems:
            try:
                sched = load_schedule(args.schedule)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise CliError(EXIT_PARSE, f"unreadable schedule: {exc}") from exc
            violations = check_schedule(sched, tree, table, spec)
            for v in violations:
                sys.stdout.write(f"{v.rule}: {v.subject} {v.detail}".rstrip() + "\n")
            if violations:
                return EXIT_PLANNING
    for p in problems:
        sys.stdout.write(f"{p}\n")
    if problems:
        return EXIT_PARSE
    sys.stdout.write("ok\n")
    return 0


# --------------------------------------------------------------------------


def _weights(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wallplan", description="Plan and coordinate multi-robot wall building.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("plan", help="coordinate the team and write the schedule")
    p.add_argument("mission")
    _weights(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--trace", help="write the message trace as NDJSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("coordinate", help="run the protocol and print or replay its trace")
    p.add_argument("mission")
    _weights(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="where to write the NDJSON trace ('-' for stdout)")
    p.add_argument("--replay", help="recorded trace to check against")
    p.add_argument("--out")
    p.set_defaults(func=cmd_coordinate)

    p = sub.add_parser("compare", help="optimality gaps against the exhaustive planner")
    p.add_argument("corpus")
    p.add_argument("--criteria-set", default="table", help="'table' or 'a,b,g;a,b,g;...'")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen", help="write a seeded random mission")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--bricks", type=int, default=4)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--orange", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="draw a schedule as a Gantt chart")
    p.add_argument("schedule")
    p.add_argument("--format", choices=("svg", "text"), default="svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="check a mission, optionally with a schedule")
    p.add_argument("mission")
    p.add_argument("--schedule")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"wallplan: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
