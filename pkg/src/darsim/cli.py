"""Command line entry point: ``darsim run|check|attack|sweep FILE``.

Exit codes: 0 clean, 2 invariant breach (or, for ``attack``, a demonstrated
violation), 1 usage, parse or generation errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .attacklab import PlanError, build_plan, run_attack
from .schedule import (
    PLAIN,
    SIGNOFF,
    GenerationFailure,
    ModeError,
    ScheduleError,
    check_hm,
    check_srhm,
    loads,
)
from .scenario import (
    SCENARIO_HEADER,
    ParseError,
    execute,
    load_scenario,
    load_sweep,
    metrics_csv,
    parse_scenario,
    run_sweep,
)

OK, USAGE, BREACH = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="darsim", description="Bootstrapping simulator for dynamically available, reconfigurable consensus.")
    p.add_argument("command", choices=["run", "check", "attack", "sweep"])
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=None, help="override the seed given in the file")
    p.add_argument("--trace", metavar="PATH", help="write the JSON-lines trace here")
    p.add_argument("--metrics", metavar="PATH", help="write the metrics CSV here")
    p.add_argument("--quiet", action="store_true")
    return p


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_schedule_or_scenario(path: str, seed: Optional[int]):
    """A schedule file, or a scenario whose schedule is used (generated with ``seed``)."""
    text = _read(path)
    first = next((ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")), "")
    if first == SCENARIO_HEADER:
        import os

        sc = parse_scenario(text, source=path, base_dir=os.path.dirname(os.path.abspath(path)))
        return sc.build_schedule(seed), sc.gadget
    return loads(text), "dar"


def cmd_run(args, out) -> int:
    sc = load_scenario(args.file)
    o = execute(sc, seed=args.seed)
    if sc.trace or args.trace:
        _write(args.trace or f"{sc.name}.trace.jsonl", o.trace.dumps())
    metrics_path = args.metrics or sc.metrics
    if metrics_path:
        _write(metrics_path, metrics_csv([o.row()]))
    if not args.quiet:
        m = o.trace.metrics()
        print(f"scenario {sc.name} seed {o.seed} gadget {sc.gadget} strategy {sc.strategy}", file=out)
        print(" ".join(f"{k}={v}" for k, v in m.items()), file=out)
        for v in o.trace.violations:
            print(f"breach {v}", file=out)
        for f in o.trace.faults:
            print(f"fault {f}", file=out)
        for name, probs in o.problems.items():
            for p in probs:
                print(f"oracle {name}: {p}", file=out)
        print("status " + ("breach" if o.breached else "clean"), file=out)
    return BREACH if o.breached else OK


def cmd_check(args, out) -> int:
    k, _ = _load_schedule_or_scenario(args.file, args.seed)
    lines = [f"HM {check_hm(k).describe()}", f"SR-HM {check_srhm(k, PLAIN).describe()}"]
    if k.mode == SIGNOFF:
        lines.append(f"SR-HM-signoff {check_srhm(k, SIGNOFF).describe()}")
    else:
        lines.append("SR-HM-signoff n/a")
    if not args.quiet:
        print("\n".join(lines), file=out)
    return OK


def cmd_attack(args, out) -> int:
    k, gadget = _load_schedule_or_scenario(args.file, args.seed)
    try:
        plan = build_plan(k)
    except PlanError as exc:
        print(f"darsim: attack plan: {exc}", file=sys.stderr)
        return USAGE
    report = run_attack(plan, gadget=gadget, seed=args.seed or 0)
    text = report.to_text()
    if args.metrics:
        _write(args.metrics, text)
    if not args.quiet:
        out.write(text)
    return BREACH if report.demonstrated else OK


def cmd_sweep(args, out) -> int:
    sw = load_sweep(args.file)
    res = run_sweep(sw, base_seed=args.seed)
    text = res.csv()
    if args.metrics:
        _write(args.metrics, text)
    elif not args.quiet:
        out.write(text)
    if not args.quiet and args.metrics:
        for frac in sw.fractions:
            r = res.ratio(frac)
            if r is not None:
                print(f"fraction {frac:g}: darso/dar boot messages {r:.4f}", file=out)
    return OK


COMMANDS = {"run": cmd_run, "check": cmd_check, "attack": cmd_attack, "sweep": cmd_sweep}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except OSError as exc:
        print(f"darsim: {exc}", file=sys.stderr)
    except (ParseError, ScheduleError, ModeError) as exc:
        print(f"darsim: {exc}", file=sys.stderr)
    except GenerationFailure as exc:
        print(f"darsim: generation infeasible: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"darsim: {exc}", file=sys.stderr)
    return USAGE


if __name__ == "__main__":
    sys.exit(main())
