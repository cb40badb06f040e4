"""Scenario and sweep files, and the helpers that execute them.

Both formats are line based: ``key value...`` pairs, ``#`` comments and blank
lines ignored, unknown keys rejected.  The grammar is in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from . import oracles
from .adversary import STRATEGIES, make_strategy
from .netsim import GADGETS, ExecutionTrace, Simulation
from .schedule import (
    SIGNOFF,
    Schedule,
    ScheduleConstraints,
    ScheduleParseError,
    gen_schedule,
    loads,
)

SCENARIO_HEADER = "darsim-scenario 1"
SWEEP_HEADER = "darsim-sweep 1"
CSV_HEADER = ["scenario", "seed", "gadget", "epochs", "R", "reconfig_fraction", "boot_msgs", "fallbacks", "violations"]

_GEN_INT = {"universe_size", "epoch_len", "epochs", "members", "adversary_budget", "max_attempts"}
_GEN_FLOAT = {"reconfig_fraction", "corrupt_prob", "initial_awake", "stay_awake", "wake_prob"}
_GEN_STR = {"mode", "must_satisfy", "shape"}


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1, source: str = "<input>"):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Scenario:
    name: str
    gadget: str = "dar"
    strategy: str = "null"
    latency: int = 2
    seed: int = 0
    trace: bool = True
    metrics: Optional[str] = None
    hidden_rate: float = 0.5
    double_rate: float = 0.0
    schedule: Optional[Schedule] = None
    generator: Optional[ScheduleConstraints] = None

    def build_schedule(self, seed: Optional[int] = None) -> Schedule:
        if self.schedule is not None:
            return self.schedule
        return gen_schedule(self.generator, self.seed if seed is None else seed)

    def reconfig_label(self) -> str:
        return f"{self.generator.reconfig_fraction:g}" if self.generator is not None else ""


@dataclass(frozen=True)
class Sweep:
    name: str
    generator: ScheduleConstraints
    fractions: tuple = ()
    seeds: int = 1
    seed: int = 0
    gadgets: tuple = GADGETS
    strategy: str = "null"
    latency: int = 2
    workers: int = 4
    hidden_rate: float = 0.0
    double_rate: float = 0.0


# -- parsing -----------------------------------------------------------------


def _tokens(text: str):
    """Yield (line number, column of first token, tokens) for meaningful lines."""
    for n, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0]
        toks = body.split()
        if toks:
            yield n, len(body) - len(body.lstrip()) + 1, toks


def _num(kind, tok: str, n: int, col: int, source: str):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(f"expected {kind.__name__}, got {tok!r}", n, col, source) from None


def _col(raw_line: str, tok_index: int) -> int:
    pos = 0
    for i, tok in enumerate(raw_line.split()):
        pos = raw_line.index(tok, pos)
        if i == tok_index:
            return pos + 1
        pos += len(tok)
    return len(raw_line) + 1


def _generator(toks, n: int, lines, source: str) -> ScheduleConstraints:
    kw = {}
    for i, item in enumerate(toks[1:], 1):
        col = _col(lines[n - 1], i)
        if "=" not in item:
            raise ParseError(f"expected key=value, got {item!r}", n, col, source)
        k, v = item.split("=", 1)
        if k in kw:
            raise ParseError(f"duplicate generator key {k!r}", n, col, source)
        if k in _GEN_INT:
            kw[k] = _num(int, v, n, col, source)
        elif k in _GEN_FLOAT:
            kw[k] = _num(float, v, n, col, source)
        elif k in _GEN_STR:
            kw[k] = v
        else:
            raise ParseError(f"unknown generator key {k!r}", n, col, source)
    try:
        return ScheduleConstraints(**kw)
    except ValueError as exc:
        raise ParseError(str(exc), n, 1, source) from None


def _expect_header(text: str, header: str, source: str) -> list:
    lines = text.splitlines()
    first = next(_tokens(text), None)
    if first is None or " ".join(first[2]) != header:
        raise ParseError(f"first line must be {header!r}", first[0] if first else 1, 1, source)
    return lines


def parse_scenario(text: str, source: str = "<input>", base_dir: str = ".") -> Scenario:
    lines = _expect_header(text, SCENARIO_HEADER, source)
    fields: dict = {}
    schedule_lines: Optional[list] = None
    seen: set = set()
    skip_until = 0
    for n, col, toks in list(_tokens(text))[1:]:
        if n <= skip_until:
            continue
        key, args = toks[0], toks[1:]
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", n, col, source)
        seen.add(key)

        def one() -> str:
            if len(args) != 1:
                raise ParseError(f"{key} takes exactly one value", n, col, source)
            return args[0]

        if key == "name":
            fields["name"] = one()
        elif key == "gadget":
            v = one()
            if v not in GADGETS:
                raise ParseError(f"gadget must be one of {', '.join(GADGETS)}", n, _col(lines[n - 1], 1), source)
            fields["gadget"] = v
        elif key == "strategy":
            v = one()
            if v not in STRATEGIES:
                raise ParseError(f"strategy must be one of {', '.join(STRATEGIES)}", n, _col(lines[n - 1], 1), source)
            fields["strategy"] = v
        elif key in ("latency", "seed"):
            fields[key] = _num(int, one(), n, _col(lines[n - 1], 1), source)
        elif key in ("hidden_rate", "double_rate"):
            fields[key] = _num(float, one(), n, _col(lines[n - 1], 1), source)
        elif key == "trace":
            v = one()
            if v not in ("on", "off"):
                raise ParseError("trace must be on or off", n, _col(lines[n - 1], 1), source)
            fields["trace"] = v == "on"
        elif key == "metrics":
            fields["metrics"] = one()
        elif key == "generate":
            fields["generator"] = _generator(toks, n, lines, source)
        elif key == "schedule":
            v = one()
            if v == "inline":
                schedule_lines = []
                start = n
                for m in range(n, len(lines)):
                    if lines[m].split("#", 1)[0].strip() == "end":
                        break
                    schedule_lines.append(lines[m])
                else:
                    raise ParseError("inline schedule without 'end'", start, col, source)
                skip_until = start + len(schedule_lines) + 1
                try:
                    fields["schedule"] = loads("\n".join(schedule_lines) + "\n")
                except ScheduleParseError as exc:
                    raise ParseError(str(exc).split(": ", 1)[-1], start + exc.line, exc.column, source) from None
            else:
                path = v if os.path.isabs(v) else os.path.join(base_dir, v)
                try:
                    with open(path, encoding="utf-8") as fh:
                        fields["schedule"] = loads(fh.read())
                except OSError as exc:
                    raise ParseError(f"cannot read schedule {v!r}: {exc.strerror}", n, col, source) from None
                except ScheduleParseError as exc:
                    raise ParseError(f"in {v}: {exc}", n, col, source) from None
        else:
            raise ParseError(f"unknown key {key!r}", n, col, source)
    if "name" not in fields:
        raise ParseError("missing 'name'", 1, 1, source)
    if ("schedule" in fields) == ("generator" in fields):
        raise ParseError("give exactly one of 'schedule' or 'generate'", 1, 1, source)
    return Scenario(**fields)


def parse_sweep(text: str, source: str = "<input>") -> Sweep:
    lines = _expect_header(text, SWEEP_HEADER, source)
    fields: dict = {}
    for n, col, toks in list(_tokens(text))[1:]:
        key, args = toks[0], toks[1:]
        if key in fields or (key == "generate" and "generator" in fields):
            raise ParseError(f"duplicate key {key!r}", n, col, source)
        vcol = _col(lines[n - 1], 1)
        if key == "name":
            if len(args) != 1:
                raise ParseError("name takes one value", n, col, source)
            fields["name"] = args[0]
        elif key == "generate":
            fields["generator"] = _generator(toks, n, lines, source)
        elif key == "fractions":
            fields["fractions"] = tuple(_num(float, a, n, vcol, source) for a in args)
        elif key == "gadgets":
            for a in args:
                if a not in GADGETS:
                    raise ParseError(f"unknown gadget {a!r}", n, vcol, source)
            fields["gadgets"] = tuple(args)
        elif key == "strategy":
            if len(args) != 1 or args[0] not in STRATEGIES:
                raise ParseError(f"strategy must be one of {', '.join(STRATEGIES)}", n, vcol, source)
            fields["strategy"] = args[0]
        elif key in ("seeds", "seed", "latency", "workers"):
            if len(args) != 1:
                raise ParseError(f"{key} takes one value", n, col, source)
            fields[key] = _num(int, args[0], n, vcol, source)
        elif key in ("hidden_rate", "double_rate"):
            if len(args) != 1:
                raise ParseError(f"{key} takes one value", n, col, source)
            fields[key] = _num(float, args[0], n, vcol, source)
        else:
            raise ParseError(f"unknown key {key!r}", n, col, source)
    if "name" not in fields:
        raise ParseError("missing 'name'", 1, 1, source)
    if "generator" not in fields:
        raise ParseError("missing 'generate'", 1, 1, source)
    return Sweep(**fields)


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), source=path, base_dir=os.path.dirname(os.path.abspath(path)))


def load_sweep(path: str) -> Sweep:
    with open(path, encoding="utf-8") as fh:
        return parse_sweep(fh.read(), source=path)


# -- execution ---------------------------------------------------------------


@dataclass
class Outcome:
    scenario: Scenario
    seed: int
    schedule: Schedule
    trace: ExecutionTrace
    problems: dict = field(default_factory=dict)

    @property
    def breached(self) -> bool:
        return bool(self.trace.violations or self.trace.faults or any(self.problems.values()))

    def row(self) -> list:
        m = self.trace.metrics()
        k = self.schedule
        return [
            self.scenario.name,
            self.seed,
            self.trace.gadget,
            k.n_epochs,
            k.epoch_len,
            self.scenario.reconfig_label(),
            m["boot_msgs"],
            m["fallbacks"],
            m["violations"],
        ]


def _strategy(name: str, seed: int, hidden_rate: float, double_rate: float):
    if name == "hidden-spend":
        return make_strategy(name, seed, hidden_rate=hidden_rate, double_rate=double_rate)
    return make_strategy(name, seed)


def execute(sc: Scenario, seed: Optional[int] = None, schedule: Optional[Schedule] = None) -> Outcome:
    seed = sc.seed if seed is None else seed
    k = schedule if schedule is not None else sc.build_schedule(seed)
    strat = _strategy(sc.strategy, seed, sc.hidden_rate, sc.double_rate)
    trace = Simulation(k, sc.gadget, strat, seed, latency=sc.latency).run()
    return Outcome(sc, seed, k, trace, oracles.run_all(trace))


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class SweepResult:
    sweep: Sweep
    outcomes: list  # ordered by (fraction, seed, gadget)

    def rows(self) -> list:
        out = [o.row() for o in self.outcomes]
        # per-cell averages, one per (fraction, gadget)
        cells: dict = {}
        for o in self.outcomes:
            cells.setdefault((o.scenario.reconfig_label(), o.trace.gadget), []).append(o)
        for (frac, gadget), group in cells.items():
            n = len(group)
            k = group[0].schedule
            mean = lambda key: f"{sum(o.trace.metrics()[key] for o in group) / n:.3f}"
            out.append([self.sweep.name, "mean", gadget, k.n_epochs, k.epoch_len, frac,
                        mean("boot_msgs"), mean("fallbacks"), mean("violations")])
        return out

    def csv(self) -> str:
        return metrics_csv(self.rows())

    def ratio(self, fraction: float) -> Optional[float]:
        """Mean darso boot cost over mean dar boot cost at ``fraction``."""
        tot = {}
        for o in self.outcomes:
            if o.scenario.generator.reconfig_fraction == fraction:
                tot[o.trace.gadget] = tot.get(o.trace.gadget, 0) + o.trace.boot_messages()
        if not tot.get("dar"):
            return None
        return tot.get("darso", 0) / tot["dar"]


def run_sweep(sw: Sweep, base_seed: Optional[int] = None) -> SweepResult:
    """One simulation per (fraction, seed, gadget); every gadget sees the same schedule."""
    base = sw.seed if base_seed is None else base_seed
    tasks = []
    for frac in sw.fractions:
        gen = replace(sw.generator, reconfig_fraction=frac)
        for i in range(sw.seeds):
            for gadget in sw.gadgets:
                sc = Scenario(
                    name=sw.name,
                    gadget=gadget,
                    strategy=sw.strategy,
                    latency=sw.latency,
                    seed=base + i,
                    hidden_rate=sw.hidden_rate,
                    double_rate=sw.double_rate,
                    generator=gen,
                )
                tasks.append(sc)
    if not tasks:
        return SweepResult(sw, [])
    schedules: dict = {}
    for sc in tasks:
        key = (sc.generator, sc.seed)
        if key not in schedules:
            schedules[key] = sc.build_schedule()
    with ThreadPoolExecutor(max_workers=max(1, sw.workers)) as pool:
        outcomes = list(pool.map(lambda sc: execute(sc, schedule=schedules[(sc.generator, sc.seed)]), tasks))
    return SweepResult(sw, outcomes)


def needs_signoff(sc: Scenario) -> bool:
    if sc.schedule is not None:
        return sc.schedule.mode == SIGNOFF
    return sc.generator.mode == SIGNOFF
