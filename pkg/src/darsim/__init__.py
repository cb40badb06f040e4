"""Simulator for consensus bootstrapping under sleepy nodes and changing membership."""

from .core import Envelope, LogEntry, LVote, MembershipChange, MVote, Payload, Tx
from .netsim import DAR, DARSO, ExecutionTrace, Simulation, run
from .schedule import Schedule, ScheduleConstraints, check_hm, check_srhm, gen_schedule

__all__ = [
    "DAR",
    "DARSO",
    "Envelope",
    "ExecutionTrace",
    "LogEntry",
    "LVote",
    "MVote",
    "MembershipChange",
    "Payload",
    "Schedule",
    "ScheduleConstraints",
    "Simulation",
    "Tx",
    "check_hm",
    "check_srhm",
    "gen_schedule",
    "run",
]
