"""Trace audit against the five compliance rules C1-C5.

Violations are collected exhaustively; a trace is compliant iff the list is
empty.  Rules are evaluated over the precomputed prefix states, so the five
checks are independent of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import SP, ActivitySets, DataRef
from .semantics import (
    ACT1,
    ACT2,
    DELETE,
    DELETEREQ,
    UNACT1,
    UNACT2,
    USE,
    AbstractEvent,
    AbstractState,
    SemanticsError,
    iter_states,
)

RULES = ("C1", "C2", "C3", "C4", "C5")

# Events C2 quantifies over: the declared actions plus delete.
_C2_KINDS = (ACT1, UNACT1, ACT2, UNACT2, DELETE)


@dataclass(frozen=True)
class Violation:
    rule: str
    datum: DataRef
    detail: str
    event_index: int | None = None  # 1-based; None for state-level C3/C4 findings

    def render(self) -> str:
        idx = "-" if self.event_index is None else str(self.event_index)
        return f"{self.rule}\t{idx}\t{self.datum.ident}\t{self.detail}"


@dataclass
class ComplianceReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def compliant(self) -> bool:
        return not self.violations

    def render(self) -> str:
        lines = [v.render() for v in self.violations]
        lines += [f"warning\t-\t-\t{w}" for w in self.warnings]
        verdict = "compliant" if self.compliant else f"non-compliant ({len(self.violations)} violations)"
        lines.append(verdict)
        return "\n".join(lines)


def _states(trace: list[AbstractEvent], sets: ActivitySets | None) -> list[AbstractState]:
    return list(iter_states(trace, sets))


def _check_c1(trace, states, sets) -> list[Violation]:
    out = []
    for i, e in enumerate(trace, start=1):
        if e.kind != USE:
            continue
        entry = states[i - 1].get(e.dt)
        if entry is None:
            continue
        extra = (e.purposes or frozenset()) - entry.policy.ap
        for purpose in sorted(extra):
            out.append(
                Violation("C1", e.dt, f"purpose {purpose!r} not authorized", event_index=i)
            )
    return out


def _check_c2(trace, states, sets, warnings: list[str]) -> list[Violation]:
    out = []
    for i, e in enumerate(trace, start=1):
        if e.kind not in _C2_KINDS:
            continue
        entry = states[i - 1].get(e.dt)
        if entry is None:
            continue
        if e.kind == DELETE:
            # A delete event carries no performer; attribute it to the most
            # recent deletion request for the same datum when one exists.
            initiator = None
            for prev in reversed(trace[: i - 1]):
                if prev.kind == DELETEREQ and prev.dt == e.dt:
                    initiator = prev.actor
                    break
            if initiator is None:
                warnings.append(
                    f"C2 skipped for delete at event {i}: no preceding deletereq names a performer"
                )
                continue
            actor, action = initiator, "delete"
        else:
            actor, action = e.actor, e.action
        if actor not in entry.policy.acp.can_do(action):
            out.append(
                Violation(
                    "C2",
                    e.dt,
                    f"{actor!r} not permitted to perform {action!r}",
                    event_index=i,
                )
            )
    return out


def _act_additions(trace, states, sets):
    """For each datum, who entered the holder set through a declared action,
    as (event index, time, user) records split by unary/binary family."""
    via_act1: dict[DataRef, list[tuple[int, int, str]]] = {}
    via_act2: dict[DataRef, list[tuple[int, int, str]]] = {}
    for i, e in enumerate(trace, start=1):
        if e.kind not in (ACT1, ACT2):
            continue
        entry = states[i - 1].get(e.dt)
        if entry is None:
            continue
        pol = entry.policy
        if e.actor not in pol.acp.can_do(e.action):
            continue  # guard failed, state unchanged, nobody entered
        base = e.action if sets is None else (sets.base_of(e.action) or e.action)
        if e.kind == ACT1:
            gained = pol.has.by_set(base, e.actor)
            bucket = via_act1
        else:
            gained = pol.has.by_set(base, e.actor) & pol.has.been_set(base, e.tar)
            bucket = via_act2
        for user in gained:
            bucket.setdefault(e.dt, []).append((i, e.t, user))
    return via_act1, via_act2


def _check_c3(trace, states, sets) -> list[Violation]:
    """Every holder must be the owner or have entered through a declared action
    at a position no later than the state under inspection.

    The provider's possession is governed by C4 and is not re-judged here.
    """
    via_act1, via_act2 = _act_additions(trace, states, sets)
    out = []
    flagged: set[tuple[DataRef, str]] = set()
    for i in range(1, len(states)):
        state = states[i]
        for dt, entry in state.entries.items():
            if entry is None:
                continue
            for tar in sorted(entry.h_has - {SP}):
                if tar == dt.ow:
                    continue
                sanctioned = any(
                    k <= i and t_prime <= entry.t and user == tar
                    for bucket in (via_act1, via_act2)
                    for (k, t_prime, user) in bucket.get(dt, [])
                )
                if sanctioned or (dt, tar) in flagged:
                    continue
                flagged.add((dt, tar))
                out.append(
                    Violation(
                        "C3",
                        dt,
                        f"{tar!r} holds the datum without ownership or a sanctioning action",
                        event_index=i,
                    )
                )
    return out


def _check_c4(trace, states, sets) -> list[Violation]:
    out = []
    flagged: set[DataRef] = set()
    for i in range(1, len(states)):
        for dt, entry in states[i].entries.items():
            if entry is None or dt in flagged:
                continue
            if SP in entry.h_has and not entry.policy.storage.sp_readable():
                flagged.add(dt)
                out.append(
                    Violation(
                        "C4",
                        dt,
                        "service provider holds the datum but the policy grants no"
                        " readable storage at the provider",
                        event_index=i,
                    )
                )
    return out


def _check_c5(trace, states, sets) -> list[Violation]:
    out = []
    for i, e in enumerate(trace, start=1):
        if e.kind != DELETEREQ:
            continue
        entry = states[i - 1].get(e.dt)
        if entry is None:
            continue
        dd = entry.policy.dm.delay("man")
        if dd is None:
            continue  # semantics would have rejected the request already
        deadline = e.t + dd
        honoured = any(
            other.kind == DELETE and other.dt == e.dt and e.t < other.t <= deadline
            for other in trace
        )
        if not honoured:
            out.append(
                Violation(
                    "C5",
                    e.dt,
                    f"no deletion in ({e.t}, {deadline}] after the request at t={e.t}",
                    event_index=i,
                )
            )
    return out


_RULE_CHECKS = {
    "C1": _check_c1,
    "C3": _check_c3,
    "C4": _check_c4,
    "C5": _check_c5,
}


def check_rule(
    rule: str, trace: list[AbstractEvent], sets: ActivitySets | None = None
) -> list[Violation]:
    """Evaluate a single rule; raises on an unknown rule id or a broken trace."""
    if rule not in RULES:
        raise ValueError(f"unknown compliance rule {rule!r}")
    states = _states(trace, sets)
    if rule == "C2":
        return _check_c2(trace, states, sets, warnings=[])
    return _RULE_CHECKS[rule](trace, states, sets)


def check_trace(
    trace: list[AbstractEvent], sets: ActivitySets | None = None
) -> ComplianceReport:
    """Full audit: all five rules, violations ordered by rule then position."""
    report = ComplianceReport()
    try:
        states = _states(trace, sets)
    except SemanticsError as err:
        raise SemanticsError(f"trace does not execute: {err}", err.index) from err
    report.violations.extend(_check_c1(trace, states, sets))
    report.violations.extend(_check_c2(trace, states, sets, report.warnings))
    report.violations.extend(_check_c3(trace, states, sets))
    report.violations.extend(_check_c4(trace, states, sets))
    report.violations.extend(_check_c5(trace, states, sets))
    return report
