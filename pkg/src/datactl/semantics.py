"""Abstract events, the per-datum state, and the trace transition function.

The state maps each datum to either an entry (time, value, performance record,
policy, holders) or to the undefined marker ``None``.  Transitions are pure:
``apply_event`` returns a fresh state and touches only the event's datum.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping

from .model import SP, ActivitySets, DataRef, Policy

# Event kinds.  ``act1``/``unact1``/``act2``/``unact2`` carry the declared
# action name; ``groupact``/``ungroupact`` carry the action whose can-group is
# being edited.
OWN = "own"
STORE = "store"
USE = "use"
DELETEREQ = "deletereq"
DELETE = "delete"
GROUPACT = "groupact"
UNGROUPACT = "ungroupact"
GROUPHAS = "grouphas"
UNGROUPHAS = "ungrouphas"
ACT1 = "act1"
UNACT1 = "unact1"
ACT2 = "act2"
UNACT2 = "unact2"

GROUP_KINDS = (GROUPACT, UNGROUPACT, GROUPHAS, UNGROUPHAS)
ACT_KINDS = (ACT1, UNACT1, ACT2, UNACT2)


class SemanticsError(Exception):
    """A trace event that the transition function rejects."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"event {index}: {message}")


@dataclass(frozen=True)
class AbstractEvent:
    kind: str
    t: int
    dt: DataRef
    actor: str | None = None  # the originating principal ("or" in surface syntax)
    tar: str | None = None
    action: str | None = None  # declared action for act*/group* kinds
    purposes: frozenset[str] | None = None  # use only
    value: str | None = None  # own only
    policy: Policy | None = None  # own only: the policy attached at input time

    @property
    def surface_name(self) -> str:
        """The event name as written in traces, e.g. ``grouplike`` or ``tag``."""
        if self.kind == GROUPACT:
            return f"group{self.action}"
        if self.kind == UNGROUPACT:
            return f"ungroup{self.action}"
        if self.kind in ACT_KINDS:
            return self.action  # type: ignore[return-value]
        return self.kind


@dataclass(frozen=True)
class EventTemplate:
    """One entry of the possible-event inventory for a datum."""

    name: str
    kind: str
    action: str | None = None
    binary: bool = False


@dataclass(frozen=True)
class ActBy:
    """Who performed / was targeted by each action on a datum during the run."""

    by: Mapping[str, frozenset[str]] = field(default_factory=dict)
    been: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def by_set(self, action: str) -> frozenset[str]:
        return self.by.get(action, frozenset())

    def been_set(self, action: str) -> frozenset[str]:
        return self.been.get(action, frozenset())

    def _update(self, which: str, action: str, user: str, add: bool) -> "ActBy":
        table = dict(getattr(self, which))
        current = table.get(action, frozenset())
        table[action] = current | {user} if add else current - {user}
        return replace(self, **{which: table})

    def add_by(self, action: str, user: str) -> "ActBy":
        return self._update("by", action, user, True)

    def remove_by(self, action: str, user: str) -> "ActBy":
        return self._update("by", action, user, False)

    def add_been(self, action: str, user: str) -> "ActBy":
        return self._update("been", action, user, True)

    def remove_been(self, action: str, user: str) -> "ActBy":
        return self._update("been", action, user, False)


@dataclass(frozen=True)
class StateEntry:
    t: int
    v: str | None
    actby: ActBy
    policy: Policy
    h_has: frozenset[str]


@dataclass(frozen=True)
class AbstractState:
    """Map from datum to entry; data absent from ``entries`` are undefined."""

    entries: Mapping[DataRef, StateEntry | None] = field(default_factory=dict)

    def get(self, dt: DataRef) -> StateEntry | None:
        return self.entries.get(dt)

    def put(self, dt: DataRef, entry: StateEntry | None) -> "AbstractState":
        entries = dict(self.entries)
        entries[dt] = entry
        return AbstractState(entries)


INITIAL_STATE = AbstractState()


def possible_events(sets: ActivitySets, dt: DataRef, pol: Policy) -> list[EventTemplate]:
    """The event inventory for one datum under the given activity sets.

    One template per predefined event, one group/ungroup pair per base action,
    and one template per declared action.  The group family covers the base
    actions only, matching the per-service instantiation of the inventory.
    """
    templates = [
        EventTemplate(OWN, OWN),
        EventTemplate(STORE, STORE),
        EventTemplate(USE, USE),
        EventTemplate(DELETEREQ, DELETEREQ),
        EventTemplate(DELETE, DELETE),
    ]
    for name in sets.base_names():
        templates.append(EventTemplate(f"group{name}", GROUPACT, action=name, binary=True))
        templates.append(EventTemplate(f"ungroup{name}", UNGROUPACT, action=name, binary=True))
    templates.append(EventTemplate(GROUPHAS, GROUPHAS, binary=True))
    templates.append(EventTemplate(UNGROUPHAS, UNGROUPHAS, binary=True))
    for act in sets.a1:
        templates.append(EventTemplate(act.name, ACT1, action=act.name))
    for act in sets.ua1:
        templates.append(EventTemplate(act.name, UNACT1, action=act.name))
    for act in sets.a2:
        templates.append(EventTemplate(act.name, ACT2, action=act.name, binary=True))
    for act in sets.ua2:
        templates.append(EventTemplate(act.name, UNACT2, action=act.name, binary=True))
    return templates


def _require_entry(state: AbstractState, e: AbstractEvent, j: int | None) -> StateEntry:
    entry = state.get(e.dt)
    if entry is None:
        raise SemanticsError(
            f"{e.surface_name} on undefined datum {e.dt.ident!r}", j
        )
    return entry


def apply_event(
    state: AbstractState,
    e: AbstractEvent,
    j: int | None = None,
    sets: ActivitySets | None = None,
) -> AbstractState:
    """One transition step.  ``j`` is the event's trace position; it is carried
    for fidelity with the transition signature but has no observable effect.

    ``sets`` is needed only for un-actions, to resolve the base action whose
    performance record and has-grants are consulted.
    """
    kind = e.kind

    if kind == OWN:
        if state.get(e.dt) is not None:
            raise SemanticsError(f"duplicate own for datum {e.dt.ident!r}", j)
        if e.policy is None:
            raise SemanticsError("own event carries no policy", j)
        entry = StateEntry(
            t=e.t,
            v=e.value,
            actby=ActBy(),
            policy=e.policy,
            h_has=frozenset({e.actor}),
        )
        return state.put(e.dt, entry)

    if kind == USE:
        _require_entry(state, e, j)
        return state  # usage never changes the state

    entry = _require_entry(state, e, j)
    pol = entry.policy

    if kind == STORE:
        if pol.storage.sp_readable():
            entry = replace(entry, t=e.t, h_has=entry.h_has | {SP})
            return state.put(e.dt, entry)
        return state

    if kind == DELETEREQ:
        if pol.dm.delay("man") is None:
            raise SemanticsError(
                f"deletereq for {e.dt.ident!r} but its policy allows no manual deletion", j
            )
        return state  # request itself leaves the state untouched

    if kind == DELETE:
        return state.put(e.dt, None)

    if kind == GROUPACT:
        entry = replace(
            entry,
            t=e.t,
            policy=pol.grant_can(e.action, e.tar),
            h_has=entry.h_has | {e.tar},
        )
        return state.put(e.dt, entry)

    if kind == UNGROUPACT:
        entry = replace(
            entry,
            t=e.t,
            policy=pol.revoke_can(e.action, e.tar),
            h_has=entry.h_has - {e.tar},
        )
        return state.put(e.dt, entry)

    if kind == GROUPHAS:
        entry = replace(entry, t=e.t, policy=pol.grant_group(e.tar), h_has=entry.h_has | {e.tar})
        return state.put(e.dt, entry)

    if kind == UNGROUPHAS:
        entry = replace(entry, t=e.t, policy=pol.revoke_group(e.tar), h_has=entry.h_has - {e.tar})
        return state.put(e.dt, entry)

    if kind in ACT_KINDS:
        base = e.action
        if kind in (UNACT1, UNACT2):
            if sets is not None:
                base = sets.base_of(e.action) or e.action
        if e.actor not in pol.acp.can_do(e.action):
            return state  # permission guard: unauthorized actions are no-ops

        if kind == ACT1:
            entry = replace(
                entry,
                t=e.t,
                actby=entry.actby.add_by(base, e.actor),
                h_has=entry.h_has | pol.has.by_set(base, e.actor),
            )
        elif kind == UNACT1:
            entry = replace(
                entry,
                t=e.t,
                actby=entry.actby.remove_by(base, e.actor),
                h_has=entry.h_has - pol.has.by_set(base, e.actor),
            )
        elif kind == ACT2:
            gained = pol.has.by_set(base, e.actor) & pol.has.been_set(base, e.tar)
            entry = replace(
                entry,
                t=e.t,
                actby=entry.actby.add_by(base, e.actor).add_been(base, e.tar),
                h_has=entry.h_has | gained,
            )
        else:  # UNACT2
            lost = pol.has.by_set(base, e.actor) & pol.has.been_set(base, e.tar)
            entry = replace(
                entry,
                t=e.t,
                actby=entry.actby.remove_by(base, e.actor).remove_been(base, e.tar),
                h_has=entry.h_has - lost,
            )
        return state.put(e.dt, entry)

    raise SemanticsError(f"unknown event kind {kind!r}", j)


def run_trace(
    trace: list[AbstractEvent], sets: ActivitySets | None = None
) -> AbstractState:
    """Left fold of ``apply_event`` from the all-undefined initial state."""
    state = INITIAL_STATE
    for j, e in enumerate(trace, start=1):
        try:
            state = apply_event(state, e, j, sets)
        except SemanticsError as err:
            if err.index is None:
                raise SemanticsError(str(err), j) from err
            raise
    return state


def state_at(
    trace: list[AbstractEvent], i: int, sets: ActivitySets | None = None
) -> AbstractState:
    """State after the first ``i`` events (prefix semantics)."""
    if not 0 <= i <= len(trace):
        raise IndexError(f"prefix length {i} out of range for trace of {len(trace)}")
    return run_trace(trace[:i], sets)


def iter_states(
    trace: list[AbstractEvent], sets: ActivitySets | None = None
) -> Iterator[AbstractState]:
    """All prefix states, starting with the initial state; len(trace)+1 items."""
    state = INITIAL_STATE
    yield state
    for j, e in enumerate(trace, start=1):
        state = apply_event(state, e, j, sets)
        yield state
