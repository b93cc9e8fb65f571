"""The architecture level: terms, activity relations, instantiated event
traces, the per-user state semantics, and bounded state-space enumeration.

User and index positions in activities may hold pattern variables (tokens
starting with ``?``); these match any concrete token during compatibility
checking and are instantiated over the finite universe during enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Union

from .model import SP

BOTTOM = None  # undefined variable value


def is_pattern(token: str) -> bool:
    return token.startswith("?")


def _match_token(pattern: str, concrete: str) -> bool:
    return is_pattern(pattern) or pattern == concrete


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Var:
    """A data variable, indexed by owner, subject set, and identifier.

    ``ds`` may be a concrete frozenset or a pattern token.
    """

    ow: str
    ds: Union[frozenset[str], str]
    ident: str

    def matches(self, other: "Var") -> bool:
        if not _match_token(self.ow, other.ow):
            return False
        if isinstance(self.ds, str):
            if not is_pattern(self.ds):
                return False
        elif self.ds != other.ds:
            return False
        return _match_token(self.ident, other.ident)


@dataclass(frozen=True)
class KeyVar:
    """A principal's key variable."""

    owner: str

    def matches(self, other: "KeyVar") -> bool:
        return _match_token(self.owner, other.owner)


@dataclass(frozen=True)
class Func:
    """A symbolic function application (enc, hash, sig) over terms."""

    name: str
    args: tuple["Term", ...]

    def matches(self, other: "Func") -> bool:
        return (
            self.name == other.name
            and len(self.args) == len(other.args)
            and all(match_term(a, b) for a, b in zip(self.args, other.args))
        )


Term = Union[Var, KeyVar, Func]


def match_term(pattern: Term, concrete: Term) -> bool:
    if type(pattern) is not type(concrete):
        return False
    return pattern.matches(concrete)  # type: ignore[union-attr]


def enc(payload: Term, key: Term) -> Func:
    return Func("enc", (payload, key))


# ---------------------------------------------------------------------------
# Activities


@dataclass(frozen=True)
class Own:
    user: str
    term: Term


@dataclass(frozen=True)
class Possess:
    term: Term  # possession is always the provider's


@dataclass(frozen=True)
class PossessOneOf:
    terms: frozenset[Term]


@dataclass(frozen=True)
class GroupAct:
    user: str
    tar: str
    action: str


@dataclass(frozen=True)
class UnGroupAct:
    user: str
    tar: str
    action: str


@dataclass(frozen=True)
class GroupHas:
    user: str
    tar: str


@dataclass(frozen=True)
class UnGroupHas:
    user: str
    tar: str


@dataclass(frozen=True)
class AddFriends:
    user: str
    tar: str
    actions: tuple[str, ...]


@dataclass(frozen=True)
class UnFriends:
    user: str
    tar: str
    actions: tuple[str, ...]


@dataclass(frozen=True)
class DeleteReq:
    user: str
    term: Term


@dataclass(frozen=True)
class Delete:
    term: Term
    dd: int  # executed by the provider within this delay


@dataclass(frozen=True)
class Act1:
    user: str
    action: str
    term: Term


@dataclass(frozen=True)
class UnAct1:
    user: str
    action: str
    term: Term


@dataclass(frozen=True)
class Act2:
    user: str
    tar: str
    action: str
    term: Term


@dataclass(frozen=True)
class UnAct2:
    user: str
    tar: str
    action: str
    term: Term


Activity = Union[
    Own,
    Possess,
    PossessOneOf,
    GroupAct,
    UnGroupAct,
    GroupHas,
    UnGroupHas,
    AddFriends,
    UnFriends,
    DeleteReq,
    Delete,
    Act1,
    UnAct1,
    Act2,
    UnAct2,
]


# ---------------------------------------------------------------------------
# Permission tables

Grant = Mapping[str, frozenset[str]]


@dataclass(frozen=True)
class ArchPerms:
    """Permission sets at the architecture level.

    The tables are shared by every granting user: the policy-to-architecture
    mapping copies one policy set to all granters, so the per-granter family
    collapses to a single table.
    """

    can: Mapping[str, frozenset[str]] = field(default_factory=dict)
    by: Mapping[str, Grant] = field(default_factory=dict)
    been: Mapping[str, Grant] = field(default_factory=dict)
    group: frozenset[str] = frozenset()

    def can_do(self, action: str) -> frozenset[str]:
        return self.can.get(action, frozenset())

    def by_set(self, action: str, performer: str) -> frozenset[str]:
        return self.by.get(action, {}).get(performer, frozenset())

    def been_set(self, action: str, target: str) -> frozenset[str]:
        return self.been.get(action, {}).get(target, frozenset())

    def is_empty(self) -> bool:
        return not (self.can or self.by or self.been or self.group)


@dataclass(frozen=True)
class Architecture:
    activities: frozenset[Activity] = frozenset()
    perms: ArchPerms = ArchPerms()

    def of_type(self, cls) -> list[Activity]:
        return [a for a in self.activities if isinstance(a, cls)]


def is_consistent(pa: Architecture) -> tuple[bool, Term | None]:
    """Each variable may be owned by at most one (concrete) user."""
    owners: dict[Term, set[str]] = {}
    for act in pa.of_type(Own):
        owners.setdefault(act.term, set()).add(act.user)
    for term, users in owners.items():
        concrete = {u for u in users if not is_pattern(u)}
        if len(concrete) > 1:
            return False, term
    return True, None


# ---------------------------------------------------------------------------
# Events and states


@dataclass(frozen=True)
class ArchEvent:
    """An instantiated activity with bound values at a point in time."""

    kind: str  # own/possess/groupact/ungroupact/grouphas/ungrouphas/
    #            deletereq/delete/act1/unact1/act2/unact2/addfriends/unfriends
    t: int
    user: str | None = None
    tar: str | None = None
    action: str | None = None
    term: Term | None = None
    value: str | None = None
    actions: tuple[str, ...] = ()  # addfriends/unfriends only


class ArchSemanticsError(Exception):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"event {index}: {message}")


@dataclass
class UserState:
    bindings: dict[Term, str | None] = field(default_factory=dict)
    t: int = 0

    def value(self, term: Term) -> str | None:
        return self.bindings.get(term, BOTTOM)

    def snapshot(self):
        items = tuple(sorted(((repr(k), v) for k, v in self.bindings.items() if v is not None)))
        return (items, self.t)


@dataclass
class GlobalState:
    """Per-user variable states plus the (shared) permission state."""

    users: dict[str, UserState | None]
    can: dict[str, frozenset[str]]
    by: dict[str, Grant]
    been: dict[str, Grant]
    group: frozenset[str]
    zby: dict[tuple[str, Term], frozenset[str]] = field(default_factory=dict)
    zbeen: dict[tuple[str, Term], frozenset[str]] = field(default_factory=dict)

    def clone(self) -> "GlobalState":
        users = {
            u: (None if st is None else UserState(dict(st.bindings), st.t))
            for u, st in self.users.items()
        }
        return GlobalState(
            users=users,
            can=dict(self.can),
            by=self.by,
            been=self.been,
            group=self.group,
            zby=dict(self.zby),
            zbeen=dict(self.zbeen),
        )

    def can_do(self, action: str) -> frozenset[str]:
        return self.can.get(action, frozenset())

    def by_set(self, action: str, performer: str) -> frozenset[str]:
        return self.by.get(action, {}).get(performer, frozenset())

    def been_set(self, action: str, target: str) -> frozenset[str]:
        return self.been.get(action, {}).get(target, frozenset())

    def snapshot(self):
        users = tuple(
            (u, None if st is None else st.snapshot()) for u, st in sorted(self.users.items())
        )
        can = tuple(sorted((a, tuple(sorted(s))) for a, s in self.can.items() if s))
        return (users, can, tuple(sorted(self.group)))


def initial_state(pa: Architecture, users: Iterable[str]) -> GlobalState:
    """All variables undefined; permission state seeded from the architecture's
    tables (absent tables mean all groups start empty)."""
    names = set(users) | {SP}
    return GlobalState(
        users={u: UserState() for u in sorted(names)},
        can={a: s for a, s in pa.perms.can.items()},
        by=pa.perms.by,
        been=pa.perms.been,
        group=pa.perms.group,
    )


def _involved(e: ArchEvent) -> list[str]:
    out = []
    if e.kind in ("own", "groupact", "ungroupact", "grouphas", "ungrouphas", "deletereq",
                  "act1", "unact1", "act2", "unact2", "addfriends", "unfriends"):
        out.append(e.user)
    if e.kind in ("possess", "delete"):
        out.append(SP)
    if e.tar is not None:
        out.append(e.tar)
    return out


def apply_arch_event(sigma: GlobalState, e: ArchEvent, index: int | None = None) -> GlobalState:
    """One step of the event semantics; returns a fresh global state."""
    for user in _involved(e):
        if user not in sigma.users:
            raise ArchSemanticsError(f"unknown user {user!r} in {e.kind} event", index)
        if sigma.users[user] is None:
            raise ArchSemanticsError(
                f"user {user!r} is in the terminated state; no later event may involve them",
                index,
            )

    out = sigma.clone()
    kind = e.kind

    if kind == "own":
        st = out.users[e.user]
        st.bindings[e.term] = e.value
        st.t = e.t
        return out

    if kind == "possess":
        st = out.users[SP]
        st.bindings[e.term] = e.value
        st.t = e.t
        return out

    if kind in ("groupact", "ungroupact"):
        current = out.can.get(e.action, frozenset())
        out.can[e.action] = (
            current | {e.tar} if kind == "groupact" else current - {e.tar}
        )
        out.users[e.user].t = e.t
        return out

    if kind in ("grouphas", "ungrouphas"):
        out.group = out.group | {e.tar} if kind == "grouphas" else out.group - {e.tar}
        out.users[e.user].t = e.t
        return out

    if kind in ("addfriends", "unfriends"):
        for action in e.actions:
            current = out.can.get(action, frozenset())
            out.can[action] = (
                current | {e.tar} if kind == "addfriends" else current - {e.tar}
            )
        out.group = out.group | {e.tar} if kind == "addfriends" else out.group - {e.tar}
        out.users[e.user].t = e.t
        return out

    if kind == "deletereq":
        return out  # the request leaves every state untouched

    if kind == "delete":
        for st in out.users.values():
            if st is None:
                continue
            st.bindings[e.term] = BOTTOM
            st.t = e.t
        return out

    if kind in ("act1", "unact1"):
        if e.user not in sigma.can_do(e.action):
            return out
        receivers = sigma.by_set(e.action, e.user)
        key = (e.action, e.term)
        if kind == "act1":
            out.zby[key] = out.zby.get(key, frozenset()) | {e.user}
        else:
            out.zby[key] = out.zby.get(key, frozenset()) - {e.user}
        for j in receivers:
            if j not in out.users or out.users[j] is None:
                continue
            st = out.users[j]
            st.bindings[e.term] = e.value if kind == "act1" else BOTTOM
            st.t = e.t
        return out

    if kind in ("act2", "unact2"):
        if e.user not in sigma.can_do(e.action):
            return out
        receivers = sigma.by_set(e.action, e.user) & sigma.been_set(e.action, e.tar)
        key = (e.action, e.term)
        if kind == "act2":
            out.zby[key] = out.zby.get(key, frozenset()) | {e.user}
            out.zbeen[key] = out.zbeen.get(key, frozenset()) | {e.tar}
        else:
            out.zby[key] = out.zby.get(key, frozenset()) - {e.user}
            out.zbeen[key] = out.zbeen.get(key, frozenset()) - {e.tar}
        for j in receivers:
            if j not in out.users or out.users[j] is None:
                continue
            st = out.users[j]
            st.bindings[e.term] = e.value if kind == "act2" else BOTTOM
            st.t = e.t
        return out

    raise ArchSemanticsError(f"unknown event kind {kind!r}", index)


def run_arch_trace(trace: list[ArchEvent], init: GlobalState) -> GlobalState:
    sigma = init
    for i, e in enumerate(trace, start=1):
        try:
            sigma = apply_arch_event(sigma, e, i)
        except ArchSemanticsError as err:
            if err.index is None:
                raise ArchSemanticsError(str(err), i) from err
            raise
    return sigma


# ---------------------------------------------------------------------------
# Compatibility


def _event_matches(e: ArchEvent, act: Activity) -> bool:
    if isinstance(act, Own):
        return e.kind == "own" and _match_token(act.user, e.user) and match_term(act.term, e.term)
    if isinstance(act, Possess):
        return e.kind == "possess" and match_term(act.term, e.term)
    if isinstance(act, PossessOneOf):
        return e.kind == "possess" and any(match_term(t, e.term) for t in act.terms)
    if isinstance(act, GroupAct):
        return (
            e.kind == "groupact"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
        )
    if isinstance(act, UnGroupAct):
        return (
            e.kind == "ungroupact"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
        )
    if isinstance(act, GroupHas):
        return e.kind == "grouphas" and _match_token(act.user, e.user) and _match_token(act.tar, e.tar)
    if isinstance(act, UnGroupHas):
        return e.kind == "ungrouphas" and _match_token(act.user, e.user) and _match_token(act.tar, e.tar)
    if isinstance(act, AddFriends):
        return (
            e.kind == "addfriends"
            and act.actions == e.actions
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
        )
    if isinstance(act, UnFriends):
        return (
            e.kind == "unfriends"
            and act.actions == e.actions
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
        )
    if isinstance(act, DeleteReq):
        return e.kind == "deletereq" and _match_token(act.user, e.user) and match_term(act.term, e.term)
    if isinstance(act, Delete):
        return e.kind == "delete" and match_term(act.term, e.term)
    if isinstance(act, Act1):
        return (
            e.kind == "act1"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and match_term(act.term, e.term)
        )
    if isinstance(act, UnAct1):
        return (
            e.kind == "unact1"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and match_term(act.term, e.term)
        )
    if isinstance(act, Act2):
        return (
            e.kind == "act2"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
            and match_term(act.term, e.term)
        )
    if isinstance(act, UnAct2):
        return (
            e.kind == "unact2"
            and act.action == e.action
            and _match_token(act.user, e.user)
            and _match_token(act.tar, e.tar)
            and match_term(act.term, e.term)
        )
    return False


def is_compatible(trace: list[ArchEvent], pa: Architecture) -> tuple[bool, int | None]:
    """True iff every event instantiates some activity of the architecture;
    otherwise the 1-based index of the first event that does not."""
    for i, e in enumerate(trace, start=1):
        if not any(_event_matches(e, act) for act in pa.activities):
            return False, i
    return True, None


# ---------------------------------------------------------------------------
# Bounded enumeration


class EnumerationLimit(Exception):
    """The state-space guard tripped."""


@dataclass(frozen=True)
class Universe:
    users: tuple[str, ...]
    values: tuple[str, ...] = ("v",)


def _instantiate_users(token: str, universe: Universe) -> list[str]:
    if is_pattern(token):
        return list(universe.users)
    return [token]


def _concrete_terms(term: Term, universe: Universe) -> list[Term]:
    # Pattern positions inside terms are instantiated over the universe's users;
    # identifiers stay symbolic (one variable per declared id pattern).
    if isinstance(term, Var):
        ows = _instantiate_users(term.ow, universe)
        return [replace(term, ow=ow) for ow in ows] if is_pattern(term.ow) else [term]
    return [term]


def instantiate_events(pa: Architecture, t: int, universe: Universe) -> list[ArchEvent]:
    """All concrete events at time ``t`` that instantiate some activity."""
    events: list[ArchEvent] = []
    for act in pa.activities:
        if isinstance(act, Own):
            for term in _concrete_terms(act.term, universe):
                users = _instantiate_users(act.user, universe)
                for u, v in itertools.product(users, universe.values):
                    events.append(ArchEvent("own", t, user=u, term=term, value=v))
        elif isinstance(act, Possess):
            for term in _concrete_terms(act.term, universe):
                for v in universe.values:
                    events.append(ArchEvent("possess", t, user=SP, term=term, value=v))
        elif isinstance(act, PossessOneOf):
            for term in act.terms:
                for concrete in _concrete_terms(term, universe):
                    for v in universe.values:
                        events.append(ArchEvent("possess", t, user=SP, term=concrete, value=v))
        elif isinstance(act, (GroupAct, UnGroupAct)):
            kind = "groupact" if isinstance(act, GroupAct) else "ungroupact"
            for u, tar in itertools.product(
                _instantiate_users(act.user, universe), _instantiate_users(act.tar, universe)
            ):
                events.append(ArchEvent(kind, t, user=u, tar=tar, action=act.action))
        elif isinstance(act, (GroupHas, UnGroupHas)):
            kind = "grouphas" if isinstance(act, GroupHas) else "ungrouphas"
            for u, tar in itertools.product(
                _instantiate_users(act.user, universe), _instantiate_users(act.tar, universe)
            ):
                events.append(ArchEvent(kind, t, user=u, tar=tar))
        elif isinstance(act, (AddFriends, UnFriends)):
            kind = "addfriends" if isinstance(act, AddFriends) else "unfriends"
            for u, tar in itertools.product(
                _instantiate_users(act.user, universe), _instantiate_users(act.tar, universe)
            ):
                events.append(ArchEvent(kind, t, user=u, tar=tar, actions=act.actions))
        elif isinstance(act, DeleteReq):
            for term in _concrete_terms(act.term, universe):
                for u, v in itertools.product(_instantiate_users(act.user, universe), universe.values):
                    events.append(ArchEvent("deletereq", t, user=u, term=term, value=v))
        elif isinstance(act, Delete):
            for term in _concrete_terms(act.term, universe):
                for v in universe.values:
                    events.append(ArchEvent("delete", t, user=SP, term=term, value=v))
        elif isinstance(act, (Act1, UnAct1)):
            kind = "act1" if isinstance(act, Act1) else "unact1"
            for term in _concrete_terms(act.term, universe):
                for u, v in itertools.product(_instantiate_users(act.user, universe), universe.values):
                    events.append(ArchEvent(kind, t, user=u, action=act.action, term=term, value=v))
        elif isinstance(act, (Act2, UnAct2)):
            kind = "act2" if isinstance(act, Act2) else "unact2"
            for term in _concrete_terms(act.term, universe):
                for u, tar, v in itertools.product(
                    _instantiate_users(act.user, universe),
                    _instantiate_users(act.tar, universe),
                    universe.values,
                ):
                    events.append(
                        ArchEvent(kind, t, user=u, tar=tar, action=act.action, term=term, value=v)
                    )
    return events


def enumerate_states(
    pa: Architecture,
    max_len: int,
    universe: Universe,
    max_states: int = 10**6,
) -> list[GlobalState]:
    """All states reachable by compatible traces of length <= ``max_len``,
    with event times fixed to their trace positions.

    Exact within the bound; raises :class:`EnumerationLimit` when the number
    of distinct states would exceed ``max_states``.
    """
    ok, witness = is_consistent(pa)
    if not ok:
        raise ArchSemanticsError(f"inconsistent architecture: {witness} has two owners")

    init = initial_state(pa, universe.users)
    seen = {init.snapshot(): init}
    frontier = [init]
    for depth in range(1, max_len + 1):
        events = instantiate_events(pa, depth, universe)
        next_frontier = []
        for sigma in frontier:
            for e in events:
                try:
                    nxt = apply_arch_event(sigma, e)
                except ArchSemanticsError:
                    continue
                key = nxt.snapshot()
                if key not in seen:
                    if len(seen) >= max_states:
                        raise EnumerationLimit(
                            f"more than {max_states} states within bound {max_len}"
                        )
                    seen[key] = nxt
                    next_frontier.append(nxt)
        frontier = next_frontier
        if not frontier:
            break
    return list(seen.values())
