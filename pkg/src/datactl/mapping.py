"""From policies to architectures: storage and permission mapping, event-driven
architecture derivation, trace images, correspondence checking, and the
comparison orders for policies and architectures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .architecture import (
    Act1,
    Act2,
    Activity,
    AddFriends,
    Architecture,
    ArchEvent,
    ArchPerms,
    Delete,
    DeleteReq,
    Func,
    GroupAct,
    GroupHas,
    KeyVar,
    Own,
    Possess,
    UnAct1,
    UnAct2,
    UnFriends,
    UnGroupAct,
    UnGroupHas,
    Var,
    enc,
    is_consistent,
    is_pattern,
)
from .logic import have_act1_set, have_act2_set, shared_lookup
from .model import SP, ActivitySets, DataRef, Policy, PolicyModel
from .semantics import (
    ACT1,
    ACT2,
    DELETE,
    DELETEREQ,
    GROUPACT,
    GROUPHAS,
    OWN,
    STORE,
    UNACT1,
    UNACT2,
    UNGROUPACT,
    UNGROUPHAS,
    USE,
    AbstractEvent,
)


class MappingError(Exception):
    pass


def var_of(dt: DataRef) -> Var:
    return Var(dt.ow, dt.ds, dt.ident)


# ---------------------------------------------------------------------------
# Storage and permission mapping


def map_storage(dt: DataRef, pol: Policy) -> frozenset[Activity]:
    """Initial-possession activities implied by the storage specification.

    Client-side storage keeps the datum with its owner regardless of form;
    provider-side storage adds provider possession of the datum, of its
    ciphertext under the provider key, or of the ciphertext under the owner
    key, depending on the form.
    """
    x = var_of(dt)
    out: set[Activity] = set()
    for place in pol.storage.wh:
        if place == "clientloc":
            out.add(Own(dt.ow, x))
            continue
        if place != "sploc":
            raise MappingError(f"unmapped storage place {place!r}")
        for form in pol.storage.ho:
            if form == ("plain", "none"):
                out.update({Own(dt.ow, x), Possess(x)})
            elif form == ("enc", "spkey"):
                key = KeyVar(SP)
                out.update({Own(dt.ow, x), Possess(enc(x, key)), Possess(key)})
            elif form == ("enc", "clkey"):
                key = KeyVar(dt.ow)
                out.update({Own(dt.ow, x), Own(dt.ow, key), Possess(enc(x, key))})
            else:
                raise MappingError(f"unmapped storage form {form!r}")
    return frozenset(out)


def map_permissions(dt: DataRef, pol: Policy) -> ArchPerms:
    """Copy the policy's permission groups into architecture tables.

    The same sets are granted on behalf of every user, so one shared table per
    action suffices.
    """
    return ArchPerms(
        can={a: s for a, s in pol.acp.can.items() if s},
        by={a: {u: s for u, s in per.items() if s} for a, per in pol.has.by.items()},
        been={a: {u: s for u, s in per.items() if s} for a, per in pol.has.been.items()},
        group=pol.has.group,
    )


def _merge_perms(acc: dict, perms: ArchPerms) -> None:
    for a, s in perms.can.items():
        acc["can"][a] = acc["can"].get(a, frozenset()) | s
    for a, per in perms.by.items():
        table = acc["by"].setdefault(a, {})
        for u, s in per.items():
            table[u] = table.get(u, frozenset()) | s
    for a, per in perms.been.items():
        table = acc["been"].setdefault(a, {})
        for u, s in per.items():
            table[u] = table.get(u, frozenset()) | s
    acc["group"] |= perms.group


# ---------------------------------------------------------------------------
# Event-driven derivation


@dataclass
class MappingContext:
    model: PolicyModel
    simplify_friends: bool = False

    def policy(self, dt: DataRef) -> Policy:
        try:
            return self.model.policy_of(dt)
        except KeyError:
            raise MappingError(f"no policy for datum {dt.ident!r}") from None


def _delete_delay(pol: Policy) -> int:
    dd = pol.dm.delay("man")
    if dd is None:
        dd = pol.dm.delay("aut")
    if dd is None:
        raise MappingError("delete event for a datum whose policy has no deletion mode")
    return dd


def _perms_for_action(pol: Policy, action: str, with_has: bool) -> ArchPerms:
    can = {action: pol.acp.can_do(action)} if pol.acp.can_do(action) else {}
    if not with_has:
        return ArchPerms(can=can)
    by = {action: pol.has.by.get(action, {})} if pol.has.by.get(action) else {}
    been = {action: pol.has.been.get(action, {})} if pol.has.been.get(action) else {}
    return ArchPerms(can=can, by=by, been=been)


def derive_architecture(
    events: Iterable[AbstractEvent],
    ctx: MappingContext,
) -> Architecture:
    """Union of the per-event activity and permission contributions.

    Idempotent over the event set.  With ``simplify_friends`` and a declared
    alias, the whole group/ungroup family collapses to the alias pair.
    """
    sets = ctx.model.sets
    activities: set[Activity] = set()
    acc = {"can": {}, "by": {}, "been": {}, "group": frozenset()}
    alias = ctx.model.alias if ctx.simplify_friends else None

    for e in events:
        pol = ctx.policy(e.dt)
        x = var_of(e.dt)
        base = e.action if e.action is None else (sets.base_of(e.action) or e.action)
        if e.kind == OWN:
            activities.add(Own(e.dt.ow, x))
        elif e.kind == STORE:
            activities.update(map_storage(e.dt, pol))
        elif e.kind == USE:
            continue  # usage leaves no architectural footprint
        elif e.kind == DELETEREQ:
            activities.add(DeleteReq(e.actor, x))
        elif e.kind == DELETE:
            activities.add(Delete(x, _delete_delay(pol)))
        elif e.kind == GROUPACT:
            if alias is not None:
                activities.add(AddFriends(e.actor, e.tar, alias.actions))
            else:
                activities.add(GroupAct(e.actor, e.tar, e.action))
            _merge_perms(acc, _perms_for_action(pol, e.action, with_has=False))
        elif e.kind == UNGROUPACT:
            if alias is not None:
                activities.add(UnFriends(e.actor, e.tar, alias.actions))
            else:
                activities.add(UnGroupAct(e.actor, e.tar, e.action))
        elif e.kind == GROUPHAS:
            if alias is not None:
                activities.add(AddFriends(e.actor, e.tar, alias.actions))
            else:
                activities.add(GroupHas(e.actor, e.tar))
            acc["group"] |= pol.has.group
        elif e.kind == UNGROUPHAS:
            if alias is not None:
                activities.add(UnFriends(e.actor, e.tar, alias.actions))
            else:
                activities.add(UnGroupHas(e.actor, e.tar))
        elif e.kind == ACT1:
            activities.add(Act1(e.actor, e.action, x))
            _merge_perms(acc, _perms_for_action(pol, e.action, with_has=False))
            _merge_perms(acc, _perms_for_action(pol, base, with_has=True))
        elif e.kind == ACT2:
            activities.add(Act2(e.actor, e.tar, e.action, x))
            _merge_perms(acc, _perms_for_action(pol, e.action, with_has=False))
            _merge_perms(acc, _perms_for_action(pol, base, with_has=True))
        elif e.kind == UNACT1:
            activities.add(UnAct1(e.actor, e.action, x))
            _merge_perms(acc, _perms_for_action(pol, e.action, with_has=False))
        elif e.kind == UNACT2:
            activities.add(UnAct2(e.actor, e.tar, e.action, x))
            _merge_perms(acc, _perms_for_action(pol, e.action, with_has=False))
        else:
            raise MappingError(f"unmapped event kind {e.kind!r}")

    pa = Architecture(
        activities=frozenset(activities),
        perms=ArchPerms(can=acc["can"], by=acc["by"], been=acc["been"], group=acc["group"]),
    )
    ok, witness = is_consistent(pa)
    if not ok:
        raise MappingError(f"derived architecture is inconsistent: {witness} has two owners")
    return pa


# ---------------------------------------------------------------------------
# Trace image


def image_trace(trace: Sequence[AbstractEvent], ctx: MappingContext) -> list[ArchEvent]:
    """The event-wise architecture image of a policy trace.

    ``use`` events have no architecture counterpart and are dropped; ``store``
    becomes one possession event per stored form.
    """
    sets = ctx.model.sets
    alias = ctx.model.alias if ctx.simplify_friends else None
    values: dict[str, str | None] = {}
    out: list[ArchEvent] = []
    for e in trace:
        pol = ctx.policy(e.dt)
        x = var_of(e.dt)
        if e.kind == OWN:
            values[e.dt.ident] = e.value
            out.append(ArchEvent("own", e.t, user=e.actor, term=x, value=e.value))
        elif e.kind == STORE:
            v = values.get(e.dt.ident)
            for act in sorted(map_storage(e.dt, pol), key=repr):
                if isinstance(act, Possess):
                    term = act.term
                    val = v if isinstance(term, Var) else f"enc({v})"
                    if isinstance(term, KeyVar):
                        val = f"key({term.owner})"
                    out.append(ArchEvent("possess", e.t, user=SP, term=term, value=val))
        elif e.kind == USE:
            continue
        elif e.kind == DELETEREQ:
            out.append(ArchEvent("deletereq", e.t, user=e.actor, term=x, value=values.get(e.dt.ident)))
        elif e.kind == DELETE:
            out.append(ArchEvent("delete", e.t, term=x, value=values.get(e.dt.ident)))
        elif e.kind in (GROUPACT, UNGROUPACT, GROUPHAS, UNGROUPHAS):
            if alias is not None:
                kind = "addfriends" if e.kind in (GROUPACT, GROUPHAS) else "unfriends"
                out.append(ArchEvent(kind, e.t, user=e.actor, tar=e.tar, actions=alias.actions))
            else:
                out.append(ArchEvent(e.kind, e.t, user=e.actor, tar=e.tar, action=e.action))
        elif e.kind in (ACT1, UNACT1):
            out.append(
                ArchEvent(e.kind, e.t, user=e.actor, action=e.action, term=x,
                          value=values.get(e.dt.ident))
            )
        elif e.kind in (ACT2, UNACT2):
            out.append(
                ArchEvent(e.kind, e.t, user=e.actor, tar=e.tar, action=e.action, term=x,
                          value=values.get(e.dt.ident))
            )
        else:
            raise MappingError(f"unmapped event kind {e.kind!r}")
    return out


# ---------------------------------------------------------------------------
# Correspondence


PROPS = ("P1", "P2", "P3", "P4", "P5", "P6")


@dataclass(frozen=True)
class CorrespondenceResult:
    prop: str
    user: str | None
    datum: str
    status: str  # holds / fails / inapplicable
    detail: str = ""

    def render(self) -> str:
        who = self.user if self.user is not None else "-"
        return f"{self.prop}\t{who}\t{self.datum}\t{self.status}\t{self.detail}"


@dataclass
class CorrespondenceReport:
    results: list[CorrespondenceResult] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(r.status != "fails" for r in self.results)

    def render(self) -> str:
        lines = [r.render() for r in self.results]
        lines.append("correspondence holds" if self.holds else "correspondence fails")
        return "\n".join(lines)


def _policy_c3i(j: str, dt: DataRef) -> bool:
    return j == dt.ow


def _policy_c3ii(
    j: str, pol: Policy, sets: ActivitySets, users: Iterable[str],
    extendable: frozenset[str] = frozenset(),
) -> bool:
    for act in sets.a1:
        for i in users:
            permitted = i in pol.acp.can_do(act.name) or (act.name, i) in extendable
            if permitted and j in pol.has.by_set(act.name, i):
                return True
    return False


def _policy_c3iii(
    j: str, pol: Policy, sets: ActivitySets, users: Iterable[str],
    extendable: frozenset[str] = frozenset(),
) -> bool:
    for act in sets.a2:
        for i in users:
            if i not in pol.acp.can_do(act.name) and (act.name, i) not in extendable:
                continue
            for tar in users:
                if j in pol.has.by_set(act.name, i) & pol.has.been_set(act.name, tar):
                    return True
    return False


def _arch_h1(pa: Architecture, j: str, x: Var) -> bool:
    from .logic import _h1_applicable

    return _h1_applicable(pa, j, x)


def _arch_h2(pa: Architecture, j: str, x: Var, users: Iterable[str]) -> bool:
    from .logic import _h2_applicable

    return _h2_applicable(pa, j, x, list(users))


def _arch_h3(pa: Architecture, j: str, x: Var, users: Iterable[str]) -> bool:
    from .logic import _h3_applicable

    return _h3_applicable(pa, j, x, list(users))


def _arch_h8(pa: Architecture, x: Var) -> bool:
    from .logic import _h8_conclusions

    return any(r.conclusion.var == x for r in _h8_conclusions(pa))


def _arch_h10(pa: Architecture, x: Var) -> bool:
    has_delete = any(d.term.matches(x) if isinstance(d.term, Var) else False
                     for d in pa.of_type(Delete))
    has_req = any(r.term.matches(x) if isinstance(r.term, Var) else False
                  for r in pa.of_type(DeleteReq))
    return has_delete and has_req


def _biconditional(
    prop: str, user: str | None, datum: str, policy_side: bool, arch_side: bool,
    policy_label: str, arch_label: str,
) -> CorrespondenceResult:
    if policy_side == arch_side:
        return CorrespondenceResult(prop, user, datum, "holds",
                                    "both apply" if policy_side else "neither applies")
    if policy_side:
        detail = f"{policy_label} applies but {arch_label} does not"
    else:
        detail = f"{arch_label} applies but {policy_label} does not"
    return CorrespondenceResult(prop, user, datum, "fails", detail)


def check_correspondence(
    ctx: MappingContext,
    pa: Architecture | None = None,
    trace: Sequence[AbstractEvent] | None = None,
) -> CorrespondenceReport:
    """Check the six policy/architecture correspondences per (user, datum).

    Applicability on both sides is judged over all possible traces, decided
    structurally from the permission machinery; a supplied trace widens the
    derived architecture when no explicit one is given.
    """
    model = ctx.model
    sets = model.sets
    users = sorted(model.users() | {SP})

    # When no explicit architecture is supplied, derive one per datum from the
    # events touching it.  Judging each datum against its own sub-architecture
    # keeps the shared permission tables from conflating same-named actions
    # granted differently by different data's policies.
    events = list(trace) if trace else []
    per_datum: dict[str, Architecture] = {}
    if pa is None:
        for ident in model.data:
            per_datum[ident] = derive_architecture(
                [e for e in events if e.dt.ident == ident], ctx
            )

    # Actions whose can-groups the supplied trace can extend at run time:
    # the policy side must judge them performable by anyone, matching the
    # grant activities the same events contribute on the architecture side.
    extendable: dict[str, set[tuple[str, str]]] = {}
    for e in trace or []:
        if e.kind == GROUPACT:
            base = sets.base_of(e.action) or e.action
            targets = users if is_pattern(e.tar) else [e.tar]
            for tar in targets:
                extendable.setdefault(e.dt.ident, set()).add((base, tar))

    report = CorrespondenceReport()
    for ident in sorted(model.data):
        dt = model.data[ident]
        pol = model.policy_of(dt)
        x = var_of(dt)
        ext = frozenset(extendable.get(ident, ()))
        pa_here = pa if pa is not None else per_datum[ident]

        for j in users:
            c3i = _policy_c3i(j, dt)
            c3ii = _policy_c3ii(j, pol, sets, users, ext)
            c3iii = _policy_c3iii(j, pol, sets, users, ext)
            h1 = _arch_h1(pa_here, j, x)
            h2 = _arch_h2(pa_here, j, x, users)
            h3 = _arch_h3(pa_here, j, x, users)
            h8_blocks = j == SP and _arch_h8(pa_here, x)
            h9 = not (h1 or h2 or h3 or h8_blocks)

            # The provider's storage-based possession is a holder clause of its
            # own; mirror it on the policy side so the biconditional stays
            # symmetric for the provider principal.
            sp_clause = j == SP and pol.storage.sp_readable()
            report.results.append(
                _biconditional("P1", j, ident, not (c3i or c3ii or c3iii or sp_clause), h9,
                               "no holder clause", "never-has rule")
            )
            report.results.append(
                _biconditional("P2", j, ident, c3i, h1, "ownership clause", "owner rule")
            )
            if sets.a1:
                report.results.append(
                    _biconditional("P3", j, ident, c3ii, h2,
                                   "unary-action clause", "unary-action rule")
                )
            else:
                report.results.append(
                    CorrespondenceResult("P3", j, ident, "inapplicable", "no unary actions declared")
                )
            if sets.a2:
                report.results.append(
                    _biconditional("P4", j, ident, c3iii, h3,
                                   "binary-action clause", "binary-action rule")
                )
            else:
                report.results.append(
                    CorrespondenceResult("P4", j, ident, "inapplicable", "no binary actions declared")
                )

        report.results.append(
            _biconditional("P5", None, ident, pol.storage.sp_readable(), _arch_h8(pa_here, x),
                           "provider-storage rule", "provider-possession rule")
        )
        if pol.dm.modes or pa.of_type(Delete):
            report.results.append(
                _biconditional("P6", None, ident, pol.dm.delay("man") is not None,
                               _arch_h10(pa_here, x), "deletion-delay rule", "deletion rule")
            )
        else:
            report.results.append(
                CorrespondenceResult("P6", None, ident, "inapplicable", "no deletion machinery")
            )
    return report


# ---------------------------------------------------------------------------
# Comparison orders


EQUAL = "equal"
STRICTER = "stricter"
LOOSER = "looser"
INCOMPARABLE = "incomparable"


@dataclass(frozen=True)
class PolicyComparison:
    overall: str
    components: Mapping[str, str]

    def render(self) -> str:
        lines = [f"{name}\t{rel}" for name, rel in sorted(self.components.items())]
        lines.append(f"overall\t{self.overall}")
        return "\n".join(lines)


def _set_relation(a: frozenset, b: frozenset) -> str:
    if a == b:
        return EQUAL
    if a <= b:
        return STRICTER
    if a >= b:
        return LOOSER
    return INCOMPARABLE


def _grant_relation(a: Mapping, b: Mapping) -> str:
    keys = set(a) | set(b)
    rels = {
        _set_relation(a.get(k, frozenset()), b.get(k, frozenset())) for k in keys
    }
    return _combine(rels)


def _nested_relation(a: Mapping, b: Mapping) -> str:
    keys = set(a) | set(b)
    rels = {_grant_relation(a.get(k, {}), b.get(k, {})) for k in keys}
    return _combine(rels)


def _combine(rels: set[str]) -> str:
    rels = rels - {EQUAL}
    if not rels:
        return EQUAL
    if rels == {STRICTER}:
        return STRICTER
    if rels == {LOOSER}:
        return LOOSER
    return INCOMPARABLE


def _dm_relation(a, b) -> str:
    """Shorter delays (and fewer modes) are stricter."""
    rels = set()
    for mode in ("man", "aut"):
        da, db = a.delay(mode), b.delay(mode)
        if da == db:
            rels.add(EQUAL)
        elif da is None:
            rels.add(STRICTER)
        elif db is None:
            rels.add(LOOSER)
        else:
            rels.add(STRICTER if da < db else LOOSER)
    return _combine(rels)


def compare_policies(p1: Policy, p2: Policy) -> PolicyComparison:
    components = {
        "ap": _set_relation(p1.ap, p2.ap),
        "dm": _dm_relation(p1.dm, p2.dm),
        "wh": _set_relation(p1.storage.wh, p2.storage.wh),
        "ho": _set_relation(p1.storage.ho, p2.storage.ho),
        "acp": _grant_relation(p1.acp.can, p2.acp.can),
        "has.by": _nested_relation(p1.has.by, p2.has.by),
        "has.been": _nested_relation(p1.has.been, p2.has.been),
        "has.group": _set_relation(p1.has.group, p2.has.group),
    }
    overall = _combine(set(components.values()))
    return PolicyComparison(overall=overall, components=components)


@dataclass(frozen=True)
class ArchComparison:
    overall: str  # equal / subset / superset / incomparable
    only_first: tuple[Activity, ...]
    only_second: tuple[Activity, ...]

    def render(self) -> str:
        lines = [f"- {a}" for a in self.only_first]
        lines += [f"+ {a}" for a in self.only_second]
        lines.append(f"overall\t{self.overall}")
        return "\n".join(lines)


def compare_architectures(pa1: Architecture, pa2: Architecture) -> ArchComparison:
    only1 = pa1.activities - pa2.activities
    only2 = pa2.activities - pa1.activities
    if not only1 and not only2:
        overall = EQUAL
    elif not only1:
        overall = "subset"
    elif not only2:
        overall = "superset"
    else:
        overall = INCOMPARABLE
    return ArchComparison(
        overall=overall,
        only_first=tuple(sorted(only1, key=repr)),
        only_second=tuple(sorted(only2, key=repr)),
    )
