"""Core domain vocabulary: users, actions, data, and per-datum control policies.

Everything here is an immutable value; well-formedness is checked by the
``validate_*`` functions, which return error lists instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

# Distinguished principal for the service provider / data controller.
SP = "sp"

PREDEFINED_ACTIONS = frozenset(
    {
        "own",
        "store",
        "use",
        "deletereq",
        "delete",
        "groupact",
        "ungroupact",
        "grouphas",
        "ungrouphas",
    }
)

UNARY = "unary"
UNARY_REVOKE = "unary-revoke"
BINARY = "binary"
BINARY_REVOKE = "binary-revoke"

STORAGE_PLACES = frozenset({"clientloc", "sploc"})
STORAGE_FORMS = frozenset({("plain", "none"), ("enc", "spkey"), ("enc", "clkey")})
DELETION_MODES = frozenset({"man", "aut"})


@dataclass(frozen=True)
class ActionId:
    """A declared activity. ``revokes`` pairs an un-action with its base action."""

    name: str
    kind: str  # UNARY / UNARY_REVOKE / BINARY / BINARY_REVOKE
    revokes: str | None = None

    @property
    def is_binary(self) -> bool:
        return self.kind in (BINARY, BINARY_REVOKE)

    @property
    def is_revoke(self) -> bool:
        return self.kind in (UNARY_REVOKE, BINARY_REVOKE)


@dataclass(frozen=True)
class ActivitySets:
    """The four declared activity families; revocation is a bijection a1<->ua1, a2<->ua2."""

    a1: tuple[ActionId, ...] = ()
    ua1: tuple[ActionId, ...] = ()
    a2: tuple[ActionId, ...] = ()
    ua2: tuple[ActionId, ...] = ()

    def all_actions(self) -> tuple[ActionId, ...]:
        return self.a1 + self.ua1 + self.a2 + self.ua2

    def names(self) -> frozenset[str]:
        return frozenset(a.name for a in self.all_actions())

    def base_names(self) -> tuple[str, ...]:
        """Names of the non-revoke actions, declaration order (A1 then A2)."""
        return tuple(a.name for a in self.a1 + self.a2)

    def find(self, name: str) -> ActionId | None:
        for a in self.all_actions():
            if a.name == name:
                return a
        return None

    def base_of(self, name: str) -> str | None:
        """For an un-action, the action it revokes; for a base action, itself."""
        act = self.find(name)
        if act is None:
            return None
        return act.revokes if act.is_revoke else act.name


@dataclass(frozen=True)
class DataRef:
    """A governed datum.  The tuple (ow, ds, dtype, ident) is fixed for its lifetime."""

    ow: str
    ds: frozenset[str]
    dtype: str
    ident: str

    def __str__(self) -> str:
        return self.ident


@dataclass(frozen=True)
class DeletionSpec:
    """Deletion modes with their delays, at most one entry per mode."""

    modes: tuple[tuple[str, int], ...] = ()

    def delay(self, mode: str) -> int | None:
        for m, dd in self.modes:
            if m == mode:
                return dd
        return None

    @property
    def manual_delay(self) -> int | None:
        return self.delay("man")


@dataclass(frozen=True)
class StorageSpec:
    wh: frozenset[str] = frozenset()
    ho: frozenset[tuple[str, str]] = frozenset()

    def sp_readable(self) -> bool:
        """True when the stored form lets the provider read the datum."""
        return "sploc" in self.wh and (
            ("plain", "none") in self.ho or ("enc", "spkey") in self.ho
        )


def _freeze_grant(grant: Mapping[str, Iterable[str]]) -> dict[str, frozenset[str]]:
    return {k: frozenset(v) for k, v in grant.items()}


@dataclass(frozen=True)
class ActionPolicy:
    """Per-action permission groups: who may perform each action."""

    can: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def can_do(self, action: str) -> frozenset[str]:
        return self.can.get(action, frozenset())

    def grant(self, action: str, user: str) -> "ActionPolicy":
        can = dict(self.can)
        can[action] = self.can_do(action) | {user}
        return ActionPolicy(can)

    def revoke(self, action: str, user: str) -> "ActionPolicy":
        can = dict(self.can)
        can[action] = self.can_do(action) - {user}
        return ActionPolicy(can)


@dataclass(frozen=True)
class HasPolicy:
    """Who may come to have a datum, per performer / per target / via grouping.

    ``by`` and ``been`` are keyed by base action name, then by user; absent
    keys read as the empty set.  ``been`` only carries binary actions.
    """

    by: Mapping[str, Mapping[str, frozenset[str]]] = field(default_factory=dict)
    been: Mapping[str, Mapping[str, frozenset[str]]] = field(default_factory=dict)
    group: frozenset[str] = frozenset()

    def by_set(self, action: str, performer: str) -> frozenset[str]:
        return self.by.get(action, {}).get(performer, frozenset())

    def been_set(self, action: str, target: str) -> frozenset[str]:
        return self.been.get(action, {}).get(target, frozenset())

    def with_group(self, group: frozenset[str]) -> "HasPolicy":
        return HasPolicy(self.by, self.been, group)


@dataclass(frozen=True)
class Policy:
    """The per-datum control tuple: purposes, deletion, storage, action and has groups."""

    ap: frozenset[str] = frozenset()
    dm: DeletionSpec = DeletionSpec()
    storage: StorageSpec = StorageSpec()
    acp: ActionPolicy = ActionPolicy()
    has: HasPolicy = HasPolicy()

    @property
    def wh(self) -> frozenset[str]:
        return self.storage.wh

    @property
    def ho(self) -> frozenset[tuple[str, str]]:
        return self.storage.ho

    def grant_can(self, action: str, user: str) -> "Policy":
        return replace(self, acp=self.acp.grant(action, user))

    def revoke_can(self, action: str, user: str) -> "Policy":
        return replace(self, acp=self.acp.revoke(action, user))

    def grant_group(self, user: str) -> "Policy":
        return replace(self, has=self.has.with_group(self.has.group | {user}))

    def revoke_group(self, user: str) -> "Policy":
        return replace(self, has=self.has.with_group(self.has.group - {user}))


@dataclass(frozen=True)
class FriendAlias:
    """A shorthand pair (e.g. addfriends/unfriends) expanding to per-action
    group/ungroup events plus grouphas/ungrouphas."""

    add_name: str
    remove_name: str
    actions: tuple[str, ...]


@dataclass
class PolicyModel:
    """A parsed model: activity declarations plus the governed data and policies."""

    sets: ActivitySets
    data: dict[str, DataRef] = field(default_factory=dict)
    policies: dict[str, Policy] = field(default_factory=dict)  # keyed by DataRef.ident
    alias: FriendAlias | None = None

    def policy_of(self, dt: DataRef) -> Policy:
        return self.policies[dt.ident]

    def users(self) -> frozenset[str]:
        seen: set[str] = set()
        for dt in self.data.values():
            seen.add(dt.ow)
            seen.update(dt.ds)
        for pol in self.policies.values():
            for users in pol.acp.can.values():
                seen.update(users)
            for per_user in pol.has.by.values():
                seen.update(per_user)
                for granted in per_user.values():
                    seen.update(granted)
            for per_user in pol.has.been.values():
                seen.update(per_user)
                for granted in per_user.values():
                    seen.update(granted)
            seen.update(pol.has.group)
        seen.discard(SP)
        return frozenset(seen)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyModel):
            return NotImplemented
        return (
            self.sets == other.sets
            and self.data == other.data
            and self.policies == other.policies
            and self.alias == other.alias
        )


def validate_activity_sets(sets: ActivitySets) -> list[str]:
    """Structural check of the four activity families; empty list means well-formed."""
    errors: list[str] = []
    if len(sets.a1) != len(sets.ua1):
        errors.append(
            f"unary sets differ in size: |A1|={len(sets.a1)} but |UA1|={len(sets.ua1)}"
        )
    if len(sets.a2) != len(sets.ua2):
        errors.append(
            f"binary sets differ in size: |A2|={len(sets.a2)} but |UA2|={len(sets.ua2)}"
        )

    seen: set[str] = set()
    for act in sets.all_actions():
        if act.name in seen:
            errors.append(f"action {act.name!r} declared more than once")
        seen.add(act.name)
        if act.name in PREDEFINED_ACTIONS:
            errors.append(f"action {act.name!r} collides with a predefined action")

    expected = {
        UNARY: sets.a1,
        UNARY_REVOKE: sets.ua1,
        BINARY: sets.a2,
        BINARY_REVOKE: sets.ua2,
    }
    for kind, family in expected.items():
        for act in family:
            if act.kind != kind:
                errors.append(f"action {act.name!r} has kind {act.kind!r}, expected {kind!r}")

    # revokes must be a bijection between each base family and its revoke family
    for base_family, rev_family, label in (
        (sets.a1, sets.ua1, "A1"),
        (sets.a2, sets.ua2, "A2"),
    ):
        base_names = {a.name for a in base_family}
        targets: list[str] = []
        for rev in rev_family:
            if rev.revokes is None:
                errors.append(f"revoke action {rev.name!r} names no counterpart")
            elif rev.revokes not in base_names:
                errors.append(
                    f"revoke action {rev.name!r} targets {rev.revokes!r}, not in {label}"
                )
            else:
                targets.append(rev.revokes)
        if len(targets) != len(set(targets)):
            errors.append(f"two revoke actions target the same {label} action")
        for base in base_family:
            if base.name not in targets:
                errors.append(f"action {base.name!r} has no revoke counterpart")
    return errors


def validate_policy(pol: Policy, sets: ActivitySets) -> list[str]:
    """Check one policy against the declared activity sets."""
    errors: list[str] = []
    declared = sets.names() | PREDEFINED_ACTIONS
    base_declared = {a.name for a in sets.a1 + sets.a2}
    binary_declared = {a.name for a in sets.a2}

    for action in pol.acp.can:
        if action not in declared:
            errors.append(f"undeclared action {action!r} in can-groups")
    for action in pol.has.by:
        if action not in base_declared:
            errors.append(f"has-by group for {action!r}, which is not a declared base action")
    for action in pol.has.been:
        if action not in binary_declared:
            errors.append(f"has-been group for {action!r}, which is not a declared binary action")

    if not pol.storage.wh:
        errors.append("storage place set (where) is empty")
    if not pol.storage.ho:
        errors.append("storage form set (how) is empty")
    for place in pol.storage.wh:
        if place not in STORAGE_PLACES:
            errors.append(f"unknown storage place {place!r}")
    for form in pol.storage.ho:
        if form not in STORAGE_FORMS:
            errors.append(f"unknown storage form {form!r}")

    seen_modes: set[str] = set()
    for mode, dd in pol.dm.modes:
        if mode not in DELETION_MODES:
            errors.append(f"unknown deletion mode {mode!r}")
        if mode in seen_modes:
            errors.append(f"duplicate deletion mode {mode!r}")
        seen_modes.add(mode)
        if dd < 0:
            errors.append(f"negative deletion delay for mode {mode!r}")
    return errors


def validate_model(model: PolicyModel) -> list[str]:
    errors = validate_activity_sets(model.sets)
    idents: set[str] = set()
    for ident, dt in model.data.items():
        if ident != dt.ident:
            errors.append(f"datum key {ident!r} disagrees with its ident {dt.ident!r}")
        if dt.ident in idents:
            errors.append(f"duplicate datum id {dt.ident!r}")
        idents.add(dt.ident)
        if ident not in model.policies:
            errors.append(f"datum {ident!r} has no policy")
    for ident, pol in model.policies.items():
        prefix = f"policy for {ident!r}: "
        errors.extend(prefix + e for e in validate_policy(pol, model.sets))
    if model.alias is not None:
        for action in model.alias.actions:
            if model.sets.find(action) is None:
                errors.append(f"alias {model.alias.add_name!r} covers undeclared action {action!r}")
    return errors
