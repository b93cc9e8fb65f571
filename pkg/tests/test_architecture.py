"""Event semantics at the architecture level, compatibility matching, and the
bounded enumerator checked against a naive trace-product oracle."""

import itertools

import pytest

from datactl.architecture import (
    Act1,
    Act2,
    AddFriends,
    ArchEvent,
    ArchPerms,
    ArchSemanticsError,
    Architecture,
    Delete,
    DeleteReq,
    EnumerationLimit,
    GroupAct,
    GroupHas,
    Own,
    Possess,
    PossessOneOf,
    UnAct1,
    UnGroupAct,
    Universe,
    Var,
    KeyVar,
    apply_arch_event,
    enc,
    enumerate_states,
    initial_state,
    instantiate_events,
    is_compatible,
    is_consistent,
    run_arch_trace,
)
from datactl.model import SP

X = Var(ow="alice", ds=frozenset({"alice", "bob"}), ident="d1")
X_PAT = Var(ow="?i", ds=frozenset({"alice", "bob"}), ident="d1")


def make_arch(extra=(), perms=ArchPerms()):
    activities = frozenset(
        {
            Own("alice", X),
            Possess(X),
            DeleteReq("?i", X),
            Delete(X, dd=3),
            Act1("?i", "fav", X),
        }
        | set(extra)
    )
    return Architecture(activities=activities, perms=perms)


PERMS = ArchPerms(
    can={"fav": frozenset({"alice", "bob"})},
    by={"fav": {"alice": frozenset({"bob"})}},
)


# --- term matching ----------------------------------------------------------


def test_var_pattern_matching():
    assert X_PAT.matches(X)
    assert not X.matches(Var(ow="bob", ds=X.ds, ident="d1"))
    assert Var(ow="?i", ds="?s", ident="?x").matches(X)
    assert not Var(ow="alice", ds=frozenset({"alice"}), ident="d1").matches(X)
    assert KeyVar("?i").matches(KeyVar("sp"))
    assert enc(X_PAT, KeyVar("sp")).matches(enc(X, KeyVar("sp")))
    assert not enc(X, KeyVar("sp")).matches(enc(X, KeyVar("alice")))


def test_consistency_rejects_two_concrete_owners():
    pa = Architecture(activities=frozenset({Own("alice", X), Own("bob", X)}))
    ok, witness = is_consistent(pa)
    assert not ok and witness == X
    ok, _ = is_consistent(Architecture(activities=frozenset({Own("alice", X), Own("?i", X)})))
    assert ok


# --- event semantics --------------------------------------------------------


def test_own_and_possess_bind_values():
    sigma = initial_state(make_arch(), ["alice", "bob"])
    sigma = apply_arch_event(sigma, ArchEvent("own", 1, user="alice", term=X, value="v"))
    assert sigma.users["alice"].value(X) == "v"
    assert sigma.users["bob"].value(X) is None
    sigma = apply_arch_event(sigma, ArchEvent("possess", 2, user=SP, term=X, value="v"))
    assert sigma.users[SP].value(X) == "v"


def test_groupact_edits_shared_can_table():
    sigma = initial_state(make_arch(), ["alice", "bob"])
    e = ArchEvent("groupact", 1, user="alice", tar="bob", action="fav")
    sigma = apply_arch_event(sigma, e)
    assert sigma.can_do("fav") == frozenset({"bob"})
    sigma = apply_arch_event(sigma, ArchEvent("ungroupact", 2, user="alice", tar="bob", action="fav"))
    assert sigma.can_do("fav") == frozenset()


def test_addfriends_edits_all_alias_actions_and_group():
    sigma = initial_state(make_arch(), ["alice", "bob"])
    e = ArchEvent("addfriends", 1, user="alice", tar="bob", actions=("fav", "link"))
    sigma = apply_arch_event(sigma, e)
    assert sigma.can_do("fav") == frozenset({"bob"})
    assert sigma.can_do("link") == frozenset({"bob"})
    assert "bob" in sigma.group
    sigma = apply_arch_event(sigma, ArchEvent("unfriends", 2, user="alice", tar="bob", actions=("fav", "link")))
    assert sigma.can_do("fav") == frozenset() and "bob" not in sigma.group


def test_act1_guard_and_receivers():
    sigma = initial_state(make_arch(perms=PERMS), ["alice", "bob"])
    # permitted performer: the by-set receives the value
    after = apply_arch_event(sigma, ArchEvent("act1", 1, user="alice", action="fav", term=X, value="v"))
    assert after.users["bob"].value(X) == "v"
    assert after.users["alice"].value(X) is None  # performer not in own by-set
    # performer outside the can-group: no binding changes
    blocked = apply_arch_event(
        initial_state(make_arch(), ["alice", "bob"]),
        ArchEvent("act1", 1, user="alice", action="fav", term=X, value="v"),
    )
    assert blocked.users["bob"].value(X) is None


def test_unact1_clears_receivers():
    sigma = initial_state(make_arch(perms=PERMS), ["alice", "bob"])
    sigma = apply_arch_event(sigma, ArchEvent("act1", 1, user="alice", action="fav", term=X, value="v"))
    sigma = apply_arch_event(sigma, ArchEvent("unact1", 2, user="alice", action="fav", term=X))
    assert sigma.users["bob"].value(X) is None


def test_act2_intersection_receivers():
    perms = ArchPerms(
        can={"link": frozenset({"alice"})},
        by={"link": {"alice": frozenset({"bob", "carol"})}},
        been={"link": {"bob": frozenset({"carol"})}},
    )
    pa = Architecture(activities=frozenset({Act2("?i", "?j", "link", X)}), perms=perms)
    sigma = initial_state(pa, ["alice", "bob", "carol"])
    sigma = apply_arch_event(
        sigma, ArchEvent("act2", 1, user="alice", tar="bob", action="link", term=X, value="v")
    )
    assert sigma.users["carol"].value(X) == "v"
    assert sigma.users["bob"].value(X) is None


def test_delete_clears_every_user():
    sigma = initial_state(make_arch(perms=PERMS), ["alice", "bob"])
    sigma = run_arch_trace(
        [
            ArchEvent("own", 1, user="alice", term=X, value="v"),
            ArchEvent("possess", 2, user=SP, term=X, value="v"),
            ArchEvent("delete", 3, user=SP, term=X),
        ],
        sigma,
    )
    assert all(st.value(X) is None for st in sigma.users.values())


def test_unknown_user_rejected_with_index():
    sigma = initial_state(make_arch(), ["alice"])
    with pytest.raises(ArchSemanticsError) as err:
        run_arch_trace([ArchEvent("own", 1, user="zed", term=X, value="v")], sigma)
    assert err.value.index == 1


# --- compatibility ----------------------------------------------------------


def test_compatible_trace_accepted():
    pa = make_arch(perms=PERMS)
    trace = [
        ArchEvent("own", 1, user="alice", term=X, value="v"),
        ArchEvent("possess", 2, user=SP, term=X, value="v"),
        ArchEvent("act1", 3, user="bob", action="fav", term=X, value="v"),
        ArchEvent("deletereq", 4, user="bob", term=X),
        ArchEvent("delete", 5, user=SP, term=X),
    ]
    ok, idx = is_compatible(trace, pa)
    assert ok and idx is None


def test_incompatible_event_located():
    pa = make_arch()
    trace = [
        ArchEvent("own", 1, user="alice", term=X, value="v"),
        ArchEvent("own", 2, user="bob", term=X, value="v"),  # Own is alice-only
    ]
    ok, idx = is_compatible(trace, pa)
    assert not ok and idx == 2


def test_possess_one_of_matches_any_branch():
    pa = Architecture(
        activities=frozenset({PossessOneOf(frozenset({X, enc(X, KeyVar("sp"))}))})
    )
    ok, _ = is_compatible([ArchEvent("possess", 1, user=SP, term=enc(X, KeyVar("sp")), value="v")], pa)
    assert ok
    ok, idx = is_compatible([ArchEvent("possess", 1, user=SP, term=KeyVar("sp"), value="v")], pa)
    assert not ok and idx == 1


# --- enumeration vs a naive oracle ------------------------------------------


def naive_reachable(pa, max_len, universe):
    """Oracle: fold every event sequence of length <= max_len explicitly."""
    init = initial_state(pa, universe.users)
    snapshots = {init.snapshot()}
    frontier = [init]
    for depth in range(1, max_len + 1):
        events = instantiate_events(pa, depth, universe)
        nxt = []
        for sigma in frontier:
            for e in events:
                try:
                    out = apply_arch_event(sigma, e)
                except ArchSemanticsError:
                    continue
                nxt.append(out)
        frontier = nxt
        snapshots.update(s.snapshot() for s in frontier)
    return snapshots


@pytest.mark.parametrize("max_len", [1, 2, 3])
def test_enumeration_matches_naive_oracle(max_len):
    pa = make_arch(extra=[GroupAct("alice", "?tar", "fav")], perms=PERMS)
    universe = Universe(users=("alice", "bob"))
    states = enumerate_states(pa, max_len, universe)
    assert {s.snapshot() for s in states} == naive_reachable(pa, max_len, universe)


def test_enumeration_limit_trips():
    pa = make_arch(perms=PERMS)
    with pytest.raises(EnumerationLimit):
        enumerate_states(pa, 4, Universe(users=("alice", "bob")), max_states=5)


def test_enumeration_rejects_inconsistent_architecture():
    pa = Architecture(activities=frozenset({Own("alice", X), Own("bob", X)}))
    with pytest.raises(ArchSemanticsError):
        enumerate_states(pa, 1, Universe(users=("alice", "bob")))


def test_instantiation_expands_patterns_over_universe():
    pa = Architecture(activities=frozenset({DeleteReq("?i", X)}))
    events = instantiate_events(pa, 1, Universe(users=("alice", "bob")))
    assert {e.user for e in events} == {"alice", "bob"}
