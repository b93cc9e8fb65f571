"""Policy-to-architecture mapping: storage cases, derivation, trace images,
correspondence, and the comparison orders."""

import random

import pytest

from datactl.architecture import (
    Act1,
    Act2,
    AddFriends,
    ArchPerms,
    Architecture,
    Delete,
    DeleteReq,
    GroupAct,
    GroupHas,
    KeyVar,
    Own,
    Possess,
    Var,
    enc,
)
from datactl.mapping import (
    EQUAL,
    INCOMPARABLE,
    LOOSER,
    STRICTER,
    MappingContext,
    check_correspondence,
    compare_architectures,
    compare_policies,
    derive_architecture,
    image_trace,
    map_permissions,
    map_storage,
    var_of,
)
from datactl.model import (
    SP,
    ActionId,
    ActionPolicy,
    ActivitySets,
    BINARY,
    BINARY_REVOKE,
    DataRef,
    DeletionSpec,
    FriendAlias,
    HasPolicy,
    Policy,
    PolicyModel,
    StorageSpec,
    UNARY,
    UNARY_REVOKE,
)
from datactl.semantics import (
    ACT1,
    ACT2,
    DELETE,
    DELETEREQ,
    GROUPACT,
    GROUPHAS,
    OWN,
    STORE,
    USE,
    AbstractEvent,
)

from modelgen import full_events, random_model

DT = DataRef(ow="alice", ds=frozenset({"alice", "bob"}), dtype="Notes", ident="d1")
X = var_of(DT)


def policy(wh="sploc", how=("plain", "none"), **kw):
    defaults = dict(
        ap=frozenset({"billing"}),
        dm=DeletionSpec((("man", 5),)),
        storage=StorageSpec(wh=frozenset({wh}), ho=frozenset({how})),
        acp=ActionPolicy({"fav": frozenset({"bob"}), "delete": frozenset({"alice"})}),
        has=HasPolicy(by={"fav": {"bob": frozenset({"bob", "carol"})}}),
    )
    defaults.update(kw)
    return Policy(**defaults)


SETS = ActivitySets(
    a1=(ActionId("fav", UNARY),),
    ua1=(ActionId("unfav", UNARY_REVOKE, revokes="fav"),),
)


def make_model(pol=None, alias=None, sets=SETS):
    model = PolicyModel(sets=sets, alias=alias)
    model.data["d1"] = DT
    model.policies["d1"] = pol or policy()
    return model


# --- the four storage cases -------------------------------------------------


def test_storage_client_side():
    assert map_storage(DT, policy(wh="clientloc")) == frozenset({Own("alice", X)})


def test_storage_provider_plain():
    assert map_storage(DT, policy()) == frozenset({Own("alice", X), Possess(X)})


def test_storage_provider_key_encrypted():
    out = map_storage(DT, policy(how=("enc", "spkey")))
    assert out == frozenset(
        {Own("alice", X), Possess(enc(X, KeyVar(SP))), Possess(KeyVar(SP))}
    )


def test_storage_owner_key_encrypted():
    out = map_storage(DT, policy(how=("enc", "clkey")))
    assert out == frozenset(
        {Own("alice", X), Own("alice", KeyVar("alice")), Possess(enc(X, KeyVar("alice")))}
    )


def test_map_permissions_drops_empty_sets():
    pol = policy(acp=ActionPolicy({"fav": frozenset(), "delete": frozenset({"alice"})}))
    perms = map_permissions(DT, pol)
    assert "fav" not in perms.can and perms.can_do("delete") == frozenset({"alice"})


# --- event-driven derivation ------------------------------------------------


def base_events():
    return [
        AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=policy()),
        AbstractEvent(kind=STORE, t=2, dt=DT),
        AbstractEvent(kind=USE, t=3, dt=DT, purposes=frozenset({"billing"})),
        AbstractEvent(kind=ACT1, t=4, dt=DT, actor="bob", action="fav"),
        AbstractEvent(kind=DELETEREQ, t=5, dt=DT, actor="?i"),
        AbstractEvent(kind=DELETE, t=6, dt=DT),
    ]


def test_derivation_activity_set():
    pa = derive_architecture(base_events(), MappingContext(make_model()))
    assert pa.activities == frozenset(
        {
            Own("alice", X),
            Possess(X),
            Act1("bob", "fav", X),
            DeleteReq("?i", X),
            Delete(X, 5),
        }
    )
    assert pa.perms.can_do("fav") == frozenset({"bob"})
    assert pa.perms.by_set("fav", "bob") == frozenset({"bob", "carol"})


def test_derivation_is_idempotent_over_events():
    ctx = MappingContext(make_model())
    once = derive_architecture(base_events(), ctx)
    twice = derive_architecture(base_events() + base_events(), ctx)
    assert once == twice


def test_use_leaves_no_footprint():
    ctx = MappingContext(make_model())
    with_use = derive_architecture(base_events(), ctx)
    without = derive_architecture(
        [e for e in base_events() if e.kind != USE], ctx
    )
    assert with_use == without


def test_group_events_with_and_without_alias():
    events = [
        AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=policy()),
        AbstractEvent(kind=GROUPACT, t=2, dt=DT, actor="?i", tar="?tar", action="fav"),
        AbstractEvent(kind=GROUPHAS, t=3, dt=DT, actor="?i", tar="?tar"),
    ]
    plain = derive_architecture(events, MappingContext(make_model()))
    assert GroupAct("?i", "?tar", "fav") in plain.activities
    assert GroupHas("?i", "?tar") in plain.activities

    alias = FriendAlias("addfriends", "unfriends", ("fav",))
    simplified = derive_architecture(
        events, MappingContext(make_model(alias=alias), simplify_friends=True)
    )
    assert AddFriends("?i", "?tar", ("fav",)) in simplified.activities
    assert not simplified.of_type(GroupAct) and not simplified.of_type(GroupHas)


def test_delete_delay_falls_back_to_automatic_mode():
    pol = policy(dm=DeletionSpec((("aut", 9),)))
    events = [
        AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=pol),
        AbstractEvent(kind=DELETE, t=2, dt=DT),
    ]
    pa = derive_architecture(events, MappingContext(make_model(pol=pol)))
    assert Delete(X, 9) in pa.activities


# --- trace image ------------------------------------------------------------


def test_image_trace_shapes():
    ctx = MappingContext(make_model())
    image = image_trace(base_events(), ctx)
    kinds = [e.kind for e in image]
    assert kinds == ["own", "possess", "act1", "deletereq", "delete"]
    own = image[0]
    assert own.term == X and own.value == "v"
    possess = image[1]
    assert possess.user == SP and possess.value == "v"


def test_image_trace_encrypted_store():
    pol = policy(how=("enc", "spkey"))
    model = make_model(pol=pol)
    events = [
        AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=pol),
        AbstractEvent(kind=STORE, t=2, dt=DT),
    ]
    image = image_trace(events, MappingContext(model))
    terms = {e.term for e in image if e.kind == "possess"}
    assert terms == {enc(X, KeyVar(SP)), KeyVar(SP)}


def test_image_trace_alias_collapse():
    alias = FriendAlias("addfriends", "unfriends", ("fav",))
    model = make_model(alias=alias)
    events = [
        AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=policy()),
        AbstractEvent(kind=GROUPACT, t=2, dt=DT, actor="alice", tar="bob", action="fav"),
        AbstractEvent(kind=GROUPHAS, t=2, dt=DT, actor="alice", tar="bob"),
    ]
    image = image_trace(events, MappingContext(model, simplify_friends=True))
    assert [e.kind for e in image] == ["own", "addfriends", "addfriends"]
    assert image[1].actions == ("fav",)


# --- correspondence ---------------------------------------------------------


def test_correspondence_holds_for_derived_architecture():
    ctx = MappingContext(make_model())
    report = check_correspondence(ctx, trace=base_events())
    assert report.holds, report.render()


def test_correspondence_flags_extra_possession():
    """A provider possession the policy's storage rule does not license."""
    pol = policy(wh="clientloc")
    ctx = MappingContext(make_model(pol=pol))
    events = [AbstractEvent(kind=OWN, t=1, dt=DT, actor="alice", value="v", policy=pol)]
    pa = derive_architecture(events, ctx)
    tampered = Architecture(activities=pa.activities | {Possess(X)}, perms=pa.perms)
    report = check_correspondence(ctx, pa=tampered, trace=events)
    failed = {r.prop for r in report.results if r.status == "fails"}
    assert "P5" in failed


def test_correspondence_flags_missing_owner():
    ctx = MappingContext(make_model())
    events = base_events()
    pa = derive_architecture(events, ctx)
    tampered = Architecture(
        activities=frozenset(a for a in pa.activities if not isinstance(a, Own)),
        perms=pa.perms,
    )
    report = check_correspondence(ctx, pa=tampered, trace=events)
    failed = {(r.prop, r.user) for r in report.results if r.status == "fails"}
    assert ("P2", "alice") in failed


def test_correspondence_flags_dropped_deletion():
    ctx = MappingContext(make_model())
    events = base_events()
    pa = derive_architecture(events, ctx)
    tampered = Architecture(
        activities=frozenset(a for a in pa.activities if not isinstance(a, Delete)),
        perms=pa.perms,
    )
    report = check_correspondence(ctx, pa=tampered, trace=events)
    failed = {r.prop for r in report.results if r.status == "fails"}
    assert "P6" in failed


def test_correspondence_generated_round_trips():
    """The architecture derived from a model's full event inventory satisfies
    every applicable biconditional."""
    for seed in range(15):
        rng = random.Random(seed)
        model = random_model(rng)
        report = check_correspondence(MappingContext(model), trace=full_events(model))
        assert report.holds, f"seed {seed}: {report.render()}"


# --- comparison orders ------------------------------------------------------


def test_compare_policies_reflexive():
    p = policy()
    assert compare_policies(p, p).overall == EQUAL


def test_compare_policies_subset_is_stricter():
    narrow = policy(ap=frozenset({"billing"}))
    wide = policy(ap=frozenset({"billing", "research"}))
    cmp = compare_policies(narrow, wide)
    assert cmp.components["ap"] == STRICTER and cmp.overall == STRICTER
    assert compare_policies(wide, narrow).overall == LOOSER


def test_compare_policies_shorter_delay_is_stricter():
    fast = policy(dm=DeletionSpec((("man", 2),)))
    slow = policy(dm=DeletionSpec((("man", 8),)))
    assert compare_policies(fast, slow).components["dm"] == STRICTER
    absent = policy(dm=DeletionSpec())
    assert compare_policies(absent, fast).components["dm"] == STRICTER


def test_compare_policies_incomparable():
    a = policy(ap=frozenset({"billing"}),
               acp=ActionPolicy({"fav": frozenset({"bob", "carol"})}))
    b = policy(ap=frozenset({"billing", "research"}),
               acp=ActionPolicy({"fav": frozenset({"bob"})}))
    assert compare_policies(a, b).overall == INCOMPARABLE


def test_compare_policies_order_properties():
    """Antisymmetry and transitivity of the strictness order over random pairs."""
    rng = random.Random(7)
    pool = [random_model(rng) for _ in range(12)]
    policies = [pol for m in pool for pol in m.policies.values()]
    for p1 in policies[:8]:
        for p2 in policies[:8]:
            r12 = compare_policies(p1, p2).overall
            r21 = compare_policies(p2, p1).overall
            if r12 == STRICTER:
                assert r21 == LOOSER
            if r12 == EQUAL:
                assert r21 == EQUAL
            for p3 in policies[:8]:
                if (
                    r12 == STRICTER
                    and compare_policies(p2, p3).overall == STRICTER
                ):
                    assert compare_policies(p1, p3).overall == STRICTER


def test_compare_architectures_relations():
    small = Architecture(activities=frozenset({Own("alice", X)}))
    big = Architecture(activities=frozenset({Own("alice", X), Possess(X)}))
    other = Architecture(activities=frozenset({Possess(KeyVar(SP))}))
    assert compare_architectures(small, small).overall == EQUAL
    assert compare_architectures(small, big).overall == "subset"
    assert compare_architectures(big, small).overall == "superset"
    cmp = compare_architectures(small, other)
    assert cmp.overall == INCOMPARABLE
    assert cmp.only_first == (Own("alice", X),)
    assert cmp.only_second == (Possess(KeyVar(SP)),)
