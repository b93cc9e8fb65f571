"""Property tests for the cross-cutting invariants: prefix coherence, the
frame property, guard fall-through, group-event inverses, have-set
monotonicity, enumeration monotonicity, and serialization round trips."""

import random

from hypothesis import given, settings, strategies as st

from datactl.architecture import Act1, Architecture, ArchPerms, Own, Universe, Var, enumerate_states
from datactl.dsl import parse_policy, parse_trace, serialize_policy, serialize_trace
from datactl.logic import have_act1_set, have_act2_set, shared_lookup
from datactl.semantics import (
    ACT1,
    ACT2,
    GROUPACT,
    OWN,
    UNGROUPACT,
    AbstractEvent,
    apply_event,
    iter_states,
    run_trace,
    state_at,
)

from modelgen import compliant_trace, random_model

seeds = st.integers(min_value=0, max_value=2**32 - 1)

USERS = st.sampled_from(("u1", "u2", "u3", "u4"))
USER_SETS = st.frozensets(USERS, max_size=4)
GRANTS = st.dictionaries(USERS, USER_SETS, max_size=4)


def _model_and_trace(seed):
    rng = random.Random(seed)
    model = random_model(rng)
    return model, compliant_trace(model, rng)


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_prefix_coherence(seed):
    model, trace = _model_and_trace(seed)
    states = list(iter_states(trace, model.sets))
    for i, e in enumerate(trace):
        assert states[i + 1] == apply_event(states[i], e, i + 1, model.sets)
        assert state_at(trace, i, model.sets) == states[i]
    assert state_at(trace, len(trace), model.sets) == run_trace(trace, model.sets)


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_frame_property(seed):
    """Each step touches only the event's datum; datum identity never drifts."""
    model, trace = _model_and_trace(seed)
    states = list(iter_states(trace, model.sets))
    for i, e in enumerate(trace):
        before, after = states[i], states[i + 1]
        for dt in set(before.entries) | set(after.entries):
            if dt != e.dt:
                assert before.get(dt) == after.get(dt)
    for state in states:
        for dt, entry in state.entries.items():
            if entry is not None:
                assert dt == model.data[dt.ident]


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_guard_fallthrough(seed):
    """Actions by a performer outside the can-group are identities."""
    model, trace = _model_and_trace(seed)
    state = run_trace(trace, model.sets)
    for ident, dt in model.data.items():
        if state.get(dt) is None:
            continue
        for act in model.sets.all_actions():
            kind = ACT2 if act.is_binary else ACT1
            tar = dt.ow if act.is_binary else None
            e = AbstractEvent(kind=kind, t=10_000, dt=dt, actor="stranger",
                              tar=tar, action=act.name)
            assert apply_event(state, e, sets=model.sets) == state


@given(seeds, USERS)
@settings(max_examples=40, deadline=None)
def test_group_inverse(seed, tar):
    """grant-then-revoke restores the can-group and the holder set when the
    target held neither beforehand."""
    model, trace = _model_and_trace(seed)
    state = run_trace(trace, model.sets)
    for ident, dt in model.data.items():
        entry = state.get(dt)
        if entry is None or not model.sets.all_actions():
            continue
        action = model.sets.all_actions()[0].name
        if tar in entry.h_has or tar in entry.policy.acp.can_do(action):
            continue
        grant = AbstractEvent(kind=GROUPACT, t=10_000, dt=dt, actor=dt.ow,
                              tar=tar, action=action)
        revoke = AbstractEvent(kind=UNGROUPACT, t=10_001, dt=dt, actor=dt.ow,
                               tar=tar, action=action)
        granted = apply_event(state, grant, sets=model.sets)
        restored = apply_event(granted, revoke, sets=model.sets)
        out = restored.get(dt)
        assert out.h_has == entry.h_has
        assert out.policy.acp.can_do(action) == entry.policy.acp.can_do(action)


@given(GRANTS, GRANTS, USERS, USERS, USERS, USER_SETS)
def test_have_set_monotonicity(by, been, i, tar, ow, extra):
    """Enlarging any single grant set never shrinks the permitted-holder set."""
    gby, gbeen = shared_lookup(by), shared_lookup(been)
    base1 = have_act1_set(i, ow, gby)
    base2 = have_act2_set(i, tar, ow, gby, gbeen)
    for key in (i, ow, tar):
        wider = dict(by)
        wider[key] = wider.get(key, frozenset()) | extra
        gwider = shared_lookup(wider)
        assert base1 <= have_act1_set(i, ow, gwider)
        assert base2 <= have_act2_set(i, tar, ow, gwider, gbeen)
        wider_been = dict(been)
        wider_been[key] = wider_been.get(key, frozenset()) | extra
        assert base2 <= have_act2_set(i, tar, ow, gby, shared_lookup(wider_been))


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_document_round_trips(seed):
    model, trace = _model_and_trace(seed)
    text = serialize_policy(model)
    assert serialize_policy(parse_policy(text)) == text
    ttext = serialize_trace(trace, model)
    assert serialize_trace(parse_trace(ttext, model), model) == ttext


def test_enumeration_monotone_in_bound():
    x = Var(ow="alice", ds=frozenset({"alice", "bob"}), ident="d1")
    pa = Architecture(
        activities=frozenset({Own("alice", x), Act1("?i", "fav", x)}),
        perms=ArchPerms(can={"fav": frozenset({"alice", "bob"})},
                        by={"fav": {"alice": frozenset({"alice", "bob"}),
                                    "bob": frozenset({"bob"})}}),
    )
    universe = Universe(users=("alice", "bob"))
    previous = None
    for bound in range(4):
        states = enumerate_states(pa, bound, universe)
        if previous is not None:
            assert previous <= states
        previous = states
