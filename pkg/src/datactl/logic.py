"""Possession properties over architectures: the deduction rules and the
bounded semantic oracle.

Two ways to establish a property are provided.  ``deduce`` applies the
syntactic rules H1-H10 to an architecture and an event trace.  ``eval_semantic``
decides the property against the enumerated state space, which is exact up to
the trace-length bound; verdicts whose truth depends on states beyond the
bound are flagged as bounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Union

from .architecture import (
    Act1,
    Act2,
    Architecture,
    ArchEvent,
    Delete,
    Func,
    GlobalState,
    KeyVar,
    Own,
    Possess,
    PossessOneOf,
    Term,
    UnAct1,
    UnAct2,
    Universe,
    Var,
    enumerate_states,
    is_pattern,
    match_term,
)
from .model import SP

GrantLookup = Callable[[str, str], frozenset[str]]
"""(granting user, performer or target) -> permitted user set."""


# ---------------------------------------------------------------------------
# Properties


@dataclass(frozen=True)
class HasSp:
    var: Var

    def render(self) -> str:
        return f"HAS_sp({self.var.ident})"


@dataclass(frozen=True)
class Has:
    user: str
    var: Var
    t: int

    def render(self) -> str:
        return f"HAS_{self.user}({self.var.ident}, {self.t})"


@dataclass(frozen=True)
class HasNot:
    user: str
    var: Var
    t: int

    def render(self) -> str:
        return f"HASnot_{self.user}({self.var.ident}, {self.t})"


@dataclass(frozen=True)
class HasNever:
    user: str
    var: Var

    def render(self) -> str:
        return f"HASnever_{self.user}({self.var.ident})"


@dataclass(frozen=True)
class And:
    parts: tuple["HasProperty", ...]

    def render(self) -> str:
        return " and ".join(p.render() for p in self.parts)


HasProperty = Union[HasSp, Has, HasNot, HasNever, And]


# ---------------------------------------------------------------------------
# Permitted-holder abbreviations

RULES = ("H1", "H2", "H3", "H4", "H5", "H6", "H7", "H8", "H9", "H10")


def have_act1_set(i: str, ow: str, gby: GrantLookup) -> frozenset[str]:
    """Users that both the performer and the owner permit to hold the datum
    after a unary action by ``i``."""
    return gby(i, i) & gby(ow, i)


def have_act2_set(
    i: str, tar: str, ow: str, gby: GrantLookup, gbeen: GrantLookup
) -> frozenset[str]:
    """Users that performer, owner, and target all permit to hold the datum
    after a binary action by ``i`` on ``tar``."""
    return (
        gby(i, i)
        & gbeen(i, tar)
        & gby(ow, i)
        & gbeen(ow, tar)
        & gby(tar, i)
        & gbeen(tar, tar)
    )


def shared_lookup(table) -> GrantLookup:
    """Adapt a granter-independent permission table (action-free mapping
    performer -> user set) to the granter-indexed signature."""

    def lookup(_granter: str, key: str) -> frozenset[str]:
        return table.get(key, frozenset())

    return lookup


# ---------------------------------------------------------------------------
# Deduction


@dataclass(frozen=True)
class DeductionResult:
    rule: str
    conclusion: HasProperty
    because: str

    def render(self) -> str:
        return f"{self.rule}\t{self.conclusion.render()}\t{self.because}"


def _activity_vars(pa: Architecture) -> list[Var]:
    """All distinct data variables the architecture mentions."""
    out: dict[Var, None] = {}

    def visit(term: Term) -> None:
        if isinstance(term, Var):
            out.setdefault(term)
        elif isinstance(term, Func):
            for arg in term.args:
                visit(arg)

    for act in pa.activities:
        for attr in ("term",):
            term = getattr(act, attr, None)
            if term is not None:
                visit(term)
        if isinstance(act, PossessOneOf):
            for term in act.terms:
                visit(term)
    return list(out)


def _concrete_user(pattern: str, event_user: str) -> str:
    return event_user if is_pattern(pattern) else pattern


def _gby(pa: Architecture, action: str) -> GrantLookup:
    return shared_lookup(pa.perms.by.get(action, {}))


def _gbeen(pa: Architecture, action: str) -> GrantLookup:
    return shared_lookup(pa.perms.been.get(action, {}))


def _h8_conclusions(pa: Architecture) -> list[DeductionResult]:
    out = []
    possessed: set[Term] = set()
    for act in pa.of_type(Possess):
        possessed.add(act.term)
    for act in pa.of_type(PossessOneOf):
        possessed.update(act.terms)
    sp_key = KeyVar(SP)
    for term in sorted(possessed, key=repr):
        if isinstance(term, Var):
            out.append(
                DeductionResult(
                    "H8", HasSp(term), "the provider possesses the variable in the clear"
                )
            )
        elif (
            isinstance(term, Func)
            and term.name == "enc"
            and len(term.args) == 2
            and isinstance(term.args[0], Var)
            and term.args[1] == sp_key
            and sp_key in possessed
        ):
            out.append(
                DeductionResult(
                    "H8",
                    HasSp(term.args[0]),
                    "the provider possesses the ciphertext and its own key",
                )
            )
    return out


def _h1_applicable(pa: Architecture, j: str, var: Var) -> bool:
    return any(
        _match_user_term(act.user, j, act.term, var) for act in pa.of_type(Own)
    )


def _match_user_term(user_pat: str, user: str, term_pat: Term, var: Var) -> bool:
    return (is_pattern(user_pat) or user_pat == user) and match_term(term_pat, var)


def _may_perform(pa: Architecture, i: str, action: str) -> bool:
    """Whether some run can reach a state in which ``i`` may perform ``action``:
    either the table grants it now, or a grant activity can add ``i`` later."""
    if i in pa.perms.can_do(action):
        return True
    from .architecture import AddFriends, GroupAct  # local to avoid cycle at import

    for act in pa.activities:
        if isinstance(act, GroupAct) and act.action == action and _match_token_user(act.tar, i):
            return True
        if isinstance(act, AddFriends) and action in act.actions and _match_token_user(act.tar, i):
            return True
    return False


def _match_token_user(pattern: str, user: str) -> bool:
    return is_pattern(pattern) or pattern == user


def _h2_applicable(pa: Architecture, j: str, var: Var, performers: Iterable[str]) -> bool:
    for act in pa.of_type(Act1):
        if not match_term(act.term, var):
            continue
        candidates = performers if is_pattern(act.user) else [act.user]
        for i in candidates:
            if not _may_perform(pa, i, act.action):
                continue
            if j in have_act1_set(i, var.ow, _gby(pa, act.action)):
                return True
    return False


def _h3_applicable(pa: Architecture, j: str, var: Var, users: Iterable[str]) -> bool:
    for act in pa.of_type(Act2):
        if not match_term(act.term, var):
            continue
        performers = users if is_pattern(act.user) else [act.user]
        targets = users if is_pattern(act.tar) else [act.tar]
        for i in performers:
            if not _may_perform(pa, i, act.action):
                continue
            for tar in targets:
                if j in have_act2_set(i, tar, var.ow, _gby(pa, act.action), _gbeen(pa, act.action)):
                    return True
    return False


def deduce(
    pa: Architecture,
    trace: list[ArchEvent],
    users: Iterable[str],
) -> list[DeductionResult]:
    """Apply the deduction rules to an architecture and an event trace.

    Group events bind no data variable, so the two rules premised on a valued
    group event (H4, H7) can never fire; they are retained for completeness of
    the rule set and contribute nothing.
    """
    users = sorted(set(users) | {SP})
    results: list[DeductionResult] = []

    own_acts = pa.of_type(Own)
    act1_acts = pa.of_type(Act1)
    act2_acts = pa.of_type(Act2)
    unact1_acts = pa.of_type(UnAct1)
    unact2_acts = pa.of_type(UnAct2)
    delete_acts = pa.of_type(Delete)

    for e in trace:
        if e.kind == "own" and isinstance(e.term, Var):
            for act in own_acts:
                if _match_user_term(act.user, e.user, act.term, e.term):
                    results.append(
                        DeductionResult(
                            "H1",
                            Has(e.user, e.term, e.t),
                            f"owner {e.user!r} input the value at t={e.t}",
                        )
                    )
                    break
        elif e.kind == "act1" and isinstance(e.term, Var):
            for act in act1_acts:
                if act.action != e.action or not match_term(act.term, e.term):
                    continue
                if not is_pattern(act.user) and act.user != e.user:
                    continue
                if e.user not in pa.perms.can_do(e.action):
                    continue
                for j in sorted(have_act1_set(e.user, e.term.ow, _gby(pa, e.action))):
                    results.append(
                        DeductionResult(
                            "H2",
                            Has(j, e.term, e.t),
                            f"{e.action!r} by {e.user!r} grants {j!r} the value",
                        )
                    )
                break
        elif e.kind == "act2" and isinstance(e.term, Var):
            for act in act2_acts:
                if act.action != e.action or not match_term(act.term, e.term):
                    continue
                if not is_pattern(act.user) and act.user != e.user:
                    continue
                if not is_pattern(act.tar) and act.tar != e.tar:
                    continue
                if e.user not in pa.perms.can_do(e.action):
                    continue
                holders = have_act2_set(
                    e.user, e.tar, e.term.ow, _gby(pa, e.action), _gbeen(pa, e.action)
                )
                for j in sorted(holders):
                    results.append(
                        DeductionResult(
                            "H3",
                            Has(j, e.term, e.t),
                            f"{e.action!r} by {e.user!r} on {e.tar!r} grants {j!r} the value",
                        )
                    )
                break
        elif e.kind == "unact1" and isinstance(e.term, Var):
            for act in unact1_acts:
                if act.action != e.action or not match_term(act.term, e.term):
                    continue
                if not is_pattern(act.user) and act.user != e.user:
                    continue
                if e.user not in pa.perms.can_do(e.action):
                    continue
                base = _base_action(pa, e.action)
                for j in sorted(have_act1_set(e.user, e.term.ow, _gby(pa, base))):
                    results.append(
                        DeductionResult(
                            "H5",
                            HasNot(j, e.term, e.t),
                            f"{e.action!r} by {e.user!r} withdraws the value from {j!r}",
                        )
                    )
                break
        elif e.kind == "unact2" and isinstance(e.term, Var):
            for act in unact2_acts:
                if act.action != e.action or not match_term(act.term, e.term):
                    continue
                if not is_pattern(act.user) and act.user != e.user:
                    continue
                if not is_pattern(act.tar) and act.tar != e.tar:
                    continue
                if e.user not in pa.perms.can_do(e.action):
                    continue
                base = _base_action(pa, e.action)
                holders = have_act2_set(
                    e.user, e.tar, e.term.ow, _gby(pa, base), _gbeen(pa, base)
                )
                for j in sorted(holders):
                    results.append(
                        DeductionResult(
                            "H6",
                            HasNot(j, e.term, e.t),
                            f"{e.action!r} by {e.user!r} on {e.tar!r} withdraws the value from {j!r}",
                        )
                    )
                break

    results.extend(_h8_conclusions(pa))

    # H10: a sanctioned deletion within its delay clears every user's copy.
    for act in delete_acts:
        for req in trace:
            if req.kind != "deletereq" or not isinstance(req.term, Var):
                continue
            if not match_term(act.term, req.term):
                continue
            for dele in trace:
                if dele.kind != "delete" or dele.term != req.term:
                    continue
                if not 0 <= dele.t - req.t <= act.dd:
                    continue
                for j in users:
                    results.append(
                        DeductionResult(
                            "H10",
                            HasNot(j, req.term, dele.t),
                            f"deletion honoured within {act.dd} of the request at t={req.t}",
                        )
                    )

    # H9: no grant path at all for (user, variable) pairs.
    h8_vars = {r.conclusion.var for r in results if r.rule == "H8"}
    for var in _activity_vars(pa):
        if not isinstance(var, Var) or is_pattern(var.ow):
            continue
        for j in users:
            if _h1_applicable(pa, j, var):
                continue
            if _h2_applicable(pa, j, var, users):
                continue
            if _h3_applicable(pa, j, var, users):
                continue
            if j == SP and var in h8_vars:
                continue
            results.append(
                DeductionResult(
                    "H9",
                    HasNever(j, var),
                    f"no activity or permission ever grants {j!r} the value",
                )
            )
    return results


def _base_action(pa: Architecture, un_action: str) -> str:
    """The base action whose permitted-holder tables an un-action consults.
    The architecture's tables are keyed by base action; when the un-action
    has its own entry that one wins."""
    if un_action in pa.perms.by:
        return un_action
    if un_action.startswith("un") and un_action[2:] in pa.perms.by:
        return un_action[2:]
    return un_action


def conclusions(results: Iterable[DeductionResult]) -> frozenset[HasProperty]:
    return frozenset(r.conclusion for r in results)


# ---------------------------------------------------------------------------
# Bounded semantic evaluation


@dataclass(frozen=True)
class SemanticVerdict:
    holds: bool
    bounded: bool  # True when a longer trace could still change the answer
    detail: str = ""

    def render(self) -> str:
        qualifier = " (within bound)" if self.bounded else ""
        return f"{'holds' if self.holds else 'does not hold'}{qualifier}"


def _sp_reads(state: GlobalState, var: Var) -> bool:
    sp_state = state.users.get(SP)
    if sp_state is None:
        return False
    if sp_state.value(var) is not None:
        return True
    cipher = Func("enc", (var, KeyVar(SP)))
    return sp_state.value(cipher) is not None and sp_state.value(KeyVar(SP)) is not None


def _fully_concrete(var: Var) -> bool:
    if is_pattern(var.ow) or is_pattern(var.ident):
        return False
    return not isinstance(var.ds, str)


def eval_semantic(
    pa: Architecture,
    prop: HasProperty,
    universe: Universe,
    max_len: int = 4,
    max_states: int = 10**6,
) -> SemanticVerdict:
    """Decide a property over all states reachable within ``max_len`` events.

    Positive existential answers (a witness state was found) are exact.
    Negative existentials and all universal answers are bounded: they hold of
    every enumerated state but a longer trace might differ.
    """
    if isinstance(prop, And):
        verdicts = [eval_semantic(pa, p, universe, max_len, max_states) for p in prop.parts]
        return SemanticVerdict(
            holds=all(v.holds for v in verdicts),
            bounded=any(v.bounded for v in verdicts),
            detail="; ".join(v.detail for v in verdicts if v.detail),
        )

    states = enumerate_states(pa, max_len, universe, max_states)

    if isinstance(prop, HasSp):
        for state in states:
            if _sp_reads(state, prop.var):
                return SemanticVerdict(True, False, "witness state found")
        return SemanticVerdict(False, True, "no witness within bound")

    if isinstance(prop, Has):
        if not _fully_concrete(prop.var):
            return SemanticVerdict(False, False, "variable is not completely defined")
        for state in states:
            st = state.users.get(prop.user)
            if st is not None and st.t == prop.t and st.value(prop.var) is not None:
                return SemanticVerdict(True, False, "witness state found")
        return SemanticVerdict(False, True, "no witness within bound")

    if isinstance(prop, HasNot):
        for state in states:
            st = state.users.get(prop.user)
            if st is not None and st.t == prop.t and st.value(prop.var) is None:
                return SemanticVerdict(True, False, "witness state found")
        return SemanticVerdict(False, True, "no witness within bound")

    if isinstance(prop, HasNever):
        for state in states:
            st = state.users.get(prop.user)
            if st is not None and st.value(prop.var) is not None:
                return SemanticVerdict(False, False, "a reachable state defines the variable")
        return SemanticVerdict(True, True, "holds of every state within bound")

    raise TypeError(f"unknown property {prop!r}")
