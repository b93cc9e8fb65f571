"""Command-line interface.

Exit codes: 0 success/compliant/property holds; 1 violations found, comparison
not equal, or property not derivable; 2 usage or parse errors; 3 internal
limits (state-space guard).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import architecture as arch_mod
from .architecture import Architecture, EnumerationLimit, Universe, is_pattern
from .compliance import check_trace
from .dsl import (
    Document,
    ParseError,
    parse_architecture,
    parse_arch_trace,
    parse_has_query,
    parse_policy,
    parse_trace,
    serialize,
    serialize_architecture,
    sniff_kind,
)
from .logic import conclusions, deduce, eval_semantic
from .mapping import (
    MappingContext,
    check_correspondence,
    compare_architectures,
    compare_policies,
    derive_architecture,
    image_trace,
)
from .model import SP
from .semantics import SemanticsError

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_LIMIT = 3

DEFAULT_MAX_STATES = 10**6
DEFAULT_MAX_LEN = 4


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise SystemExit2(f"cannot read {path}: {err.strerror}")


class SystemExit2(Exception):
    """Usage-level failure carrying a message for standard error."""


def _load_policy(path: str):
    return parse_policy(_read(path), file=path)


def _load_trace(path: str, model):
    return parse_trace(_read(path), model, file=path)


def _load_architecture(path: str) -> Architecture:
    return parse_architecture(_read(path), file=path)


def _max_states(args) -> int:
    if args.max_states is not None:
        return args.max_states
    env = os.environ.get("DATACTL_MAX_STATES")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit2(f"DATACTL_MAX_STATES must be an integer, got {env!r}")
    return DEFAULT_MAX_STATES


def _concrete_users(pa: Architecture) -> frozenset[str]:
    users: set[str] = set()

    def note(token):
        if isinstance(token, str) and not is_pattern(token):
            users.add(token)

    for act in pa.activities:
        note(getattr(act, "user", None))
        note(getattr(act, "tar", None))
    for s in pa.perms.can.values():
        users.update(s)
    for table in (pa.perms.by, pa.perms.been):
        for per in table.values():
            for u, s in per.items():
                note(u)
                users.update(s)
    users.update(pa.perms.group)
    users.discard(SP)
    return frozenset(users)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args) -> int:
    text = _read(args.file)
    kind = sniff_kind(text)
    if kind == "policy":
        parse_policy(text, file=args.file)
    elif kind == "architecture":
        parse_architecture(text, file=args.file)
    elif kind == "arch-trace":
        parse_arch_trace(text, file=args.file)
    elif kind == "trace":
        if not args.policy:
            raise SystemExit2("validating a trace requires --policy")
        parse_trace(text, _load_policy(args.policy), file=args.file)
    else:
        parse_has_query(text, file=args.file)
    print(f"{args.file}: valid {kind} document")
    return EXIT_OK


def cmd_check_trace(args) -> int:
    model = _load_policy(args.policy)
    trace = _load_trace(args.trace, model)
    report = check_trace(trace, model.sets)
    if args.format == "tsv":
        print(report.render())
    else:
        for v in report.violations:
            where = "" if v.event_index is None else f" at event {v.event_index}"
            print(f"{v.rule}{where} ({v.datum.ident}): {v.detail}")
        for w in report.warnings:
            print(f"warning: {w}")
        print("compliant" if report.compliant else
              f"non-compliant ({len(report.violations)} violations)")
    return EXIT_OK if report.compliant else EXIT_FINDINGS


def cmd_derive_arch(args) -> int:
    model = _load_policy(args.policy)
    events = _load_trace(args.events, model) if args.events else []
    ctx = MappingContext(model=model, simplify_friends=args.simplify_friends)
    pa = derive_architecture(events, ctx)
    rendered = serialize_architecture(pa)
    if args.output:
        Path(args.output).write_text(rendered, encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def cmd_eval_has(args) -> int:
    pa = _load_architecture(args.arch)
    prop = parse_has_query(_read(args.query), file=args.query)
    users = _concrete_users(pa)
    for attr in ("user",):
        value = getattr(prop, attr, None)
        if isinstance(value, str) and value != SP:
            users |= {value}

    holds_deduce = holds_semantic = None
    if args.mode in ("deduce", "both"):
        trace = parse_arch_trace(_read(args.archtrace), file=args.archtrace) if args.archtrace else []
        derived = conclusions(deduce(pa, trace, users))
        parts = prop.parts if hasattr(prop, "parts") else (prop,)
        holds_deduce = all(p in derived for p in parts)
        print(f"deduce: {'derivable' if holds_deduce else 'not derivable'}")
    if args.mode in ("enumerate", "both"):
        universe = Universe(users=tuple(sorted(users)))
        try:
            verdict = eval_semantic(pa, prop, universe,
                                    max_len=args.max_len, max_states=_max_states(args))
        except EnumerationLimit as err:
            print(f"enumerate: limit reached ({err})", file=sys.stderr)
            return EXIT_LIMIT
        holds_semantic = verdict.holds
        print(f"enumerate: {verdict.render()}")
    ok = (holds_deduce or holds_semantic) is True
    return EXIT_OK if ok else EXIT_FINDINGS


def cmd_check_correspondence(args) -> int:
    model = _load_policy(args.policy)
    ctx = MappingContext(model=model, simplify_friends=args.simplify_friends)
    trace = _load_trace(args.trace, model) if args.trace else None
    pa = _load_architecture(args.arch) if args.arch else None
    report = check_correspondence(ctx, pa=pa, trace=trace)
    if args.format == "tsv":
        print(report.render())
    else:
        for r in report.results:
            if r.status == "fails" or args.verbose:
                who = f" user={r.user}" if r.user else ""
                print(f"{r.prop}{who} datum={r.datum}: {r.status} ({r.detail})")
        print("correspondence holds" if report.holds else "correspondence fails")
    return EXIT_OK if report.holds else EXIT_FINDINGS


def cmd_compare_policies(args) -> int:
    m1 = _load_policy(args.first)
    m2 = _load_policy(args.second)
    if m1.sets != m2.sets:
        raise SystemExit2("the two models declare different activity sets")
    shared = sorted(set(m1.policies) & set(m2.policies))
    if not shared:
        raise SystemExit2("the two models govern no common datum")
    all_equal = True
    for ident in shared:
        cmp = compare_policies(m1.policies[ident], m2.policies[ident])
        if args.format == "tsv":
            for name, rel in sorted(cmp.components.items()):
                print(f"{ident}\t{name}\t{rel}")
            print(f"{ident}\toverall\t{cmp.overall}")
        else:
            print(f"{ident}: {cmp.overall}")
            for name, rel in sorted(cmp.components.items()):
                if rel != "equal" or args.verbose:
                    print(f"  {name}: {rel}")
        all_equal = all_equal and cmp.overall == "equal"
    return EXIT_OK if all_equal else EXIT_FINDINGS


def cmd_compare_archs(args) -> int:
    pa1 = _load_architecture(args.first)
    pa2 = _load_architecture(args.second)
    cmp = compare_architectures(pa1, pa2)
    print(cmp.render())
    return EXIT_OK if cmp.overall == "equal" else EXIT_FINDINGS


def cmd_enumerate(args) -> int:
    pa = _load_architecture(args.arch)
    universe = Universe(users=tuple(sorted(_concrete_users(pa))) or ("u1",))
    try:
        states = arch_mod.enumerate_states(
            pa, args.max_len, universe, max_states=_max_states(args)
        )
    except EnumerationLimit as err:
        print(f"limit reached: {err}", file=sys.stderr)
        return EXIT_LIMIT
    print(f"{len(states)} reachable states within {args.max_len} events")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="datactl",
        description="Define, audit, and derive data-control policies and architectures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("text", "tsv"), default="text")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("validate", help="parse a document and report errors")
    p.add_argument("file")
    p.add_argument("--policy", help="model file, required when validating a trace")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("check-trace", help="audit a trace against the compliance rules")
    p.add_argument("policy")
    p.add_argument("trace")
    common(p)
    p.set_defaults(func=cmd_check_trace)

    p = sub.add_parser("derive-arch", help="derive an architecture from policy events")
    p.add_argument("policy")
    p.add_argument("--events", help="trace file driving the derivation")
    p.add_argument("--simplify-friends", action="store_true",
                   help="collapse group events into the declared alias pair")
    p.add_argument("-o", "--output")
    common(p)
    p.set_defaults(func=cmd_derive_arch)

    p = sub.add_parser("eval-has", help="evaluate a possession property")
    p.add_argument("arch")
    p.add_argument("query")
    p.add_argument("--mode", choices=("deduce", "enumerate", "both"), default="both")
    p.add_argument("--archtrace", help="architecture trace for the deduction rules")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--max-states", type=int)
    common(p)
    p.set_defaults(func=cmd_eval_has)

    p = sub.add_parser("check-correspondence",
                       help="check the policy/architecture correspondences")
    p.add_argument("policy")
    p.add_argument("--arch", help="explicit architecture (default: derived)")
    p.add_argument("--trace", help="policy trace widening the derived architecture")
    p.add_argument("--simplify-friends", action="store_true")
    common(p)
    p.set_defaults(func=cmd_check_correspondence)

    p = sub.add_parser("compare-policies", help="compare two policy models")
    p.add_argument("first")
    p.add_argument("second")
    common(p)
    p.set_defaults(func=cmd_compare_policies)

    p = sub.add_parser("compare-archs", help="compare two architectures")
    p.add_argument("first")
    p.add_argument("second")
    common(p)
    p.set_defaults(func=cmd_compare_archs)

    p = sub.add_parser("enumerate", help="count reachable architecture states")
    p.add_argument("arch")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--max-states", type=int)
    common(p)
    p.set_defaults(func=cmd_enumerate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ParseError, SemanticsError, SystemExit2) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
