"""Exit-code contract and output shape of the command-line interface,
exercised against the bundled service fixtures."""

import os

import pytest

from datactl.cli import main

FIX = "fixtures/facebook"
DCP = f"{FIX}/facebook.dcp"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- validate ---------------------------------------------------------------


def test_validate_each_kind(capsys, tmp_path):
    for path in (DCP, f"{FIX}/full.dca", f"{FIX}/simplified.dca"):
        code, out, _ = run(capsys, "validate", path)
        assert code == 0 and "valid" in out

    code, out, _ = run(capsys, "validate", f"{FIX}/fb_clean.dct", "--policy", DCP)
    assert code == 0 and "valid trace" in out

    query = tmp_path / "q.dcq"
    query.write_text("HAS_sp(X{ow=alice, ds={alice, bob}, id=photo1})")
    code, out, _ = run(capsys, "validate", str(query))
    assert code == 0 and "valid query" in out


def test_validate_trace_without_policy_is_usage_error(capsys):
    code, _, err = run(capsys, "validate", f"{FIX}/fb_clean.dct")
    assert code == 2 and "--policy" in err


def test_validate_broken_document(capsys, tmp_path):
    bad = tmp_path / "bad.dcp"
    bad.write_text("actions { unary fav unfav; }")
    code, _, err = run(capsys, "validate", str(bad))
    assert code == 2 and "error:" in err


def test_missing_file_is_usage_error(capsys):
    code, _, err = run(capsys, "validate", "no/such/file.dcp")
    assert code == 2 and "cannot read" in err


def test_unknown_subcommand_is_usage_error(capsys):
    assert run(capsys, "frobnicate")[0] == 2


# --- check-trace ------------------------------------------------------------


def test_check_trace_compliant(capsys):
    code, out, _ = run(capsys, "check-trace", DCP, f"{FIX}/fb_clean.dct")
    assert code == 0 and out.strip().endswith("compliant")


def test_check_trace_violation(capsys):
    code, out, _ = run(capsys, "check-trace", DCP, f"{FIX}/fb_badpurpose.dct")
    assert code == 1
    assert out.count("C1") == 1 and "non-compliant" in out


def test_check_trace_tsv(capsys):
    code, out, _ = run(capsys, "check-trace", DCP, f"{FIX}/fb_badpurpose.dct",
                       "--format", "tsv")
    assert code == 1
    line = out.splitlines()[0].split("\t")
    assert line[0] == "C1" and line[2] == "photo1"


# --- derive-arch ------------------------------------------------------------


def canonical(path):
    from datactl.dsl import parse_architecture, serialize_architecture

    return serialize_architecture(parse_architecture(open(path).read(), file=path))


def test_derive_arch_matches_goldens(capsys, tmp_path):
    out_path = tmp_path / "derived.dca"
    code, _, _ = run(capsys, "derive-arch", DCP, "--events", f"{FIX}/fb_all.dct",
                     "-o", str(out_path))
    assert code == 0
    assert out_path.read_text() == canonical(f"{FIX}/full.dca")

    code, _, _ = run(capsys, "derive-arch", DCP, "--events", f"{FIX}/fb_all.dct",
                     "--simplify-friends", "-o", str(out_path))
    assert code == 0
    assert out_path.read_text() == canonical(f"{FIX}/simplified.dca")


def test_derive_arch_idempotent_output(capsys, tmp_path):
    """Deriving from the canonical output's trace twice gives identical text."""
    first = run(capsys, "derive-arch", DCP, "--events", f"{FIX}/fb_all.dct")[1]
    second = run(capsys, "derive-arch", DCP, "--events", f"{FIX}/fb_all.dct")[1]
    assert first == second


# --- compare ----------------------------------------------------------------


def test_compare_archs_equal_and_different(capsys):
    code, out, _ = run(capsys, "compare-archs", f"{FIX}/full.dca", f"{FIX}/full.dca")
    assert code == 0 and "equal" in out
    code, out, _ = run(capsys, "compare-archs", f"{FIX}/full.dca", f"{FIX}/simplified.dca")
    assert code == 1 and "incomparable" in out


def test_compare_policies_self(capsys):
    code, out, _ = run(capsys, "compare-policies", DCP, DCP)
    assert code == 0
    assert "email1: equal" in out and "photo1: equal" in out


# --- correspondence ---------------------------------------------------------


def test_check_correspondence_holds(capsys):
    code, out, _ = run(capsys, "check-correspondence", DCP,
                       "--trace", f"{FIX}/fb_corr.dct")
    assert code == 0 and "correspondence holds" in out


def test_check_correspondence_partial_trace_fails(capsys):
    code, out, _ = run(capsys, "check-correspondence", DCP,
                       "--trace", f"{FIX}/fb_all.dct")
    assert code == 1 and "correspondence fails" in out
    assert "email1" in out  # only the unexercised datum fails


# --- eval-has and enumerate -------------------------------------------------


def write_small_arch(tmp_path):
    path = tmp_path / "small.dca"
    path.write_text(
        "architecture {\n"
        "  Own[alice](X{ow=alice, ds={alice}, id=d1});\n"
        "  Possess(X{ow=alice, ds={alice}, id=d1});\n"
        "}\n"
    )
    return str(path)


def test_eval_has_both_modes(capsys, tmp_path):
    arch = write_small_arch(tmp_path)
    query = tmp_path / "q.dcq"
    query.write_text("HAS_sp(X{ow=alice, ds={alice}, id=d1})")
    code, out, _ = run(capsys, "eval-has", arch, str(query), "--mode", "both",
                       "--max-len", "2")
    assert code == 0
    assert "deduce: derivable" in out and "enumerate: holds" in out


def test_eval_has_negative(capsys, tmp_path):
    arch = write_small_arch(tmp_path)
    query = tmp_path / "q.dcq"
    query.write_text("HAS[bob](X{ow=alice, ds={alice}, id=d1}, t=1)")
    code, out, _ = run(capsys, "eval-has", arch, str(query), "--mode", "enumerate",
                       "--max-len", "2")
    assert code == 1 and "does not hold" in out


def test_eval_has_state_limit(capsys, tmp_path):
    arch = write_small_arch(tmp_path)
    query = tmp_path / "q.dcq"
    query.write_text("HAS_sp(X{ow=alice, ds={alice}, id=d1})")
    code, _, err = run(capsys, "eval-has", arch, str(query), "--mode", "enumerate",
                       "--max-len", "4", "--max-states", "2")
    assert code == 3 and "limit" in err


def test_max_states_env_override(capsys, tmp_path, monkeypatch):
    arch = write_small_arch(tmp_path)
    monkeypatch.setenv("DATACTL_MAX_STATES", "2")
    code, _, err = run(capsys, "enumerate", arch, "--max-len", "4")
    assert code == 3 and "limit" in err
    monkeypatch.setenv("DATACTL_MAX_STATES", "not-a-number")
    code, _, err = run(capsys, "enumerate", arch)
    assert code == 2


def test_enumerate_counts_states(capsys, tmp_path):
    arch = write_small_arch(tmp_path)
    code, out, _ = run(capsys, "enumerate", arch, "--max-len", "2")
    assert code == 0 and "reachable states" in out
