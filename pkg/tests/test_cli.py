import json
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcontract.cli import main
from tcontract.sysmodel import BUILTIN_TEXT

REF = "builtin:moore_greitzer"
MG12 = ["builtin:moore_greitzer", "--set", "delta=-1.2"]

SYS_A = """system a
state x y
param u = 0
param v = 0
dyn x' = x - y - x^3 - x*y^2 + 0.1*u
dyn y' = x + y - x^2*y - y^3 + 0.1*v
"""
SYS_B = """system b
state u v
param x = 0
param y = 0
dyn u' = u - v - u^3 - u*v^2 - 0.05*x
dyn v' = u + v - u^2*v - v^3 - 0.05*y
"""


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def reports(tmp_path, job):
    files = sorted(p for p in os.listdir(tmp_path) if p.startswith(job) and p.endswith(".json"))
    return [json.loads((tmp_path / f).read_text()) for f in files]


@pytest.fixture
def ref_text(reference_text):
    return reference_text


# -- check ----------------------------------------------------------------------------

def test_check_reference_certified(tmp_path, capsys):
    assert run(tmp_path, "check", *MG12, REF) == 0
    out = capsys.readouterr().out
    assert out.startswith("tcontract check: certified")
    (doc,) = reports(tmp_path, "check")
    assert doc["verdict"] == "certified"
    assert doc["result"]["verification"]["n_fail"] == 0


def test_check_perturbed_names_worst_point(tmp_path, ref_text):
    bad = ref_text.replace("= 0.9999828735786003*phi^4", "= 10.9999828735786003*phi^4", 1)
    assert bad != ref_text
    path = tmp_path / "bad.cert"
    path.write_text(bad)
    assert run(tmp_path, "check", *MG12, str(path), "--report", "machine") == 1
    (doc,) = reports(tmp_path, "check")
    assert doc["verdict"] == "not_certified"
    v = doc["result"]["verification"]
    assert v["n_fail"] > 0 and len(v["worst_point"]) == 2


def test_check_transverse_certificate_in_strong_mode(tmp_path):
    assert run(tmp_path, "check", *MG12, REF, "--mode", "strong", "--report", "machine") == 1
    (doc,) = reports(tmp_path, "check")
    assert doc["verdict"] == "not_certified"


def test_check_strong_certificate_in_transverse_mode(tmp_path, ref_text):
    strong = "\n".join(l for l in ref_text.splitlines() if not l.startswith("rho")).replace(
        "mode transverse", "mode strong") + "\n"
    path = tmp_path / "strong.cert"
    path.write_text(strong)
    assert run(tmp_path, "check", *MG12, str(path), "--mode", "transverse", "--report", "machine") == 1
    (doc,) = reports(tmp_path, "check")
    assert doc["verdict"] == "hypothesis_error" and "rho" in doc["result"]["error"]


def test_check_missing_file(tmp_path, capsys):
    assert run(tmp_path, "check", *MG12, str(tmp_path / "nope.cert")) == 2
    assert "cannot read" in capsys.readouterr().err


def test_check_variable_mismatch(tmp_path):
    assert run(tmp_path, "check", "builtin:van_der_pol", REF) == 2


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert run(tmp_path, "check", "builtin:nosuch", REF) == 2
    assert run(tmp_path, "check", *MG12, REF, "--set", "delta") == 2
    assert run(tmp_path, "check", "builtin:moore_greitzer", "--set", "delta=9", REF) == 2
    assert run(tmp_path, "check", "builtin:moore_greitzer", "--set", "gamma=1", REF) == 2
    assert main(["--version"]) == 0


# -- simulate ------------------------------------------------------------------------------

def test_simulate_cycle(tmp_path):
    assert run(tmp_path, "simulate", *MG12, "--x0", "0.5,0.5", "--report", "machine") == 0
    (doc,) = reports(tmp_path, "simulate")
    assert doc["verdict"] == "simulated_only"
    assert doc["result"]["orbit"]["kind"] == "limit_cycle"
    assert any(p.endswith(".orbit.csv") for p in os.listdir(tmp_path))
    assert any(p.endswith(".trajectory.csv") for p in os.listdir(tmp_path))


def test_simulate_equilibrium(tmp_path):
    assert run(tmp_path, "simulate", "builtin:moore_greitzer", "--set", "delta=-0.8", "--x0", "0.5,0.5",
               "--report", "machine") == 0
    (doc,) = reports(tmp_path, "simulate")
    assert doc["result"]["orbit"]["kind"] == "equilibrium"


def test_simulate_bad_x0(tmp_path):
    assert run(tmp_path, "simulate", *MG12, "--x0", "1,2,3") == 2
    assert run(tmp_path, "simulate", *MG12, "--x0", "a,b") == 2


def test_simulate_reports_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["simulate", *MG12, "--x0", "0.5,0.5", "--no-detect", "--report", "machine"]
    assert main([*argv, "--out", str(a)]) == 0
    assert main([*argv, "--out", str(b)]) == 0
    assert sorted(os.listdir(a)) == sorted(os.listdir(b))
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# -- compose -------------------------------------------------------------------------------------

@pytest.fixture
def pair_files(tmp_path):
    pa, pb = tmp_path / "a.sys", tmp_path / "b.sys"
    pa.write_text(SYS_A)
    pb.write_text(SYS_B)
    return str(pa), str(pb)


def test_compose_skew(tmp_path, pair_files):
    out = tmp_path / "out"
    assert main(["compose", *pair_files, "--k", "2", "--grid", "5", "--out", str(out), "--report", "machine"]) == 0
    assert main(["compose", *pair_files, "--k", "1", "--grid", "5", "--out", str(out), "--report", "machine"]) == 1
    verdicts = sorted(d["verdict"] for d in reports(out, "compose"))
    assert verdicts == ["certified", "not_certified"]


def test_compose_description_file(tmp_path, pair_files):
    desc = tmp_path / "loop.ic"
    desc.write_text(f"# skew loop\nsystem1 {os.path.basename(pair_files[0])}\n"
                    f"system2 {os.path.basename(pair_files[1])}\ncheck skewsym\nk 2\n")
    assert main(["compose", "--desc", str(desc), "--grid", "4", "--out", str(tmp_path / "o")]) == 0
    desc.write_text("system1 a.sys\nbogus line\n")
    assert main(["compose", "--desc", str(desc), "--out", str(tmp_path / "o")]) == 2


def test_compose_hierarchical_needs_certificates(tmp_path, pair_files):
    assert run(tmp_path, "compose", *pair_files, "--check", "hierarchical", "--report", "machine") == 1
    (doc,) = reports(tmp_path, "compose")
    assert doc["verdict"] == "hypothesis_error"


def test_compose_needs_two_systems(tmp_path, pair_files):
    assert run(tmp_path, "compose", pair_files[0]) == 2


# -- exit codes on malformed input --------------------------------------------------------------

BASE = BUILTIN_TEXT["linear_stable_2d"]


@settings(max_examples=60)
@given(st.data())
def test_exit_codes_on_mangled_systems(tmp_path_factory, data):
    """Mangled system files never crash: exit 2 for bad input, 0/1 if still valid."""
    lines = BASE.splitlines()
    kind = data.draw(st.sampled_from(["drop", "garble", "noise"]))
    if kind == "drop":
        i = data.draw(st.integers(0, len(lines) - 1))
        text = "\n".join(lines[:i] + lines[i + 1:])
    elif kind == "garble":
        i = data.draw(st.integers(0, len(BASE) - 1))
        text = BASE[:i] + data.draw(st.sampled_from(["@", "^^", "(", "x3", " = ", "\n", "1e999"])) + BASE[i:]
    else:
        text = data.draw(st.text(max_size=80))
    d = tmp_path_factory.mktemp("m")
    path = d / "s.sys"
    path.write_text(text)
    code = main(["simulate", str(path), "--tmax", "1", "--no-detect", "--report", "machine", "--out", str(d)])
    assert code in (0, 1, 2)
    if kind == "noise" and "dyn" not in text:
        assert code == 2
