import json
import math

import numpy as np
import pytest

from pauli_lab import io as pio
from pauli_lab.cli import (
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_PRECONDITION,
    EXIT_SOLVER,
    compare_gauge,
    main,
    parse_grid,
    parse_range,
    run,
)
from pauli_lab.counterexample import build_band_field, divergence_scan, no_zero_mode_probe
from pauli_lab.fields import bump_field, gaussian_density_grid
from pauli_lab.grid import Grid
from pauli_lab.measure import SignedMeasure
from pauli_lab.potential import asymptotic_flux_check, build_potential
from pauli_lab.spectrum import kernel_dimension
from pauli_lab.weights import a2_scan, power_weight
from pauli_lab.zero_modes import CandidateMode, normalizability_test


def base_measure():
    dens = gaussian_density_grid(0.3, 0.4, n=16, center=(1.0, -0.5))
    return SignedMeasure(atoms=[[0.5, 0.25, 0.3], [-1.0, 0.0, -0.2]], density=dens)


def write(tmp_path, name, mu):
    p = tmp_path / name
    pio.write_field(mu, p)
    return str(p)


# ---------------------------------------------------------------- file formats

def test_field_round_trip(tmp_path):
    mu = SignedMeasure(atoms=[[0.5, 0.25, 0.3]], density=base_measure().density, radial=bump_field(1.5).radial)
    back = pio.read_field(write(tmp_path, "f.json", mu))
    np.testing.assert_array_equal(back.atoms, mu.atoms)
    np.testing.assert_array_equal(back.density.values, mu.density.values)
    assert back.density.origin == mu.density.origin
    np.testing.assert_array_equal(back.radial.phi, mu.radial.phi)


@pytest.mark.parametrize("doc,msg", [
    ({"schema": "pauli-field/2"}, "schema"),
    ({"schema": "pauli-field/1", "density": {"nx": 2, "ny": 2, "values": [1, 2, 3], "origin": [0, 0],
                                             "spacing": [1, 1]}}, "values"),
    ({"schema": "pauli-field/1", "density": {"nx": 2}}, "missing"),
    ([1, 2], "object"),
])
def test_field_format_errors(doc, msg):
    with pytest.raises(pio.FormatError, match=msg):
        pio.field_from_dict(doc)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(pio.FormatError):
        pio.read_field(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(pio.FormatError):
        pio.read_field(bad)


def test_potential_round_trip(tmp_path):
    g = Grid(16, 16, 3.0)
    pf = build_potential(SignedMeasure(atoms=[[0.013, 0.021, 0.4]]), 0.05, g)
    p = tmp_path / "h.json"
    pio.write_potential(pf, p)
    back = pio.read_potential(p)
    np.testing.assert_allclose(back.h, pf.h, atol=1e-12)
    assert back.evaluator is not None
    pio.write_potential(pf, p, include_field=False)
    bare = pio.read_potential(p)
    assert bare.evaluator is None and bare.flux == pf.flux
    np.testing.assert_array_equal(bare.h, pf.h)


def test_potential_tamper_detected(tmp_path):
    g = Grid(8, 8, 2.0)
    pf = build_potential(SignedMeasure(atoms=[[0.013, 0.021, 0.4]]), 0.05, g)
    doc = pio.potential_to_dict(pf)
    doc["h"][3] += 1e-3
    with pytest.raises(pio.FormatError, match="does not match"):
        pio.potential_from_dict(doc)


def test_table_render_parse():
    t = pio.Table("demo", ["a", "b", "c"])
    t.add(1, 0.1, True)
    t.add(2, float("nan"), "x")
    text = t.render({"z": 1, "a": [1, 2]})
    assert text.splitlines()[:3] == ["# schema: pauli-report/1 demo", '# config: {"a": [1, 2], "z": 1}', "a\tb\tc"]
    kind, cfg, back = pio.parse_report(text)
    assert kind == "demo" and cfg == {"a": [1, 2], "z": 1}
    assert back.rows == [["1", "0.1", "true"], ["2", "nan", "x"]]
    with pytest.raises(ValueError):
        t.add(1, 2)
    with pytest.raises(pio.FormatError):
        pio.parse_report("a\tb\n")


# ---------------------------------------------------------------- plot data

def test_plotdata_kernel():
    (t,) = pio.emit_plotdata(kernel_dimension([1e-9, 2e-9, 0.3, 0.5]))
    assert t.columns == ["index", "lambda"] and [r[0] for r in t.rows] == [1, 2, 3, 4]


def test_plotdata_flux_check():
    pf = build_potential(SignedMeasure(atoms=[[0.013, 0.021, 0.4]]), 0.05, Grid(8, 8, 2.0))
    (t,) = pio.emit_plotdata(asymptotic_flux_check(pf, [2.0, 8.0]))
    assert t.columns == ["r", "max_deviation"] and len(t.rows) == 2


def test_plotdata_band_terms_and_probe():
    band = build_band_field(0.05, 0.1, 2)
    scan = divergence_scan(band)
    (t,) = pio.emit_plotdata(scan)
    assert t.columns[:3] == ["k", "t_k", "ratio"] and len(t.rows) == 2
    (p,) = pio.emit_plotdata(no_zero_mode_probe(band, degrees=[1], scan=scan))
    assert p.kind == "monomial_probe" and len(p.rows) == 2


def test_plotdata_weights_and_masses():
    (t,) = pio.emit_plotdata(a2_scan(power_weight(0.4), (-1, 1, -1, 1), [1, 2]))
    assert [r[0] for r in t.rows] == [1, 2]
    m = CandidateMode(0, "down", 1, lambda P: 1.5 * np.log(np.hypot(P[:, 0], P[:, 1])))
    (a,) = pio.emit_plotdata(normalizability_test(m))
    assert a.columns == ["r", "log_mass"] and len(a.rows) == 7
    with pytest.raises(TypeError):
        pio.emit_plotdata(object())


def test_plotdata_byte_stable():
    rep = kernel_dimension([1e-9, 2e-9, 0.3, 0.5])
    a = "".join(t.render({"x": 1}) for t in pio.emit_plotdata(rep))
    b = "".join(t.render({"x": 1}) for t in pio.emit_plotdata(rep))
    assert a == b


# ---------------------------------------------------------------- gauge comparison

def test_gauge_integer_atom_equivalent():
    mu = base_measure()
    v = compare_gauge(mu, SignedMeasure(atoms=np.vstack([mu.atoms, [[0.0, 0.0, 1.0]]]), density=mu.density))
    assert v.equivalent and v.verdict == "gauge-equivalent"
    assert v.diff == [((0.0, 0.0), 1)]


def test_gauge_shifted_coefficient_equivalent():
    mu = base_measure()
    atoms = mu.atoms.copy()
    atoms[0, 2] -= 2.0
    v = compare_gauge(mu, SignedMeasure(atoms=atoms, density=mu.density))
    assert v.equivalent and v.diff == [((0.5, 0.25), -2)]


def test_gauge_half_integer_not_equivalent():
    mu = base_measure()
    v = compare_gauge(mu, SignedMeasure(atoms=np.vstack([mu.atoms, [[0.0, 0.0, 0.5]]]), density=mu.density))
    assert not v.equivalent and v.verdict == "not-equivalent"


def test_translation_not_equivalent():
    mu = base_measure()
    d = mu.density
    moved = SignedMeasure(atoms=mu.atoms + [0.25, 0.0, 0.0],
                          density=type(d)((d.origin[0] + 0.25, d.origin[1]), d.spacing, d.values))
    assert not compare_gauge(mu, moved).equivalent


def test_gauge_self_and_radial():
    mu = SignedMeasure(radial=bump_field(1.5).radial)
    assert compare_gauge(mu, mu).equivalent
    assert not compare_gauge(mu, SignedMeasure(radial=bump_field(1.6).radial)).equivalent


# ---------------------------------------------------------------- argument parsing

def test_parse_helpers():
    assert parse_range("1..4") == range(1, 5)
    assert parse_range("3") == range(3, 4)
    assert parse_grid("32,32,8").extent == 8.0
    for bad in ("4..1", "a..b"):
        with pytest.raises(Exception):
            parse_range(bad)


# ---------------------------------------------------------------- CLI runs

@pytest.fixture
def atom_file(tmp_path):
    return write(tmp_path, "atom.json", SignedMeasure(atoms=[[0.013, 0.021, 1.4]]))


@pytest.fixture
def bump_files(tmp_path):
    f = write(tmp_path, "bump.json", bump_field(2.5))
    h = str(tmp_path / "bump.h.json")
    status, _ = run(["potential", f, "--grid", "48,48,8", "--eps", "0.05", "--write", h])
    assert status == EXIT_OK
    return f, h


def rows(text, kind):
    out = []
    for block in text.split("# schema: ")[1:]:
        lines = block.strip().splitlines()
        if lines[0].split()[-1] == kind:
            cols = lines[2].split("\t")
            out += [dict(zip(cols, ln.split("\t"))) for ln in lines[3:]]
    return out


def test_field_info(atom_file):
    status, text = run(["field", "info", atom_file])
    assert status == EXIT_OK
    (red,) = rows(text, "reduction")
    assert float(red["C_star"]) == pytest.approx(0.4) and red["n"] == "1"
    (info,) = rows(text, "field_info")
    assert info["reduced"] == "false" and info["removed"] == "1"


def test_field_reduce_writes(atom_file, tmp_path):
    out = str(tmp_path / "red.json")
    status, _ = run(["field", "reduce", atom_file, "--write", out])
    assert status == EXIT_OK
    assert pio.read_field(out).atoms[0, 2] == pytest.approx(0.4)


def test_field_compare_cli(tmp_path):
    mu = base_measure()
    a = write(tmp_path, "a.json", mu)
    b = write(tmp_path, "b.json", SignedMeasure(atoms=np.vstack([mu.atoms, [[0.0, 0.0, 1.0]]]), density=mu.density))
    status, text = run(["field", "compare", a, b])
    (r,) = rows(text, "gauge_compare")
    assert status == EXIT_OK and r["verdict"] == "gauge-equivalent"
    assert json.loads(r["diff"]) == [[[0.0, 0.0], 1]]


def test_exit_parse_errors(tmp_path, atom_file):
    assert run(["nosuch"]).status == EXIT_PARSE
    assert run(["field", "info", str(tmp_path / "missing.json")]).status == EXIT_PARSE
    assert run(["field", "compare", atom_file]).status == EXIT_PARSE
    assert run(["potential", atom_file, "--grid", "8,8"]).status == EXIT_PARSE


def test_exit_precondition_unreduced(atom_file):
    status, text = run(["potential", atom_file, "--grid", "16,16,2"])
    assert status == EXIT_PRECONDITION and "not reduced" in text


def test_spectrum_strict_inconclusive(bump_files):
    _, h = bump_files
    assert run(["--strict", "spectrum", h, "--k", "1"]).status == EXIT_INCONCLUSIVE
    assert run(["spectrum", h, "--k", "1"]).status == EXIT_OK
    status, text = run(["--strict", "spectrum", h, "--k", "6"])
    assert status == EXIT_OK
    (k,) = rows(text, "kernel")
    assert k["dimension"] == "2" and k["verdict"] == "confident"


def test_spectrum_solver_error(bump_files):
    _, h = bump_files
    assert run(["spectrum", h, "--k", "6", "--tol", "1e-30"]).status == EXIT_SOLVER


def test_spectrum_vector_potential(bump_files, tmp_path):
    _, h = bump_files
    g = Grid(48, 48, 8.0)
    A = tmp_path / "A.json"
    A.write_text(json.dumps({"schema": "pauli-A/1", "A1": np.zeros(g.shape).ravel().tolist(),
                             "A2": np.zeros(g.shape).ravel().tolist()}))
    s1, t1 = run(["spectrum", h, "--k", "4"])
    s2, t2 = run(["spectrum", h, "--k", "4", "--vector-potential", str(A)])
    a = [float(r["lambda"]) for r in rows(t1, "eigenvalues")]
    b = [float(r["lambda"]) for r in rows(t2, "eigenvalues")]
    np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-14)
    A.write_text(json.dumps({"schema": "nope"}))
    assert run(["spectrum", h, "--vector-potential", str(A)]).status == EXIT_PARSE


def test_acheck_cli(bump_files):
    f, _ = bump_files
    status, text = run(["--strict", "acheck", f, "--grid", "64,64,16", "--eps", "0.05", "--k", "6"])
    assert status == EXIT_OK
    (r,) = rows(text, "acheck")
    assert (r["predicted"], r["measured"], r["match"]) == ("2", "2", "true")


def test_a2_cli(tmp_path):
    f = write(tmp_path, "c.json", SignedMeasure(atoms=[[0.013, 0.021, 0.4]]))
    h = str(tmp_path / "c.h.json")
    assert run(["potential", f, "--grid", "16,16,2", "--eps", "0.05", "--write", h]).status == EXIT_OK
    status, text = run(["a2", h, "--scales", "1..2"])
    assert status == EXIT_OK
    (s,) = rows(text, "a2_summary")
    assert 1.0 < float(s["sup_product"]) < 3.0


def test_multiplier_cli_reproducible():
    a = run(["multiplier", "--n", "32", "--samples", "8", "--seed", "3"])
    b = run(["multiplier", "--n", "32", "--samples", "8", "--seed", "3"])
    assert a == b and a.status == EXIT_OK
    (r,) = rows(a.text, "multiplier")
    assert float(r["max_ratio"]) <= 1 + 1e-8


def test_radial_threshold_cli():
    status, text = run(["radial-threshold", "--N", "2", "--beta", "0.25,0.5,0.75"])
    assert status == EXIT_OK
    assert [r["counted"] for r in rows(text, "radial_threshold")] == ["1", "1", "2"]
    assert run(["--strict", "radial-threshold", "--beta", "0.5"]).status == EXIT_INCONCLUSIVE
    assert run(["radial-threshold", "--beta", "-1"]).status == EXIT_PRECONDITION


def test_counterexample_cli_rows_format():
    status, text = run(["--format", "rows", "counterexample", "--bands", "2", "--probe-degrees", "1..2"])
    assert status == EXIT_OK
    lines = [ln for ln in text.splitlines() if ln.startswith("band_terms ")]
    assert len(lines) == 2 and lines[0].startswith("band_terms k=1 t_k=")
    assert "monomial_growth m=1 growing_on_annuli=true verdict=true" in text
    assert run(["counterexample", "--eps", "0.3"]).status == EXIT_PRECONDITION


def test_byte_identical_reports(bump_files, tmp_path):
    f, _ = bump_files
    outs = []
    for i in range(2):
        o = tmp_path / f"r{i}.txt"
        assert run(["-o", str(o), "acheck", f, "--grid", "32,32,8", "--eps", "0.05", "--k", "5"]).status in (0, 4)
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    kind, cfg, _ = pio.parse_report(outs[0].decode().split("\n\n")[0])
    assert cfg["subcommand"] == "acheck" and cfg["grid"] == "32,32,8.0" and cfg["eps"] == 0.05


def test_main_streams(capsys, atom_file):
    assert main(["field", "info", atom_file]) == EXIT_OK
    assert "field_info" in capsys.readouterr().out
    assert main(["nosuch"]) == EXIT_PARSE
    assert capsys.readouterr().err
