import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lphomog import continuum as cont
from lphomog.bands import BandStructure
from lphomog.cli import main
from lphomog.continuum import discriminant
from lphomog.intervals import CircularArcSet, HomogeneityReport
from lphomog.limit_periodic import PTSequence
from lphomog.verifiers import FitResult

FREE = '{"p":1,"a":[1],"b":[0]}'


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_free_jacobi_bands(capsys):
    code, out, _ = run(capsys, "bands", "--jacobi", FREE)
    assert code == 0
    d = json.loads(out)
    assert d["parts"] == [[-2.0, 2.0]]
    bs = BandStructure.from_dict(d)
    assert bs.bands.to_list() == [[-2.0, 2.0]]


def test_bands_csv_table(capsys):
    code, out, _ = run(capsys, "--format", "csv", "bands", "--jacobi",
                       '{"p":2,"a":[1,1],"b":[1,-1]}')
    lines = out.splitlines()
    assert code == 0 and lines[0] == "band_index,lo,hi,length,lo_label,hi_label"
    assert len(lines) == 3
    lo = float(lines[2].split(",")[1])
    assert lo == pytest.approx(1.0, abs=1e-12)


def test_continuum_bands_match_scan(capsys, tmp_path):
    well = tmp_path / "well.json"
    V = cont.square_well(math.pi, 4.0)
    well.write_text(V.to_json())
    code, out, _ = run(capsys, "bands", "--continuum", str(well), "--emax", "100",
                       "--format", "csv")
    assert code == 0
    rows = [r.split(",") for r in out.splitlines()[1:]]
    edges = np.array([[float(r[1]), float(r[2])] for r in rows])
    E = np.linspace(edges[0, 0] - 0.5, 100, 1_000_001)
    inside = np.abs(np.asarray(discriminant(V, E))) <= 2
    res = E[1] - E[0]
    # every scan point inside a band lies in some row, and vice versa
    member = np.zeros_like(inside)
    for lo, hi in edges:
        member |= (E >= lo - 2 * res) & (E <= hi + 2 * res)
    assert np.all(member[inside])
    strict = np.zeros_like(inside)
    for lo, hi in edges:
        strict |= (E > lo + 2 * res) & (E < hi - 2 * res)
    assert np.all(inside[strict])


def test_continuum_needs_emax(capsys):
    code, _, err = run(capsys, "bands", "--continuum", '{"T":1,"breakpoints":[0,1],"values":[0]}')
    assert code == 2 and "emax" in err


def test_cmv_bands(capsys):
    code, out, _ = run(capsys, "bands", "--cmv", '{"p":2,"alpha":[[0.5,0],[0.5,0]]}')
    assert code == 0
    arcs = CircularArcSet.of(json.loads(out)["arcs"])
    assert arcs.to_list()[0][0] == pytest.approx(math.pi / 3, abs=1e-10)


@pytest.mark.parametrize("argv", [
    ["bands", "--jacobi", "{not json"],
    ["bands", "--jacobi", "/nonexistent/file.json"],
    ["bands"],
    ["bands", "--jacobi", '{"p":2,"a":[1],"b":[0]}'],
    ["bands", "--jacobi", '{"p":1,"a":[-1],"b":[0]}'],
    ["homogeneity", "--set", '{"parts":[[1,0]]}', "--tau", "0.5", "--delta0", "1"],
    ["homogeneity", "--set", '{"parts":[[0,1]]}', "--tau", "1.5", "--delta0", "1"],
    ["pt-run", "--kind", "jacobi", "--schedule", "{bad"],
    ["pt-run", "--kind", "jacobi", "--levels", "2", "--schedule", '{"periods":[2,3],"eps":[0.1]}'],
    ["verify", "--check", "derivative"],
    ["verify", "--check", "semicontinuity"],
    ["verify", "--check", "derivative", "--ensemble", '{"kind":"cmv","operators":[]}'],
])
def test_input_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("lphomog:")


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bands", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_homogeneity_pass(capsys):
    code, out, _ = run(capsys, "homogeneity", "--set", '{"parts":[[0,1]]}', "--tau", "0.9",
                       "--delta0", "0.5")
    d = json.loads(out)
    assert code == 0 and d["pass"] and d["min_density"] == 1
    rep = HomogeneityReport.from_dict(d)
    assert rep.passed


def test_homogeneity_fail_exit_1(capsys):
    code, out, _ = run(capsys, "homogeneity", "--set", '{"parts":[[0,0.1],[1,1.1]]}',
                       "--tau", "0.5", "--delta0", "1")
    assert code == 1 and json.loads(out)["pass"] is False


def test_homogeneity_profile_csv(capsys):
    code, out, _ = run(capsys, "homogeneity", "--arcs", '{"arcs":[[0.5,2.5]]}', "--tau", "0.5",
                       "--delta0", "0.2", "--format", "csv")
    assert code == 0 and out.splitlines()[0] == "x,delta,density"


def test_pt_run_flagship(capsys, tmp_path):
    seq = tmp_path / "seq.json"
    code, out, _ = run(capsys, "pt-run", "--kind", "jacobi", "--levels", "4", "--seed", "7",
                       "--tau", "0.5", "--save-sequence", str(seq))
    d = json.loads(out)
    assert code == 0 and d["pass"] and d["budget"]["pass"]
    assert d["pt_condition"]["pass"] if "pass" in d["pt_condition"] else True
    S = PTSequence.from_dict(d["sequence"])
    assert S.to_json() == PTSequence.from_json(seq.read_text()).to_json()
    assert len(d["budget"]["levels"]) == 4


def test_pt_run_slow_schedule_exit_1(capsys):
    code, out, _ = run(capsys, "pt-run", "--kind", "jacobi", "--schedule", "exp:3",
                       "--tau", "0.99")
    d = json.loads(out)
    assert code == 1 and "tail" in d["budget"]["failure"]


def test_verify_edge_stability_fit(capsys, tmp_path):
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(4):
        V = cont.square_well(float(rng.uniform(1, 2)), float(rng.uniform(-2, 2)))
        W = cont.PiecewisePotential(V.T, V.breakpoints, tuple(np.add(V.values, 0.05)))
        pairs.append([V.to_dict(), W.to_dict()])
    ens = tmp_path / "ens.json"
    ens.write_text(json.dumps({"kind": "continuum", "pairs": pairs}))
    code, out, _ = run(capsys, "verify", "--check", "edge-stability", "--ensemble", str(ens),
                       "--nmax", "6")
    d = json.loads(out)
    assert code == 0 and d["mode"] == "fit" and d["n_violations"] == 0
    fit = FitResult.from_dict(d)
    assert fit.constant_name == "C1" and fit.fitted_value > 0
    # replay with the fitted value
    code, out, _ = run(capsys, "verify", "--check", "edge-stability", "--ensemble", str(ens),
                       "--nmax", "6", "--constant", repr(fit.fitted_value))
    assert code == 0 and json.loads(out)["mode"] == "verify"


def test_verify_sequence_checks(capsys, tmp_path):
    seq = tmp_path / "seq.json"
    run(capsys, "pt-run", "--kind", "jacobi", "--save-sequence", str(seq))
    code, out, _ = run(capsys, "verify", "--check", "gap-sums", "--sequence", str(seq))
    assert code == 0 and json.loads(out)["nondecreasing"]
    code, out, _ = run(capsys, "verify", "--check", "semicontinuity", "--sequence", str(seq),
                       "--interval", "-3", "3")
    assert code == 0 and json.loads(out)["pass"]


def test_norms(capsys):
    ind = '{"T":2,"breakpoints":[0,1,2],"values":[1,0]}'
    code, out, _ = run(capsys, "norms", "--continuum", ind)
    d = json.loads(out)
    assert code == 0
    assert d["besicovitch"] == pytest.approx(math.sqrt(0.5)) and d["stepanov"] == pytest.approx(1.0)
    code, out, _ = run(capsys, "norms", "--continuum", ind, "--other",
                       '{"T":2,"breakpoints":[0,2],"values":[0]}', "--format", "csv")
    head, row = out.splitlines()
    assert head == "T,besicovitch,stepanov,besicovitch_distance,stepanov_distance"


def test_out_file_and_flag_position(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["--out", str(a), "bands", "--jacobi", FREE]) == 0
    assert main(["bands", "--jacobi", FREE, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert capsys.readouterr().out == ""


@pytest.mark.parametrize("argv", [
    ["pt-run", "--kind", "jacobi"],
    ["pt-run", "--kind", "cmv", "--format", "csv"],
    ["bands", "--continuum", '{"T":3,"breakpoints":[0,1,3],"values":[2,-1]}', "--emax", "50"],
])
def test_byte_identical_runs(capsys, argv):
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv, "--threads", "2")
    assert first == second


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("LPHOMOG_THREADS", "3")
    code, out1, _ = run(capsys, "pt-run", "--kind", "jacobi", "--levels", "2")
    monkeypatch.setenv("LPHOMOG_THREADS", "bogus")
    code2, out2, _ = run(capsys, "pt-run", "--kind", "jacobi", "--levels", "2")
    assert out1 == out2 and code == code2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lphomog", "bands", "--jacobi", FREE],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["parts"] == [[-2.0, 2.0]]
    proc = subprocess.run([sys.executable, "-m", "lphomog", "bands", "--jacobi", "{"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 2
