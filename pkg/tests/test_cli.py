import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cutflow import __version__
from cutflow.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, CampaignReport, InstanceRecord, main
from cutflow.fileformat import encode_data, save_program
from cutflow.fixtures import fixture_path, matrix_chain
from cutflow.xform import apply, match

CHAIN = fixture_path("matrix_chain")
FUSION = fixture_path("fusion_chain")


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_off_by_one_exits_one_with_bundle(capsys, tmp_path):
    code, out, _ = cli(capsys, "verify", CHAIN, "--xform", "map-tiling", "--bug", "off-by-one",
                       "--site", "n17", "--seed", "1", "--out", tmp_path)
    assert code == EXIT_INVALID
    bundles = os.listdir(tmp_path / "bundles")
    assert len(bundles) == 1
    assert set(os.listdir(tmp_path / "bundles" / bundles[0])) == {
        "original.cfprog.json", "transformed.cfprog.json", "input.cfdata", "report.json"}
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["seed"] == 1 and report["totals"]["invalid"] == 1 and report["totals"]["tested"] == 1
    assert "change-in-semantics" in out or "input-dependent" in out


def test_verify_correct_tiling_exits_zero(capsys, tmp_path):
    code, out, _ = cli(capsys, "verify", CHAIN, "--xform", "map-tiling", "--trials", "30",
                       "--size-max", "8", "--out", tmp_path)
    assert code == EXIT_OK
    assert not (tmp_path / "bundles").exists()
    assert (tmp_path / "report.txt").read_text().strip() == out.strip()


def test_verify_with_mincut_reports_halved_volume(capsys, tmp_path):
    code, out, _ = cli(capsys, "verify", FUSION, "--xform", "tasklet-fusion", "--mincut",
                       "--trials", "20", "--out", tmp_path)
    assert code == EXIT_OK
    assert "128 -> 64" in out and "halved" in out


def test_verify_coverage_mode(capsys, tmp_path):
    code, _, _ = cli(capsys, "verify", fixture_path("fusion_live"), "--xform", "tasklet-fusion",
                     "--bug", "drops-live-write", "--mode", "coverage", "--out", tmp_path)
    assert code == EXIT_INVALID


def test_cutout_tables(capsys, tmp_path):
    code, out, _ = cli(capsys, "cutout", CHAIN, "--xform", "map-tiling", "--site", "n17",
                       "--out", tmp_path)
    assert code == EXIT_OK
    meta = json.loads((tmp_path / "cutout-meta.json").read_text())
    assert meta["input_symbols"] == ["N"]
    assert {d["data"] for d in meta["input_configuration"]} == {"C", "U", "V"}
    assert [d["data"] for d in meta["system_state"]] == ["V"]
    assert "input configuration:" in out and "system state:" in out


def test_cutout_with_mincut_on_fusion_chain(capsys, tmp_path):
    code, out, _ = cli(capsys, "cutout", FUSION, "--xform", "tasklet-fusion", "--mincut",
                       "--out", tmp_path)
    assert code == EXIT_OK
    meta = json.loads((tmp_path / "cutout-meta.json").read_text())
    assert [d["data"] for d in meta["input_configuration"]] == ["x"]
    assert "input volume 128 -> 64" in out


def test_cutout_of_identity_is_an_empty_change_set(capsys, tmp_path):
    code, _, err = cli(capsys, "cutout", CHAIN, "--xform", "identity", "--out", tmp_path)
    assert code == EXIT_USAGE
    assert "empty change set" in err


@pytest.fixture
def bundle(capsys, tmp_path):
    cli(capsys, "verify", CHAIN, "--xform", "map-tiling", "--bug", "off-by-one", "--site", "n17",
        "--seed", "1", "--out", tmp_path / "run")
    root = tmp_path / "run" / "bundles"
    return root / os.listdir(root)[0]


def test_replay_is_deterministic(capsys, bundle):
    first = cli(capsys, "replay", bundle)
    second = cli(capsys, "replay", bundle)
    assert first == second
    code, out, _ = first
    assert code == EXIT_INVALID
    assert "first difference" in out or "status mismatch" in out


def test_replay_of_equal_programs_warns(capsys, bundle):
    shutil.copy(bundle / "original.cfprog.json", bundle / "transformed.cfprog.json")
    code, out, _ = cli(capsys, "replay", bundle)
    assert code == EXIT_OK
    assert "no divergence" in out


def test_replay_of_corrupt_bundle(capsys, bundle):
    (bundle / "report.json").write_text("{not json")
    assert cli(capsys, "replay", bundle)[0] == EXIT_USAGE
    (bundle / "report.json").unlink()
    assert cli(capsys, "replay", bundle)[0] == EXIT_USAGE


def test_run_prints_result(capsys, tmp_path):
    path = tmp_path / "id.cfdata"
    eye = np.eye(3)
    path.write_bytes(encode_data({"N": 3}, {n: eye for n in "ABCD"}))
    code, out, _ = cli(capsys, "run", CHAIN, "--input", path)
    assert code == EXIT_OK
    assert "status: completed" in out.lower() and "R =" in out


def test_run_with_symbol_only(capsys):
    code, out, _ = cli(capsys, "run", CHAIN, "--symbol", "N=2")
    assert code == EXIT_OK and "R =" in out


def test_diff(capsys, tmp_path):
    assert cli(capsys, "diff", CHAIN, CHAIN)[1].strip() == "no changes"
    p = matrix_chain()
    inst = match("map-tiling", p)[0]
    q, _ = apply(inst, p)
    save_program(q, str(tmp_path / "tiled.cfprog.json"))
    code, out, _ = cli(capsys, "diff", CHAIN, tmp_path / "tiled.cfprog.json")
    assert code == EXIT_OK
    for nid in inst.site[:2]:
        assert nid in out


def test_malformed_program(capsys, tmp_path):
    bad = tmp_path / "bad.cfprog.json"
    bad.write_text("{\"format\": 1")
    assert cli(capsys, "verify", bad, "--xform", "map-tiling", "--out", tmp_path)[0] == EXIT_USAGE
    assert cli(capsys, "run", tmp_path / "missing.cfprog.json")[0] == EXIT_USAGE


def test_bad_parameters(capsys, tmp_path):
    assert cli(capsys, "cutout", CHAIN, "--xform", "map-tiling", "--site", "n9999",
               "--out", tmp_path)[0] == EXIT_USAGE
    assert cli(capsys, "cutout", CHAIN, "--xform", "map-tiling", "--param", "tile_size",
               "--out", tmp_path)[0] == EXIT_USAGE
    assert cli(capsys, "cutout", CHAIN, "--xform", "no-such-kind", "--out", tmp_path)[0] == EXIT_USAGE


def test_fixtures_command(capsys, tmp_path):
    code, out, _ = cli(capsys, "fixtures", "--out", tmp_path)
    assert code == EXIT_OK
    assert (tmp_path / "matrix_chain.cfprog.json").exists()


def test_exit_code_is_a_function_of_the_report():
    def report(*verdicts):
        r = CampaignReport("p", 0)
        r.records = [InstanceRecord("map-tiling", f"n{i}", v) for i, v in enumerate(verdicts)]
        return r

    assert report("Valid", "Valid").exit_code() == EXIT_OK
    assert report("Valid", "Invalid").exit_code() == EXIT_INVALID
    assert report().exit_code() == EXIT_OK
    doc = report("Invalid", "Valid").to_doc()
    assert doc["totals"] == {"instances": 2, "tested": 2, "invalid": 1}


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cutflow", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == f"cutflow {__version__}"
