import csv
import io
import json
import subprocess
import sys

import pytest

from noniid_qlearn import cli

SMALL = {
    "definetti-thm2": ["--N", "8", "--trials", "200"],
    "definetti-gf": ["--N", "8", "--trials", "200"],
    "appendix-b": ["--l", "4", "--w", "2", "--k", "2"],
    "appendix-a": ["--N", "4"],
    "shadows-bench": ["--trials", "20"],
    "verify": ["--trials", "20", "--N", "60"],
    "verify-expectation": ["--trials", "20", "--N", "200", "--kA", "60"],
    "fidelity": ["--trials", "20", "--N", "60"],
    "tomography": ["--trials", "20", "--N", "60"],
    "mixedness": ["--trials", "20", "--N", "60"],
    "coupon": ["--trials", "500"],
    "distortion": ["--trials", "200"],
}


def invoke(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_every_subcommand_is_covered():
    assert set(SMALL) == set(cli.SUBCOMMANDS)


@pytest.mark.parametrize("sub", cli.SUBCOMMANDS)
def test_subcommand_smoke(sub, capsys):
    code, out, err = invoke([sub, *SMALL[sub], "--format", "json"], capsys)
    assert code in (0, 2), err
    doc = json.loads(out)
    assert doc["config"]["subcommand"] == sub
    assert len(doc["config_hash"]) == 40
    assert doc["rows"] and set(doc["columns"]) <= set(doc["rows"][0])


def test_appendix_b_p_star(capsys):
    code, out, _ = invoke(["appendix-b", "--l", "4", "--w", "2", "--k", "2"], capsys)
    assert code == 0
    (row,) = rows(out)
    assert float(row["p_star"]) == 0.5
    assert row["holds"] == "true"


def test_appendix_a_passes(capsys):
    code, out, _ = invoke(["appendix-a", "--N", "6"], capsys)
    assert code == 0
    assert rows(out)[0]["pass"] == "true"


def test_csv_is_deterministic(capsys):
    argv = ["definetti-thm2", "--state", "basis-mixture", "--N", "8", "--k", "1", "--trials", "10000", "--seed", "7"]
    first = invoke(argv, capsys)[1]
    second = invoke(argv, capsys)[1]
    assert first == second
    assert float(rows(first)[0]["lhs_mean"]) > 0


def test_k_out_of_range(capsys):
    code, _, err = invoke(["definetti-thm2", "--N", "8", "--k", "4"], capsys)
    assert code == 1
    assert "1 <= k < N/2" in err


def test_all_problems_reported(capsys):
    code, _, err = invoke(["coupon", "--epsilon", "2", "--trials", "0"], capsys)
    assert code == 1
    assert "epsilon" in err and "trials" in err


def test_empty_config_means_defaults(tmp_path, capsys):
    cfg = tmp_path / "empty.json"
    cfg.write_text("")
    code, out, _ = invoke(["coupon", "--config", str(cfg), "--format", "json"], capsys)
    assert code == 0
    echo = json.loads(out)["config"]
    assert echo["kA"] == cli.DEFAULTS["kA"] and echo["trials"] == cli.DEFAULTS["trials"]


def test_flag_beats_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kA": 3, "trials": 100}))
    code, out, _ = invoke(["coupon", "--config", str(cfg), "--kA", "5", "--format", "json"], capsys)
    echo = json.loads(out)["config"]
    assert (echo["kA"], echo["trials"]) == (5, 100)


def test_parse_error_location(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "kA": 3,\n  oops\n}')
    code, _, err = invoke(["coupon", "--config", str(cfg)], capsys)
    assert code == 1
    assert "line 3" in err and "column" in err


def test_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kappa": 1}')
    code, _, err = invoke(["coupon", "--config", str(cfg)], capsys)
    assert code == 1 and "kappa" in err


def test_out_file(tmp_path, capsys):
    target = tmp_path / "r.csv"
    code, out, _ = invoke(["coupon", "--trials", "100", "--out", str(target)], capsys)
    assert code == 0 and out == ""
    assert rows(target.read_text())[0]["K"] == "16"


def test_timestamps_opt_in(capsys):
    plain = json.loads(invoke(["coupon", "--trials", "50", "--format", "json"], capsys)[1])
    stamped = json.loads(invoke(["coupon", "--trials", "50", "--format", "json", "--timestamps"], capsys)[1])
    assert "timestamps" not in plain and "timestamps" in stamped
    assert plain["config_hash"] == stamped["config_hash"]


def test_config_hash_is_git_blob():
    echo = {"a": 1}
    body = json.dumps(echo, sort_keys=True, separators=(",", ":")).encode()
    git = subprocess.run(["git", "hash-object", "--stdin"], input=body, capture_output=True)
    if git.returncode != 0:
        pytest.skip("git unavailable")
    assert cli.config_hash(echo) == git.stdout.decode().strip()


def test_run_accepts_dict():
    env = cli.run("coupon", {"trials": 100, "kA": 2})
    assert env.rows[0]["kA"] == 2


def test_console_entry():
    res = subprocess.run([sys.executable, "-m", "noniid_qlearn.cli", "coupon", "--trials", "50"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("kA,")
