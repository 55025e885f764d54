import csv
import json
import os

import pytest

from semimatch import cli
from semimatch.experiments import PLOT_HEADER, TrialRecord, load_records
from semimatch.verify import CHECKS, run_all


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


def read_record(path):
    with open(path) as fh:
        return TrialRecord.from_json(fh.readline())


def test_trial_writes_record_and_is_reproducible(tmp_path, capsys):
    out = tmp_path / "o"
    argv = ["trial", "--n", "64", "--seed", "7", "--domain", "torus", "--N", "128", "--out", str(out)]
    code, _ = run(argv, capsys)
    assert code == cli.EXIT_OK
    path = out / "trial_n64_seed7.jsonl"
    first = read_record(path)
    assert first.ok and first.n == 64
    manifest = json.load(open(out / "manifest_trial.json"))
    assert manifest["subcommand"] == "trial" and "timestamp" in manifest
    run(argv, capsys)
    assert read_record(path).to_json(volatile=False) == first.to_json(volatile=False)


def test_missing_n_is_a_usage_error(tmp_path, capsys):
    code, out = run(["trial", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_USAGE
    assert "usage" in out.err


def test_invalid_config_is_a_usage_error(tmp_path, capsys):
    code, _ = run(["trial", "--n", "64", "--N", "100", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        cli.main(["trial", "--domain", "disk"])
    assert exc.value.code == cli.EXIT_USAGE


def test_config_file_with_flag_override(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# tiny trial\nn = 32\nseed = 3\nN = 64  # grid\ndomain = square\n")
    code, _ = run(["trial", "--config", str(conf), "--seed", "4", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    rec = read_record(tmp_path / "trial_n32_seed4.jsonl")
    assert rec.config["domain"] == "square" and rec.config["N"] == 64
    bad = tmp_path / "bad.conf"
    bad.write_text("colour = blue\n")
    assert run(["trial", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == cli.EXIT_USAGE
    assert run(["trial", "--config", str(tmp_path / "missing.conf")], capsys)[0] == cli.EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    import semimatch.experiments as ex
    from semimatch.semidiscrete import SolverError

    def boom(*a, **k):
        raise SolverError("stalled")

    monkeypatch.setattr(ex, "solve_semidiscrete", boom)
    code, out = run(["trial", "--n", "16", "--N", "64", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_NUMERICAL
    assert "semidiscrete_m_mun" in out.err


def test_sweep_outputs_and_resume(tmp_path, capsys):
    out = tmp_path / "s"
    argv = ["sweep", "--ns", "64,128", "--trials", "4", "--N", "128", "--jobs", "1", "--out", str(out)]
    code, _ = run(argv, capsys)
    assert code == cli.EXIT_OK
    records = load_records(out / "records.jsonl")
    assert len(records) == 8
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and rows[0]["schema_version"] == "1"
    for name in ("r1", "r2", "r3", "r4", "grad_ratio", "linf_exponent"):
        with open(out / f"plot_{name}.csv") as fh:
            lines = list(csv.reader(fh))
        assert tuple(lines[0]) == PLOT_HEADER
        assert all(len(l) == 4 for l in lines)
    # rerunning finds everything cached and appends nothing
    before = (out / "records.jsonl").read_text()
    assert run(argv, capsys)[0] == cli.EXIT_OK
    assert (out / "records.jsonl").read_text() == before


def test_output_dir_from_environment(tmp_path, capsys, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    monkeypatch.chdir(tmp_path)
    assert run(["trial", "--n", "16", "--N", "64"], capsys)[0] == cli.EXIT_OK
    assert sorted(os.listdir(tmp_path)) == ["env-out"]
    assert (target / "trial_n16_seed0.jsonl").exists()


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["trial", "--n", "16", "--N", "64", "--out", str(blocker / "sub")], capsys)[0] == cli.EXIT_USAGE


def test_verify_all_pass_and_injection(capsys):
    code, out = run(["verify"], capsys)
    assert code == cli.EXIT_OK
    for name in CHECKS:
        assert name in out.out
    assert "FAIL" not in out.out
    code, out = run(["verify", "--inject", "heat.semigroup"], capsys)
    assert code == cli.EXIT_NUMERICAL
    assert [l for l in out.out.splitlines() if "FAIL" in l][0].startswith("heat.semigroup")
    assert run(["verify", "--inject", "nope"], capsys)[0] == cli.EXIT_USAGE


def test_verify_covers_every_module():
    prefixes = {name.split(".")[0] for name in CHECKS}
    assert prefixes == {"geometry", "fields", "heat", "hopflax", "semidiscrete", "stability"}
    assert all(r.passed for r in run_all(only=["geometry.triangle_inequality"]))


def test_stability_and_hopflax_demo(tmp_path, capsys):
    code, out = run(["stability", "--N", "32", "--n", "10", "--scales", "0,1", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    lines = (tmp_path / "stability.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["ratio"] == pytest.approx(1.0)
    code, out = run(["hopflax-demo", "--N", "64", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    assert "Hamilton-Jacobi residual" in out.out
    header = (tmp_path / "hopflax_demo.csv").read_text().splitlines()[0]
    assert header == "x1,x2,f,Q_grid,Q_characteristics"
    assert run(["hopflax-demo", "--N", "64", "--eps", "0.03", "--t", "5", "--out", str(tmp_path)],
               capsys)[0] == cli.EXIT_USAGE
