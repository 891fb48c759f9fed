import csv
import json

import numpy as np
import pytest

from snfgp.archive import load_model
from snfgp.cli import main, read_spectrum

SMALL = ["gen-data", "--n-materials", "30", "--P", "64"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["--seed", "1", *SMALL, "--out", str(d / "d.csv")]) == 0
    assert main(["--seed", "2", "train", "--data", str(d / "d.csv"), "--out", str(d / "m.snfgp"),
                 "--k", "3", "--batch-size", "32", "--epochs", "5", "--no-wall-time"]) == 0
    return d


def test_gen_data_outputs(workdir, capsys):
    rows = (workdir / "d.csv").read_text().splitlines()
    assert len(rows) == 30 * 5 + 1
    assert (workdir / "d.csv.json").exists()
    main(["--seed", "1", *SMALL, "--out", str(workdir / "again.csv")])
    out = capsys.readouterr().out
    assert "150 spectra of 30 materials" in out and "train" in out
    assert (workdir / "again.csv").read_bytes() == (workdir / "d.csv").read_bytes()


def test_seed_from_environment(workdir, monkeypatch):
    monkeypatch.setenv("SNFGP_SEED", "1")
    assert main([*SMALL, "--out", str(workdir / "env.csv")]) == 0
    assert (workdir / "env.csv").read_bytes() == (workdir / "d.csv").read_bytes()


def test_invalid_fractions(workdir, capsys):
    code = main(["--json-errors", *SMALL, "--fractions", "0.9,0.9,0.9", "--out", str(workdir / "x.csv")])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["exit_code"] == 2


def test_train_outputs(workdir):
    trace = list(csv.reader(open(workdir / "m_trace.csv")))
    assert trace[0] == ["epoch", "train_objective", "val_objective", "wall_ms"]
    assert len(trace) == 6
    assert load_model(workdir / "m.snfgp").K == 3


def test_zero_epochs_gives_identity_flow(workdir):
    assert main(["train", "--data", str(workdir / "d.csv"), "--out", str(workdir / "z.snfgp"),
                 "--k", "3", "--epochs", "0"]) == 0
    m = load_model(workdir / "z.snfgp")
    assert np.array_equal(m.train_Z, m.train_W)


def test_missing_data_file(workdir, capsys):
    code = main(["train", "--data", str(workdir / "nope.csv"), "--out", str(workdir / "n.snfgp")])
    assert code == 2
    assert "nope.csv" in capsys.readouterr().err


def test_unwritable_output(workdir):
    assert main([*SMALL, "--out", str(workdir / "no_dir" / "x.csv")]) == 2


def test_training_divergence_exit_code(workdir, monkeypatch):
    import snfgp.model as model_mod

    real = model_mod._objective_and_grads
    calls = {"n": 0}

    def flaky(*args):
        calls["n"] += 1
        v, fg, gg = real(*args)
        return (np.inf if calls["n"] > 3 else v), fg, gg

    monkeypatch.setattr(model_mod, "_objective_and_grads", flaky)
    trace = workdir / "div_trace.csv"
    code = main(["train", "--data", str(workdir / "d.csv"), "--out", str(workdir / "div.snfgp"),
                 "--k", "3", "--batch-size", "32", "--epochs", "4", "--trace", str(trace)])
    assert code == 3
    assert trace.exists() and len(trace.read_text().splitlines()) >= 1


def test_sample(workdir, capsys):
    out = workdir / "s.csv"
    assert main(["--seed", "3", "sample", "--model", str(workdir / "m.snfgp"), "--x", "0.446",
                 "--n", "50", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 51 and len(rows[1].split(",")) == 64
    assert main(["sample", "--model", str(workdir / "m.snfgp"), "--x", "0.3", "--n", "1",
                 "--out", str(workdir / "one.csv")]) == 0
    assert len((workdir / "one.csv").read_text().splitlines()) == 2
    capsys.readouterr()
    assert main(["sample", "--model", str(workdir / "m.snfgp"), "--x", "1.4", "--n", "2",
                 "--out", str(workdir / "ext.csv")]) == 0
    assert "outside [0, 1]" in capsys.readouterr().err


def test_eval_alpha_monotone(workdir):
    for alpha, name in (("0.05", "e05.csv"), ("0.5", "e50.csv")):
        assert main(["--seed", "4", "eval", "--model", str(workdir / "m.snfgp"), "--data", str(workdir / "d.csv"),
                     "--alpha", alpha, "--n-samples", "40", "--out", str(workdir / name)]) == 0
    narrow = json.loads((workdir / "e05.json").read_text())["regimes"]
    wide = json.loads((workdir / "e50.json").read_text())["regimes"]
    for regime in narrow:
        assert wide[regime]["coverage"]["mean"] < narrow[regime]["coverage"]["mean"]


def test_infer_roundtrip(workdir):
    main(["--seed", "3", "sample", "--model", str(workdir / "m.snfgp"), "--x", "0.4",
          "--n", "3", "--out", str(workdir / "s4.csv")])
    out = workdir / "inf.json"
    assert main(["infer", "--model", str(workdir / "m.snfgp"), "--spectrum", str(workdir / "s4.csv"),
                 "--row", "1", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["interval_low"] <= res["x_mle"][0] <= res["interval_high"]
    assert (workdir / "inf_profile.csv").exists()


def test_infer_bad_confidence(workdir):
    code = main(["infer", "--model", str(workdir / "m.snfgp"), "--spectrum", str(workdir / "s.csv"),
                 "--confidence", "1.5", "--out", str(workdir / "bad.json")])
    assert code == 2


def test_infer_wrong_length(workdir, tmp_path):
    p = tmp_path / "short.csv"
    p.write_text("1,2,3\n")
    assert main(["infer", "--model", str(workdir / "m.snfgp"), "--spectrum", str(p),
                 "--out", str(tmp_path / "r.json")]) == 2


def test_read_spectrum_layouts(tmp_path):
    (tmp_path / "row.csv").write_text("y_0,y_1,y_2\n1,2,3\n4,5,6\n")
    assert read_spectrum(tmp_path / "row.csv", 1).tolist() == [4, 5, 6]
    (tmp_path / "col.csv").write_text("1\n2\n3\n")
    assert read_spectrum(tmp_path / "col.csv").tolist() == [1, 2, 3]


def test_config_file_and_unknown_key(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "data": {"n_materials": 30, "P": 64}}))
    assert main(["--config", str(cfg), "gen-data", "--out", str(tmp_path / "d.csv")]) == 0
    assert (tmp_path / "d.csv").read_bytes() == (workdir / "d.csv").read_bytes()
    cfg.write_text(json.dumps({"trian": {}}))
    assert main(["--config", str(cfg), "gen-data", "--out", str(tmp_path / "d2.csv")]) == 2


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert "properties" in json.loads(capsys.readouterr().out)
