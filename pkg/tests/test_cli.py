import json

import pytest

from intense.cli import UsageError, main, parse_tf_indices


def test_parse_tf_indices():
    assert parse_tf_indices("13") == [(1, 3)]
    assert parse_tf_indices("12,13,23,123") == [(1, 2), (1, 3), (2, 3), (1, 2, 3)]
    assert parse_tf_indices("[1,13]") == [(1, 13)]
    assert parse_tf_indices("12,[1,13]") == [(1, 2), (1, 13)]
    assert parse_tf_indices("") == []
    for bad in ("1a", "[1,,2]", "11", "[1,2"):
        with pytest.raises(UsageError):
            parse_tf_indices(bad)


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    return code


def test_generate_balance_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(["generate", "--dataset", "synthgene", "--seed", 7, "--n", 200, "--out", a]) == 0
    assert run(["generate", "--dataset", "synthgene", "--seed", 7, "--n", 200, "--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = [json.loads(x) for x in a.read_text().splitlines()[1:]]
    assert len(rows) == 200 and sum(r["label"] == 1 for r in rows) == 100
    assert "class balance: 100 positive / 100 negative" in capsys.readouterr().out
    assert run(["generate", "--dataset", "synthgene-tri", "--seed", 7, "--n", 40,
                "--out", tmp_path / "x.jsonl"]) == 0
    assert len(json.loads((tmp_path / "x.jsonl").read_text().splitlines()[1])["mods"]) == 3


def test_generate_usage_errors(tmp_path):
    assert run(["generate", "--n", 7, "--out", tmp_path / "a.jsonl"]) == 2
    assert run(["generate", "--probs", "0.5,x", "--out", tmp_path / "a.jsonl"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--dataset", "mnist", "--out", str(tmp_path / "a")])
    assert exc.value.code == 2


@pytest.fixture
def xor_file(tmp_path):
    path = tmp_path / "xor.jsonl"
    assert run(["generate", "--dataset", "synthgene-tri", "--seed", 1, "--n", 200,
                "--out", path]) == 0
    return path


def test_train_outputs_and_report(tmp_path, xor_file):
    out = tmp_path / "run"
    assert run(["train", "--method", "intense", "--tf-indices", "12,13,23,123",
                "--dataset", xor_file, "--epochs", 1, "--out", out]) == 0
    rel = json.loads((out / "relevance.json").read_text())
    assert len(rel["scores"]) == 7
    assert sum(r["share"] for r in rel["scores"]) == pytest.approx(1.0)
    assert (out / "history.csv").read_text().startswith("epoch,lr,train_loss,val_loss")
    assert (out / "checkpoint.json").is_file()
    for m in (1, 2):
        assert run(["train", "--modalities", m, "--dataset", xor_file, "--epochs", 1,
                    "--out", tmp_path / f"uni{m}"]) == 0
    assert run(["report", "--run", out, "--unimodal", tmp_path / "uni1",
                "--unimodal", tmp_path / "uni2", "--out", tmp_path / "rep"]) == 0
    lines = (tmp_path / "rep.csv").read_text().splitlines()
    assert lines[0] == "set,beta,share,accuracy,max" and len(lines) == 8
    assert sum(line.endswith(",1") for line in lines[1:]) == 1
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["pearson"] is not None and len(rep["rows"]) == 7


def test_train_errors(tmp_path, xor_file):
    assert run(["train", "--dataset", tmp_path / "missing.jsonl", "--out", tmp_path / "o"]) == 2
    assert run(["train", "--dataset", xor_file, "--tf-indices", "14", "--method", "intense",
                "--out", tmp_path / "o"]) == 2
    assert run(["train", "--dataset", xor_file, "--tf-indices", "12",
                "--out", tmp_path / "o"]) == 2  # mnl takes no interactions
    assert run(["train", "--dataset", xor_file, "--lr", -1, "--out", tmp_path / "o"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path, xor_file):
    assert run(["train", "--dataset", xor_file, "--lr", 1e300, "--epochs", 2,
                "--out", tmp_path / "o"]) == 3


def test_config_precedence(tmp_path, xor_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3, "lr": 0.01, "batch-size": 16}))
    assert run(["train", "--dataset", xor_file, "--config", cfg, "--epochs", 1,
                "--out", tmp_path / "o"]) == 0
    ck = json.loads((tmp_path / "o" / "checkpoint.json").read_text())["config"]
    assert (ck["epochs"], ck["lr"], ck["batch_size"]) == (1, 0.01, 16)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["train", "--dataset", xor_file, "--config", cfg, "--out", tmp_path / "o"]) == 2


def test_report_missing_inputs(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run(["report", "--run", tmp_path / "empty", "--out", tmp_path / "r"]) == 2


def test_verify_scoped_and_seeded(tmp_path, capsys):
    assert run(["verify", "--suite", "theorem2", "--order", 4, "--out", tmp_path / "v.json"]) == 0
    summary = json.loads((tmp_path / "v.json").read_text())
    assert summary["passed"] and all("[4]" in c["name"] for c in summary["checks"])
    assert run(["verify", "--suite", "prop3", "--seed", 1, "--out", tmp_path / "a.json"]) == 0
    assert run(["verify", "--suite", "prop3", "--seed", 2, "--out", tmp_path / "b.json"]) == 0
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    assert a["passed"] and b["passed"] and a["checks"] != b["checks"]
    assert run(["verify", "--order", 5]) == 2


def test_verify_failure_exit_code(monkeypatch):
    import intense.analysis as A
    from intense.analysis import CheckResult
    monkeypatch.setitem(A.SUITES, "lemmas",
                        lambda seed: [CheckResult("lemmas", "forced", False, 1.0, 0.0)])
    assert run(["verify", "--suite", "lemmas"]) == 1
