import json

import pytest

from noan.cli import EXIT_ERROR, EXIT_OK, main

FAST = ["--dim", "8", "--epochs", "2"]


def test_solve_json(capsys):
    assert main(["solve", "ABC:ABD::IJK:?", "--seed", "1", "--json", *FAST]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["problem"] == "ABC:ABD::IJK:?" and doc["seed"] == 1
    assert [e["rank"] for e in doc["entries"]] == list(range(1, 21))


def test_solve_writes_outputs(tmp_path, capsys):
    assert main(["solve", "A:A::B:?", "--out", str(tmp_path), *FAST]) == EXIT_OK
    assert {p.name for p in tmp_path.iterdir()} == {"ranked.json", "checkpoint.json", "train_log.csv"}
    assert "wrote" in capsys.readouterr().out


def test_solve_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["solve", "ABC:ABD::XYZ:?", "--seed", "3", "--out", str(tmp_path / d), *FAST]) == 0
    assert (tmp_path / "a/ranked.json").read_bytes() == (tmp_path / "b/ranked.json").read_bytes()


def test_solve_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs_max=1\nd=8\n")
    assert main(["solve", "A:B::C:?", "--config", str(cfg), "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["entries"]


def test_parse_error_exit(capsys):
    assert main(["solve", "ABC:ABD:IJK", *FAST]) == EXIT_ERROR
    assert "parse" in capsys.readouterr().err


def test_usage_error_exit():
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == EXIT_ERROR


def test_bad_seed_list():
    with pytest.raises(SystemExit) as exc:
        main(["bench", "murena", "--seeds", ","])
    assert exc.value.code == EXIT_ERROR


def test_missing_dataset(tmp_path, capsys):
    assert main(["bench", str(tmp_path / "none.json")]) == EXIT_ERROR


def test_gen_data(tmp_path, capsys):
    assert main(["gen-data", "ABC:ABD::IJK:?", "--out", str(tmp_path)]) == EXIT_OK
    train = json.loads((tmp_path / "train.json").read_text())
    assert {"lhs": "ABC", "rhs": "ABD", "label": True,
            "expr": "(!A | !B | !C) | (A & B & D)"} in train
    cands = json.loads((tmp_path / "candidates.json").read_text())
    assert len(cands["candidates"]) == 20


def test_gradcheck(capsys):
    assert main(["gradcheck", "--graphs", "5"]) == EXIT_OK
    assert "5 graphs" in capsys.readouterr().out


def test_gradcheck_failure_exit():
    assert main(["gradcheck", "--graphs", "3", "--tol", "0"]) == EXIT_ERROR


def test_inspect(tmp_path, capsys):
    main(["solve", "A:A::B:?", "--out", str(tmp_path), *FAST])
    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "checkpoint.json")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines if ln.startswith("r")] == [f"r{i}" for i in range(1, 11)]


def test_bench_small(tmp_path, capsys):
    ds = {"name": "toy", "problems": [
        {"problem": "ABC:ABD::IJK:?", "answers": [{"answer": "IJL", "selected": 90, "pisa_rank": 1}]}]}
    f = tmp_path / "toy.json"
    f.write_text(json.dumps(ds))
    out = tmp_path / "r.csv"
    assert main(["bench", str(f), "--seeds", "1", "--format", "csv", "--out", str(out), *FAST]) == 0
    assert out.read_text() == capsys.readouterr().out
