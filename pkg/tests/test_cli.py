import csv
import io
import json
from pathlib import Path

import pytest

from chainorder.cli import parse_config, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return p


def _sample_cfg(**exp):
    return {"target": {"name": "cone", "parameters": {"dim": 2}},
            "kernels": [{"kind": "simple_slice"}],
            "experiment": {"seed": 3, "n": 20, **exp},
            "output": {"directory": "unused", "formats": ["csv", "json"]}}


def _compare_cfg(n_pairs=100):
    return {"target": {"name": "gaussian_box", "parameters": {"dim": 2}},
            "kernels": [{"kind": "rwm", "proposal": {"kind": "ball_walk", "delta": 1.0}},
                        {"kind": "hybrid_slice"}, {"kind": "hit_and_run", "inner_grid": 512},
                        {"kind": "simple_slice"}],
            "experiment": {"seed": 1, "n_pairs": n_pairs, "mse_n": 5, "mse_replications": 20},
            "output": {"formats": ["csv", "json"]}}


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


# ---------------------------------------------------------------------------
# sample


def test_sample_zero_steps(tmp_path):
    cfg = _write(tmp_path, _sample_cfg(n=0, x0=[0.1, 0.2]))
    assert run(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(io.StringIO((tmp_path / "o" / "trace.csv").read_bytes().decode())))
    assert rows == [["step", "x_1", "x_2", "accepted"], ["0", "0.10000000000000001", "0.20000000000000001", ""]]


def test_sample_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, _sample_cfg())
    for out in ("a", "b"):
        assert run(["sample", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b and set(a) == {"trace.csv", "trace.json", "manifest.json"}


def test_sample_seed_flag_overrides(tmp_path):
    cfg = _write(tmp_path, _sample_cfg())
    run(["sample", "--config", str(cfg), "--out", str(tmp_path / "a")])
    run(["sample", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a["trace.csv"] != b["trace.csv"]
    assert json.loads(b["manifest.json"])["seed"] == 4


def test_format_flag(tmp_path):
    cfg = _write(tmp_path, _sample_cfg())
    run(["sample", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "json"])
    assert set(_files(tmp_path / "o")) == {"trace.json", "manifest.json"}


def test_unknown_kernel_is_a_config_error(tmp_path, capsys):
    body = _sample_cfg()
    body["kernels"] = [{"kind": "gibbs"}]
    assert run(["sample", "--config", str(_write(tmp_path, body))]) == 2
    assert "kernels[0].kind" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, key", [
    (lambda b: b.update(extra=1), "extra"),
    (lambda b: b["target"].update(colour="red"), "colour"),
    (lambda b: b["experiment"].update(steps=3), "steps"),
    (lambda b: b["experiment"].pop("seed"), "seed"),
    (lambda b: b["target"].update(name="banana"), "banana"),
    (lambda b: b["output"].update(formats=["xml"]), "formats"),
])
def test_config_errors_name_the_key(tmp_path, capsys, mutate, key):
    body = _sample_cfg()
    mutate(body)
    assert run(["sample", "--config", str(_write(tmp_path, body))]) == 2
    assert key in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "target": {"name": "cone",}\n}')
    assert run(["sample", "--config", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, _sample_cfg(x0=[3.0, 0.0]))
    assert run(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    body = _sample_cfg()
    body["target"] = {"name": "uniform_ball", "parameters": {"dim": 3}}
    body["kernels"] = [{"kind": "simple_slice", "attempt_cap": 1}]
    body["experiment"]["n"] = 500
    cfg = _write(tmp_path, body)
    assert run(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "EfficiencyError" in capsys.readouterr().err


def test_config_hash_tracks_semantic_fields():
    base = _sample_cfg()
    h = parse_config(json.dumps(base), "sample").digest()
    moved = dict(base, output={"directory": "elsewhere", "formats": ["json"]})
    assert parse_config(json.dumps(moved), "sample").digest() == h
    longer = _sample_cfg(n=21)
    assert parse_config(json.dumps(longer), "sample").digest() != h
    assert parse_config(json.dumps(base), "sample", seed=9).digest() != h


def test_no_temporary_files_left(tmp_path):
    cfg = _write(tmp_path, _sample_cfg())
    run(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert not [p for p in (tmp_path / "o").iterdir() if p.name.startswith(".")]


# ---------------------------------------------------------------------------
# lab and representation


def test_lab_default_d1(tmp_path):
    assert run(["lab", "--config", str(CONFIGS / "lab_d1.json"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "ordering.json").read_text())["verdict"] == "PASS"


def test_lab_default_d2(tmp_path):
    assert run(["lab", "--config", str(CONFIGS / "lab_d2.json"), "--out", str(tmp_path)]) == 0


def test_lab_negative_control(tmp_path):
    assert run(["lab", "--config", str(CONFIGS / "lab_negative.json"), "--out", str(tmp_path)]) == 4
    text = (tmp_path / "ordering.csv").read_text()
    assert "FAIL" in text


@pytest.mark.parametrize("name", ["check_simple_d1", "check_rwm_d2"])
def test_check_representation_configs(tmp_path, name):
    assert run(["check-representation", "--config", str(CONFIGS / f"{name}.json"),
                "--out", str(tmp_path)]) == 0
    body = json.loads((tmp_path / "representation.json").read_text())
    assert [r["verdict"] for r in body["reports"]] == ["PASS"] * 4


def test_check_representation_corrupted(tmp_path):
    code = run(["check-representation", "--config", str(CONFIGS / "check_simple_d1.json"),
                "--out", str(tmp_path), "--corrupt"])
    assert code == 4
    body = json.loads((tmp_path / "representation.json").read_text())
    assert body["reports"][0]["check"].startswith("reversibility") and body["reports"][0]["verdict"] == "FAIL"


def test_check_representation_bad_pair(tmp_path):
    body = json.loads((CONFIGS / "check_simple_d1.json").read_text())
    body["experiment"]["pair"] = "gibbs_vs_hybrid"
    assert run(["check-representation", "--config", str(_write(tmp_path, body))]) == 2


# ---------------------------------------------------------------------------
# compare


def test_compare_small_sample_exits_zero(tmp_path):
    cfg = _write(tmp_path, _compare_cfg(100))
    assert run(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "compare.json").read_text())["verdict"] in ("PASS", "INCONCLUSIVE")


def test_compare_missing_kernel(tmp_path, capsys):
    body = _compare_cfg()
    body["kernels"].pop(2)
    assert run(["compare", "--config", str(_write(tmp_path, body))]) == 2
    assert "'H'" in capsys.readouterr().err


@pytest.mark.slow
def test_compare_shipped_config(tmp_path):
    assert run(["compare", "--config", str(CONFIGS / "compare_uniform_d2.json"),
                "--out", str(tmp_path)]) == 0


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["lab", "--config", str(CONFIGS / "lab_negative.json"),
                "--out", str(blocker / "sub")]) == 2
