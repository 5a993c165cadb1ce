import json
import os

import pytest

from rcmlab.cli import (EXIT_IO, EXIT_OK, EXIT_PRECONDITION, ExperimentConfig,
                        load_config, main)


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def base_config(**extra):
    cfg = {
        "geometry": {"d": 2, "L": 8},
        "environment": {"kind": "uniform-elliptic-iid", "low": 0.5, "high": 2.0},
        "seed": 11,
    }
    cfg.update(extra)
    return cfg


def read_dir_bytes(path):
    return {name: (path / name).read_bytes() for name in sorted(os.listdir(path))}


def test_config_roundtrip_and_hash():
    cfg = ExperimentConfig(base_config(heat={"times": [1.0], "sources": [[0, 0]]}))
    again = ExperimentConfig(json.loads(cfg.canonical_json()))
    assert again.canonical_json() == cfg.canonical_json()
    assert again.config_hash == cfg.config_hash
    assert len(cfg.config_hash) == 16


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown configuration keys"):
        ExperimentConfig(base_config(extra_section={}))
    with pytest.raises(ValueError, match="unknown keys in 'heat'"):
        ExperimentConfig(base_config(heat={"times": [1.0], "sourcez": []}))
    with pytest.raises(ValueError, match="unknown keys in 'geometry'"):
        ExperimentConfig({"geometry": {"d": 2, "L": 8, "shape": "cube"},
                          "environment": {"kind": "constant"}, "seed": 0})
    with pytest.raises(ValueError, match="needs"):
        ExperimentConfig({"geometry": {"d": 2, "L": 8}, "seed": 0})


def test_env_roundtrip_and_determinism(tmp_path):
    cfg_path = write_config(tmp_path, base_config())
    assert main(["env", "--config", cfg_path, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["env", "--config", cfg_path, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert read_dir_bytes(tmp_path / "a") == read_dir_bytes(tmp_path / "b")

    from rcmlab.environment import read_field, sample_environment
    from rcmlab.cli import load_config as lc

    config = lc(cfg_path)
    field = read_field(tmp_path / "a" / "field.rcm")
    direct = sample_environment(config.environment, config.geometry, config.seed)
    import numpy as np

    assert np.array_equal(field.values, direct.values)


def test_env_corrupted_magic(tmp_path):
    cfg_path = write_config(tmp_path, base_config())
    main(["env", "--config", cfg_path, "--out", str(tmp_path / "a")])
    raw = bytearray((tmp_path / "a" / "field.rcm").read_bytes())
    raw[:4] = b"ZZZZ"
    (tmp_path / "a" / "field.rcm").write_bytes(bytes(raw))
    from rcmlab.environment import read_field

    with pytest.raises(ValueError, match="bad format"):
        read_field(tmp_path / "a" / "field.rcm")


def test_heat_rows_and_zero_time(tmp_path):
    cfg = base_config(heat={"times": [0.0, 1.0], "sources": [[0, 0], [1, 1]],
                            "targets": [[0, 0], [1, 0], [2, 0]]})
    cfg_path = write_config(tmp_path, cfg)
    assert main(["heat", "--config", cfg_path, "--out", str(tmp_path / "h")]) == EXIT_OK
    lines = (tmp_path / "h" / "heat.csv").read_text().splitlines()
    assert lines[0].startswith("#config_hash=")
    assert lines[1] == "t,x,y,prob,hk"
    assert len(lines) == 2 + 2 * 2 * 3
    # the zero-time slice is a point mass at the source
    delta_row = [l for l in lines if l.startswith("0.0,0 0,0 0,")][0]
    assert delta_row.split(",")[3] == "1.0"


def test_threads_flag_does_not_change_bytes(tmp_path, monkeypatch):
    cfg = base_config(heat={"times": [1.5], "sources": [[0, 0]]})
    cfg_path = write_config(tmp_path, cfg)
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "t1"), "--threads", "1"])
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "t4"), "--threads", "4"])
    assert read_dir_bytes(tmp_path / "t1") == read_dir_bytes(tmp_path / "t4")
    monkeypatch.setenv("RCMLAB_THREADS", "4")
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "tenv")])
    assert read_dir_bytes(tmp_path / "t1") == read_dir_bytes(tmp_path / "tenv")


def test_seed_override_changes_output(tmp_path):
    cfg_path = write_config(tmp_path, base_config(heat={"times": [1.0], "sources": [[0, 0]]}))
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "s1")])
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "s2"), "--seed", "99"])
    assert read_dir_bytes(tmp_path / "s1") != read_dir_bytes(tmp_path / "s2")


def test_verify_self_mode_empty_violations(tmp_path):
    cfg = {
        "geometry": {"d": 2, "L": 16},
        "environment": {"kind": "constant", "level": 1.0},
        "seed": 1,
        "verify": {"times": [4.0, 8.0, 16.0], "sources": [[0, 0]],
                   "moment_samples": 16, "mode": "self"},
    }
    cfg_path = write_config(tmp_path, cfg)
    assert main(["verify", "--config", cfg_path, "--out", str(tmp_path / "v")]) == EXIT_OK
    report = json.loads((tmp_path / "v" / "envelope.json").read_text())
    assert report["n_violations"] == 0
    svg = (tmp_path / "v" / "envelope.svg").read_text()
    assert svg.count("<circle") == report["n_checked"]


def test_verify_cross_mode_and_violation_csv(tmp_path):
    cfg = {
        "geometry": {"d": 2, "L": 32},
        "environment": {"kind": "uniform-elliptic-iid", "low": 0.5, "high": 2.0},
        "seed": 3,
        "verify": {"times": [8.0, 16.0], "sources": [[0, 0]], "moment_samples": 200},
    }
    cfg_path = write_config(tmp_path, cfg)
    rc = main(["verify", "--config", cfg_path, "--out", str(tmp_path / "v")])
    assert rc in (EXIT_OK, 2)
    report = json.loads((tmp_path / "v" / "envelope.json").read_text())
    lines = (tmp_path / "v" / "violations.csv").read_text().splitlines()
    assert len(lines) == 2 + report["n_violations"]


def test_verify_injected_weak_constant_exits_two(tmp_path):
    cfg = {
        "geometry": {"d": 2, "L": 16},
        "environment": {"kind": "constant", "level": 1.0},
        "seed": 1,
        "verify": {"times": [4.0, 8.0, 16.0], "sources": [[0, 0]],
                   "moment_samples": 16, "mode": "self",
                   "inject_upper_scale": 0.25},
    }
    cfg_path = write_config(tmp_path, cfg)
    assert main(["verify", "--config", cfg_path, "--out", str(tmp_path / "v")]) == 2
    report = json.loads((tmp_path / "v" / "envelope.json").read_text())
    assert report["n_violations"] > 0
    assert any(v["side"] == "upper" and v["y"] == v["x"] for v in report["violations"])


def test_chain_command_and_near_diagonal_exit(tmp_path):
    cfg = {
        "geometry": {"d": 2, "L": 32},
        "environment": {"kind": "constant", "level": 1.0},
        "seed": 0,
        "chain": {"target": [6, 0], "time": 24.0},
    }
    cfg_path = write_config(tmp_path, cfg)
    assert main(["chain", "--config", cfg_path, "--out", str(tmp_path / "c")]) == EXIT_OK
    report = json.loads((tmp_path / "c" / "chain.json").read_text())
    assert report["sound"] is True and report["steps_valid"] is True

    near = dict(cfg, chain={"target": [2, 0], "time": 64.0})
    near_path = write_config(tmp_path, near, "near.json")
    assert main(["chain", "--config", near_path,
                 "--out", str(tmp_path / "c2")]) == EXIT_PRECONDITION


def test_moments_command_row_count(tmp_path):
    cfg = base_config(moments={"quantity": "mu", "p": 1, "eta": 2.0,
                               "sizes": [[1, 0], [3, 1], [5, 2], [7, 3]],
                               "samples": 60, "mean_samples": 32})
    cfg["geometry"] = {"d": 2, "L": 16}
    cfg_path = write_config(tmp_path, cfg)
    assert main(["moments", "--config", cfg_path, "--out", str(tmp_path / "m")]) == EXIT_OK
    lines = (tmp_path / "m" / "ladder.csv").read_text().splitlines()
    assert len(lines) == 2 + 4
    report = json.loads((tmp_path / "m" / "moments.json").read_text())
    assert len(report["sizes"]) == 4


def test_green_command_and_dimension_guard(tmp_path):
    cfg = {
        "geometry": {"d": 3, "L": 16},
        "environment": {"kind": "constant", "level": 1.0},
        "seed": 2,
        "green": {"pairs": [[[0, 0, 0], [3, 0, 0]]], "envelope_times": [8.0, 16.0]},
    }
    cfg_path = write_config(tmp_path, cfg)
    assert main(["green", "--config", cfg_path, "--out", str(tmp_path / "g")]) == EXIT_OK
    report = json.loads((tmp_path / "g" / "green.json").read_text())
    assert report["mode"] == "quenched" and len(report["values"]) == 1
    csv_text = (tmp_path / "g" / "green.csv").read_text()
    assert "np.float" not in csv_text  # plain shortest round-trip floats only
    value_cell = csv_text.splitlines()[2].split(",")[3]
    assert float(value_cell) == pytest.approx(report["values"][0])

    flat = dict(cfg, geometry={"d": 2, "L": 16},
                green={"pairs": [[[0, 0], [3, 0]]]})
    flat_path = write_config(tmp_path, flat, "flat.json")
    assert main(["green", "--config", flat_path,
                 "--out", str(tmp_path / "g2")]) == EXIT_PRECONDITION


def test_missing_config_is_io_error(tmp_path):
    assert main(["heat", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_IO


def test_bad_config_is_precondition_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["heat", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_PRECONDITION
    cfg_path = write_config(tmp_path, base_config())  # heat section missing
    assert main(["heat", "--config", cfg_path, "--out", str(tmp_path / "y")]) == EXIT_PRECONDITION


def test_outputs_embed_hash_and_version(tmp_path):
    cfg = base_config(heat={"times": [1.0], "sources": [[0, 0]]})
    cfg_path = write_config(tmp_path, cfg)
    main(["heat", "--config", cfg_path, "--out", str(tmp_path / "h")])
    config = load_config(cfg_path)
    first = (tmp_path / "h" / "heat.csv").read_text().splitlines()[0]
    assert config.config_hash in first and "0.1.0" in first
