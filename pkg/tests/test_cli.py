from pathlib import Path

import pytest
import yaml

from bittrain.cli import main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def small_train_doc(**over):
    doc = {
        "seed": 7,
        "max_workers": 4,
        "micro_batch": 4,
        "dataset_size": 128,
        "minibatches": 12,
        "determinism": "d1",
        "devices": {"gpu_fast": 2, "gpu_mid": 3},
        "layout": [{"device": "gpu_fast"}, {"device": "gpu_fast"}],
    }
    doc.update(over)
    return doc


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def test_train_twice_byte_identical(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "cfg.yaml", small_train_doc())
    out_a, out_b = tmp_path / "a.log", tmp_path / "b.log"
    assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert "final param hash" in capsys.readouterr().out


def test_train_layouts_match_and_checkpoint_written(tmp_path, capsys):
    one = write_yaml(
        tmp_path / "one.yaml", small_train_doc(layout=[{"device": "gpu_fast"}])
    )
    four = write_yaml(
        tmp_path / "four.yaml",
        small_train_doc(layout=[{"device": "gpu_fast"} for _ in range(4)]),
    )
    log1, log4 = tmp_path / "one.log", tmp_path / "four.log"
    ckpt = tmp_path / "final.ckpt"
    assert main(["train", "--config", str(one), "--out", str(log1), "--ckpt", str(ckpt)]) == 0
    assert main(["train", "--config", str(four), "--out", str(log4)]) == 0
    assert ckpt.read_bytes()[:4] == b"ESCK"
    assert main(["bitdiff", str(log1), str(log4)]) == 0
    assert capsys.readouterr().out.strip().endswith("IDENTICAL")


def test_bitdiff_reports_divergence_step(tmp_path, capsys):
    base = small_train_doc()
    kind_change = small_train_doc(
        layout=[{"device": "gpu_mid"}, {"device": "gpu_mid"}]
    )
    log_a, log_b = tmp_path / "a.log", tmp_path / "b.log"
    main(["train", "--config", str(write_yaml(tmp_path / "a.yaml", base)), "--out", str(log_a)])
    main(["train", "--config", str(write_yaml(tmp_path / "b.yaml", kind_change)), "--out", str(log_b)])
    assert main(["bitdiff", str(log_a), str(log_b)]) == 1
    assert "first divergence at step 1" in capsys.readouterr().out


def test_bitdiff_shape_mismatch_is_usage_error(tmp_path, capsys):
    a = small_train_doc()
    b = small_train_doc(max_workers=2, layout=[{"device": "gpu_fast"}])
    log_a, log_b = tmp_path / "a.log", tmp_path / "b.log"
    main(["train", "--config", str(write_yaml(tmp_path / "a.yaml", a)), "--out", str(log_a)])
    main(["train", "--config", str(write_yaml(tmp_path / "b.yaml", b)), "--out", str(log_b)])
    assert main(["bitdiff", str(log_a), str(log_b)]) == 2


def test_reprocheck_small_matrix(tmp_path, capsys):
    doc = {
        "steps": 12,
        "config": {
            "seed": 3,
            "max_workers": 4,
            "micro_batch": 4,
            "dataset_size": 128,
            "devices": {"gpu_fast": 2, "gpu_mid": 3},
        },
        "scenarios": [
            {"level": "S1", "run_a": {"layout": [{"device": "gpu_fast"}]},
             "run_b": {"layout": [{"device": "gpu_fast"}]}},
            {"level": "S3", "run_a": {"layout": [{"device": "gpu_fast"}]},
             "run_b": {"layout": [{"device": "gpu_mid"}]}},
        ],
    }
    matrix = write_yaml(tmp_path / "matrix.yaml", doc)
    assert main(["reprocheck", "--mode", "d1", "--matrix", str(matrix)]) == 0
    out = capsys.readouterr().out
    assert "S1  BITWISE-EQUAL" in out
    assert "S3  DIVERGED" in out

    assert main(["reprocheck", "--mode", "d1d2", "--matrix", str(matrix)]) == 0
    assert "S3  BITWISE-EQUAL" in capsys.readouterr().out


def test_plan_prints_three_one_split(capsys):
    rc = main([
        "plan",
        "--pool", str(FIXTURES / "pool_pair.yaml"),
        "--profile", str(FIXTURES / "profile_cnn.yaml"),
        "--maxp", "4",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    top = lines[2]  # header is two lines deep
    assert "1xgpu_fast,1xgpu_small" in top
    assert "3,1" in top  # threads split


def test_simulate_single_trivial_job(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    trace.write_text(
        "job_id,arrival_s,minP,maxP,total_minibatches,workload_key,determinism\n"
        "1,0.0,0,1,49,cnn,d1d2\n"
    )
    rc = main([
        "simulate", "--trace", str(trace), "--pool", str(FIXTURES / "pool_pair.yaml"),
        "--mode", "heter", "--out", str(tmp_path / "out"),
    ])
    assert rc == 0
    jobs_csv = (tmp_path / "out" / "jobs.csv").read_text().splitlines()
    # One GPU at capability 2.45: JCT = 49 / 2.45 = 20 seconds.
    assert jobs_csv[1].startswith("1,0.0,20.0,20.0,0")


def test_simulate_fixture_modes(tmp_path):
    outs = {}
    for mode in ("yarn", "homo", "heter"):
        rc = main([
            "simulate", "--trace", str(FIXTURES / "trace20.csv"),
            "--pool", str(FIXTURES / "pool8.yaml"),
            "--mode", mode, "--out", str(tmp_path / mode),
        ])
        assert rc == 0
        outs[mode] = (tmp_path / mode / "summary.csv").read_text().splitlines()[1]
    jct = {m: float(line.split(",")[1]) for m, line in outs.items()}
    assert jct["heter"] < jct["homo"] < jct["yarn"]


def test_usage_errors_exit_two(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["train", "--config", str(missing), "--out", str(tmp_path / "x.log")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required flags
    assert exc.value.code == 2


def test_shipped_restart_fixture_matches_uninterrupted_run(tmp_path, capsys):
    """The fixture's 2->3 executor restart reproduces an uninterrupted run."""
    restarted_log = tmp_path / "restarted.log"
    assert main([
        "train", "--config", str(FIXTURES / "train_d1.yaml"), "--out", str(restarted_log),
    ]) == 0
    ref_doc = yaml.safe_load((FIXTURES / "train_d1.yaml").read_text())
    del ref_doc["restarts"]
    ref_doc["layout"] = [{"device": "gpu_fast"} for _ in range(4)]
    ref_log = tmp_path / "reference.log"
    assert main([
        "train", "--config", str(write_yaml(tmp_path / "ref.yaml", ref_doc)),
        "--out", str(ref_log),
    ]) == 0
    capsys.readouterr()
    assert main(["bitdiff", str(restarted_log), str(ref_log)]) == 0
    assert capsys.readouterr().out.strip() == "IDENTICAL"
