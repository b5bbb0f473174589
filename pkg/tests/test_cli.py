import json

import numpy as np
import pytest

from haarmae import __version__
from haarmae.cli import main
from haarmae.msr import read_msr


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def synth_args(out_dir, count=6):
    return ["synth", "--out", str(out_dir), "--count", str(count),
            "--channels", "2", "--height", "16", "--width", "16",
            "--seed", "3"]


def test_synth_writes_dataset(tmp_path, capsys):
    code, out, _ = run(capsys, *synth_args(tmp_path / "data"))
    assert code == 0
    assert json.loads(out)["written"] == 6
    files = sorted((tmp_path / "data").glob("*.msr"))
    assert len(files) == 6
    info = json.loads((tmp_path / "data" / "run.json").read_text())
    assert info["version"] == __version__
    assert info["seed"] == 3
    assert info["config"]["count"] == 6


def test_dwt_idwt_round_trip(tmp_path, capsys):
    run(capsys, *synth_args(tmp_path / "data"))
    src = tmp_path / "data" / "r00000.msr"
    code, _, _ = run(capsys, "dwt", "--input", str(src),
                     "--out", str(tmp_path / "dec"), "--levels", "2")
    assert code == 0
    code, _, _ = run(capsys, "idwt", "--input", str(tmp_path / "dec"),
                     "--out", str(tmp_path / "back.msr"))
    assert code == 0
    a = read_msr(src).values
    b = read_msr(tmp_path / "back.msr").values
    assert float(np.abs(a - b).max()) < 1e-4


def test_pretrain_seeded_runs_identical(tmp_path, capsys):
    cfg = {
        "train": {"epochs": 2, "batch_size": 4, "seed": 7, "lr": 1e-3,
                  "levels": 2, "model_size": "tiny", "base_patch": 8,
                  "sh_degree": 5},
        "synth": {"count": 8, "channels": 2, "height": 16, "width": 16,
                  "seed": 5},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    for name in ("a", "b"):
        code, _, _ = run(capsys, "pretrain", "--config", str(cfg_path),
                         "--out", str(tmp_path / name))
        assert code == 0

    def stripped(path):
        return [
            {k: v for k, v in json.loads(l).items() if k != "wall_ms"}
            for l in open(path)
        ]

    assert stripped(tmp_path / "a" / "metrics.jsonl") == \
        stripped(tmp_path / "b" / "metrics.jsonl")
    info = json.loads((tmp_path / "a" / "run.json").read_text())
    assert info["config"]["train"]["lr"] == 1e-3
    assert info["config"]["encoder"]["dim"] == 64  # defaults echoed
    assert info["config"]["synth"]["count"] == 8


def test_pretrain_flag_overrides_config(tmp_path, capsys):
    cfg = {
        "train": {"epochs": 1, "batch_size": 4, "seed": 1, "lr": 1e-3,
                  "levels": 2, "model_size": "tiny", "base_patch": 8,
                  "sh_degree": 5},
        "synth": {"count": 4, "channels": 2, "height": 16, "width": 16,
                  "seed": 5},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "pretrain", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o"), "--seed", "9")
    assert code == 0
    info = json.loads((tmp_path / "o" / "run.json").read_text())
    assert info["seed"] == 9
    assert info["config"]["train"]["seed"] == 9


def test_config_unknown_keys_rejected(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"train": {"epochs": 1, "batch_size": 2,
                                              "seed": 0, "bogus": 1}}))
    code, _, err = run(capsys, "pretrain", "--config", str(cfg_path),
                       "--out", str(tmp_path / "o"))
    assert code == 1
    record = json.loads(err)
    assert record["error"]["category"] == "invalid-config"
    assert "bogus" in record["error"]["message"]


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path), "--bogus"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[0])["error"]["category"] == "usage"


def test_missing_file_error(tmp_path, capsys):
    code, _, err = run(capsys, "dwt", "--input", str(tmp_path / "nope.msr"),
                       "--out", str(tmp_path / "o"))
    assert code == 1
    assert json.loads(err)["error"]["category"] == "missing-file"


def test_bad_msr_is_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.msr"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    code, _, err = run(capsys, "dwt", "--input", str(bad),
                       "--out", str(tmp_path / "o"))
    assert code == 1
    assert json.loads(err)["error"]["category"] == "format"


def test_eval_pairs_raw(tmp_path, capsys):
    code, out, _ = run(capsys, "eval-gpe-pairs", "--out", str(tmp_path / "p"),
                       "--count", "100", "--seed", "1", "--raw",
                       "--degree", "12")
    assert code == 0
    result = json.loads(out)
    assert result["spearman"] < -0.5
    saved = json.loads((tmp_path / "p" / "pairs_eval.json").read_text())
    assert saved == result


def test_eval_pairs_projected_needs_checkpoint(tmp_path, capsys):
    code, _, err = run(capsys, "eval-gpe-pairs", "--out", str(tmp_path / "p"),
                       "--count", "10")
    assert code == 1
    assert json.loads(err)["error"]["category"] == "invalid-config"


def test_gradcheck_exit_codes(tmp_path, capsys):
    code, out, _ = run(capsys, "gradcheck", "--samples", "20",
                       "--out", str(tmp_path / "g"))
    assert code == 0
    rec = json.loads(out)
    assert rec["passed"] is True and rec["max_rel_err"] < 1e-6
    assert (tmp_path / "g" / "gradcheck.json").exists()
    # An impossible threshold must flip the exit code.
    code, out, _ = run(capsys, "gradcheck", "--samples", "20",
                       "--threshold", "1e-18")
    assert code == 1
    assert json.loads(out)["passed"] is False


def test_full_pipeline_on_disk(tmp_path, capsys):
    """synth -> pretrain -> tuples/features/reconstruct against the
    produced checkpoint."""
    data = tmp_path / "data"
    run(capsys, "synth", "--out", str(data), "--count", "24",
        "--channels", "2", "--height", "16", "--width", "16", "--seed", "5")
    cfg = {
        "train": {"epochs": 1, "batch_size": 8, "seed": 2, "levels": 2,
                  "model_size": "tiny", "base_patch": 8, "sh_degree": 5,
                  "dataset": str(data)},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "pretrain", "--config", str(cfg_path),
                     "--out", str(tmp_path / "run"))
    assert code == 0
    ckpt = tmp_path / "run" / "checkpoint.ckpt"

    code, out, _ = run(capsys, "eval-gpe-tuples", "--out", str(tmp_path / "t"),
                       "--checkpoint", str(ckpt), "--data", str(data),
                       "--count", "3", "--seed", "4")
    assert code == 0
    assert json.loads(out)["n_tuples"] == 3

    code, out, _ = run(capsys, "features", "--out", str(tmp_path / "f"),
                       "--checkpoint", str(ckpt),
                       "--input", str(data / "r00001.msr"))
    assert code == 0
    fmap = np.load(tmp_path / "f" / "features.npy")
    assert fmap.shape == (64, 2, 2)

    code, out, _ = run(capsys, "reconstruct", "--out", str(tmp_path / "r"),
                       "--checkpoint", str(ckpt),
                       "--input", str(data / "r00001.msr"), "--seed", "6")
    assert code == 0
    report = json.loads((tmp_path / "r" / "reconstruction.json").read_text())
    assert "psnr_db" in report and report["seed"] == 6
