import json
import os

import numpy as np
import pytest

from versa_motion.audio import write_wav
from versa_motion.cli import main, write_history
from versa_motion.formats import read_pose2d, read_tokens

TINY = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "tiny.json")


def run(capsys, *argv):
    code = main(["-q"] + list(argv))
    return code, capsys.readouterr().err


@pytest.fixture
def workspace(tmp_path, capsys):
    dirs = {"corpus": str(tmp_path / "corpus"), "runs": str(tmp_path / "runs")}
    code, _ = run(capsys, "data-synth", "-c", TINY, "--corpus", dirs["corpus"])
    assert code == 0
    dirs["common"] = ["-c", TINY, "--corpus", dirs["corpus"], "--runs", dirs["runs"]]
    return dirs


def test_data_synth_writes_a_manifest(workspace):
    with open(os.path.join(workspace["corpus"], "manifest.json")) as fh:
        manifest = json.load(fh)
    assert len(manifest["samples"]) == 36
    assert {e["split"] for e in manifest["samples"]} == {"train", "val", "test"}


def test_stages_must_run_in_order(workspace, capsys):
    code, err = run(capsys, "train", "text", *workspace["common"])
    assert code == 2
    assert "error[ORDERING]" in err
    code, err = run(capsys, "bank-build", *workspace["common"])
    assert code == 2 and "error[ORDERING]" in err


def test_config_errors_exit_with_code(workspace, capsys):
    code, err = run(capsys, "train", "vqvae", *workspace["common"], "--set", "tokenizer.nonsense=1")
    assert code == 2 and "error[CONFIG]" in err


def test_missing_audio_is_an_input_error(workspace, capsys, tmp_path):
    code, err = run(capsys, "generate", str(tmp_path / "none.wav"), *workspace["common"])
    assert code == 2
    assert "error[INPUT]" in err


@pytest.mark.parametrize("temperature", ["0", "-1"])
def test_non_positive_temperature_is_rejected(workspace, capsys, tmp_path, rng, temperature):
    wav = str(tmp_path / "clip.wav")
    write_wav(wav, rng.uniform(-0.3, 0.3, 16000).astype(np.float32))
    code, err = run(capsys, "generate", wav, *workspace["common"], "--sampling", "categorical",
                    "--temperature", temperature)
    assert code == 2
    assert "error[INVALID_INPUT]" in err


def test_loss_history_csv_carries_the_config_hash(tmp_path):
    path = tmp_path / "runs" / "text_loss.csv"
    write_history(str(path), [{"step": 1, "loss": 2.5}, {"step": 2, "loss": 1.25}], "0123abcd")
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# config_hash 0123abcd", "step,loss"]
    np.testing.assert_allclose(np.loadtxt(str(path), delimiter=",", skiprows=2), [[1, 2.5], [2, 1.25]])
    assert [p.name for p in path.parent.iterdir()] == ["text_loss.csv"]


@pytest.mark.slow
def test_full_pipeline(workspace, capsys, tmp_path, rng):
    common = workspace["common"]
    for stage in ("vqvae", "text", "audio"):
        code, err = run(capsys, "train", stage, *common, "--steps", "2")
        assert code == 0, err
        with open(os.path.join(workspace["runs"], f"{stage}_loss.csv")) as fh:
            assert fh.readline().startswith("# config_hash ")
    assert run(capsys, "bank-build", *common)[0] == 0

    wav = str(tmp_path / "clip.wav")
    write_wav(wav, rng.uniform(-0.3, 0.3, 16000).astype(np.float32))
    out = str(tmp_path / "out")
    code, err = run(capsys, "generate", wav, *common, "--text", "a person jumps up and down", "--out", out)
    assert code == 0, err
    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["windows"] == [0]
    assert len(manifest["provenance"]) == 5
    poses = read_pose2d(os.path.join(out, "poses.vp2d"))
    assert poses.T == 20

    translated = str(tmp_path / "again.vp2d")
    code, err = run(capsys, "translate", os.path.join(out, "tokens.vtok"), *common, "--out", translated)
    assert code == 0, err
    np.testing.assert_allclose(read_pose2d(translated).frames, poses.frames, atol=1e-6)
    ids, _ = read_tokens(os.path.join(out, "tokens.vtok"))
    assert ids.shape == (5,)

    frames = str(tmp_path / "frames")
    assert run(capsys, "render", os.path.join(out, "poses.vp2d"), "--out", frames)[0] == 0
    assert len(os.listdir(frames)) == 20

    code, err = run(capsys, "evaluate", *common)
    assert code == 2 and "error[PROTOCOL]" in err
