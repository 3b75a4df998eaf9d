import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from wae_lab.checkpoint import load_checkpoint
from wae_lab.cli import build_parser, main
from wae_lab.data import write_idx
from wae_lab.grids import read_pgm, to_bytes
from wae_lab.metrics import read_metrics
from wae_lab.models import reconstruct
from wae_lab.ot import DeterministicDecoderTable, DiscreteDistribution, Instance, format_instance, random_instance

FAST = ["--set", "encoder_hidden=16", "--set", "decoder_hidden=16", "--set", "batch_size=50",
        "--set", "dataset=mixture:count=200,seed=0"]
COMMANDS = ["train", "eval", "sample", "reconstruct", "interpolate", "verify"]


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    """Tiny MNIST-shaped IDX set: 60 images of random bars."""
    root = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(0)
    imgs = np.zeros((60, 28, 28), dtype=np.uint8)
    for im in imgs:
        r, c = rng.integers(4, 20, size=2)
        im[r:r + 8, c:c + 3] = 255
    write_idx(root / "train-images-idx3-ubyte", imgs)
    write_idx(root / "train-labels-idx1-ubyte", rng.integers(0, 10, size=60).astype(np.uint8))
    return root


def _image_flags(image_dir):
    return ["--set", "encoder_hidden=32", "--set", "decoder_hidden=32", "--set", "batch_size=20",
            "--set", "d_z=4", "--set", "decoder_output=sigmoid", "--set", "mnist_train=40",
            "--set", "mnist_test=20", "--dataset", f"mnist:{image_dir}"]


@pytest.mark.parametrize("command", COMMANDS)
def test_help_lists_flags_with_defaults(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--out",) + (("--set", "--config", "--seed", "--checkpoint") if command != "verify" else ("--random",)):
        assert flag in text
    assert "default" in text


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "wae_lab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert all(c in res.stdout for c in COMMANDS)


def test_train_epochs_zero_writes_manifest_and_initial_checkpoint(tmp_path):
    out = tmp_path / "run"
    assert main(["train", *FAST, "--set", "epochs=0", "--out", str(out)]) == 0
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    assert files == ["checkpoints/epoch_0000.ckpt", "config.ini", "manifest.json"]


def test_misspelled_key_suggests_the_right_one(tmp_path, capsys):
    assert main(["train", "--set", "lamda=10", "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert "'lambda'" in err and "valid keys" in err


def test_bad_values_and_missing_data_exit_codes(tmp_path):
    assert main(["train", "--set", "penalty_kind=wasserstein", "--out", str(tmp_path / "a")]) == 2
    assert main(["train", "--dataset", f"mnist:{tmp_path / 'nowhere'}", "--out", str(tmp_path / "b")]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 3


def test_numeric_abort_exit_code(tmp_path):
    out = tmp_path / "boom"
    code = main(["train", *FAST, "--set", "epochs=2", "--set", "lr=1e300", "--out", str(out)])
    assert code == 4
    assert (out / "checkpoints" / "last_good.ckpt").exists()


def test_rerun_is_byte_identical(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", *FAST, "--set", "epochs=3", "--set", "checkpoint_every=1", "--out", str(out)]) == 0
    strip = lambda p: [{k: v for k, v in r.items() if k != "wall_clock_s"} for r in read_metrics(p)]
    assert strip(outs[0] / "metrics.csv") == strip(outs[1] / "metrics.csv")
    for rel in ["model.ckpt", "checkpoints/epoch_0001.ckpt", "checkpoints/epoch_0003.ckpt", "config.ini",
                "manifest.json", "training_curves.png", "samples.png"]:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_config_file_round_trip_reproduces_run(tmp_path):
    first = tmp_path / "first"
    assert main(["train", *FAST, "--set", "epochs=2", "--set", "lambda=3", "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert main(["train", "--config", str(first / "config.ini"), "--out", str(second)]) == 0
    assert (first / "model.ckpt").read_bytes() == (second / "model.ckpt").read_bytes()


def test_default_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("WAE_LAB_OUT", str(tmp_path / "root"))
    assert main(["train", *FAST, "--set", "epochs=1"]) == 0
    (run,) = list((tmp_path / "root").iterdir())
    assert (run / "metrics.csv").exists()
    assert read_metrics(run / "metrics.csv")[0]["run_id"] == run.name


def test_resume_matches_uninterrupted_run(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["train", *FAST, "--set", "epochs=4", "--out", str(full)]) == 0
    assert main(["train", *FAST, "--set", "epochs=2", "--out", str(part)]) == 0
    assert main(["train", "--checkpoint", str(part / "model.ckpt"), "--set", "epochs=4"]) == 0
    assert (full / "model.ckpt").read_bytes() == (part / "model.ckpt").read_bytes()
    strip = lambda p: [{k: v for k, v in r.items() if k != "wall_clock_s"} for r in read_metrics(p)]
    assert strip(full / "metrics.csv") == strip(part / "metrics.csv")
    assert main(["train", "--checkpoint", str(part / "model.ckpt"), "--set", "lambda=1"]) == 2


def test_2d_eval_sample_reconstruct_interpolate(tmp_path):
    out = tmp_path / "run"
    assert main(["train", *FAST, "--set", "epochs=2", "--out", str(out)]) == 0
    ckpt = str(out / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--samples", "200"]) == 0
    row = read_metrics(out / "metrics.csv")[-1]
    assert np.isfinite(float(row["fd_features"])) and row["sharpness_samples"] == ""
    assert (out / "eval_samples.png").exists()
    assert main(["sample", "--checkpoint", ckpt, "--count", "7"]) == 0
    assert len((out / "samples.csv").read_text().splitlines()) == 8
    assert main(["reconstruct", "--checkpoint", ckpt, "--count", "5"]) == 0
    assert main(["interpolate", "--checkpoint", ckpt, "--pairs", "2", "--steps", "3"]) == 0
    assert len((out / "interpolations.csv").read_text().splitlines()) == 1 + 6


def test_eval_rejects_dimension_mismatch(tmp_path, image_dir):
    out = tmp_path / "run"
    assert main(["train", *FAST, "--set", "epochs=1", "--out", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--dataset", f"mnist:{image_dir}",
                 "--set", "mnist_train=40", "--set", "mnist_test=20"]) == 3


def test_image_eval_writes_grids(tmp_path, image_dir):
    out = tmp_path / "img"
    assert main(["train", *_image_flags(image_dir), "--set", "epochs=2", "--out", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--samples", "64", "--steps", "6"]) == 0
    row = read_metrics(out / "metrics.csv")[-1]
    for key in ("recon_test", "sharpness_samples", "fd_features"):
        assert np.isfinite(float(row[key]))
    for name in ("samples", "reconstructions", "interpolations"):
        assert (out / f"{name}.pgm").exists() and (out / f"{name}_grid.png").exists()

    ckpt = load_checkpoint(out / "model.ckpt")
    from wae_lab.cli import resolve_dataset
    test_x = resolve_dataset(ckpt.config.dataset, ckpt.config).test_x
    grid = read_pgm(out / "reconstructions.pgm")
    tile = lambda r, c: grid[1 + r * 29:1 + r * 29 + 28, 1 + c * 29:1 + c * 29 + 28]
    # odd rows real, even rows their reconstructions: row pairs match tile by tile
    real = tile(0, 0)
    match = [i for i in range(len(test_x)) if (to_bytes(test_x[i]).reshape(28, 28) == real).all()]
    assert match
    recon = to_bytes(reconstruct(ckpt.model, test_x[match[0]][None]))[0].reshape(28, 28)
    assert (tile(1, 0) == recon).all()

    interp = read_pgm(out / "interpolations.pgm")
    assert interp.shape[1] == 6 * 29 + 1


def test_no_writes_outside_run_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "run"
    assert main(["train", *FAST, "--set", "epochs=1", "--out", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--samples", "50"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run"]


# --- verify ---------------------------------------------------------------------------

def test_verify_random(tmp_path, capsys):
    assert main(["verify", "--random", "50", "7", "--out", str(tmp_path)]) == 0
    assert "50/50 pass" in capsys.readouterr().out
    assert len((tmp_path / "verify.csv").read_text().splitlines()) == 51
    assert (tmp_path / "verify_gaps.png").exists()


def test_verify_single_atom_instance(tmp_path, capsys):
    inst = Instance(DiscreteDistribution([[1.0, 2.0]], [1.0]), DiscreteDistribution([[0.0]], [1.0]),
                    DeterministicDecoderTable([[1.0, 2.0]]))
    path = tmp_path / "one.txt"
    path.write_text(format_instance(inst))
    assert main(["verify", str(path)]) == 0
    out = capsys.readouterr().out
    assert "0.000e+00" in out and "1/1 pass" in out


def test_verify_corrupted_decoder_table(tmp_path, capsys):
    text = format_instance(random_instance(np.random.default_rng(3)))
    lines = text.splitlines()
    path = tmp_path / "bad.txt"
    path.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["verify", str(path)]) == 3
    assert "line" in capsys.readouterr().err


def test_verify_needs_input():
    assert main(["verify"]) == 2
    assert main(["verify", "/nonexistent/instances.txt"]) == 3


def test_parser_covers_every_command():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert sorted(sub.choices) == sorted(COMMANDS)
