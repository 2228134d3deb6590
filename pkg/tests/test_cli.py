import csv
import dataclasses

import numpy as np
import pytest

from lowlight.checkpoint import checkpoint_save
from lowlight.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run_cli
from lowlight.config import ConfigError, parse_config, read_config_map
from lowlight.imageio import load_image
from lowlight.networks import Discriminator, Generator
from lowlight.synthetic import make_unpaired_set
from lowlight.training import TrainConfig

from helpers import randomize_zero_heads


# --- config ------------------------------------------------------------------


def write(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults_without_file():
    cfg, paths = parse_config()
    assert (cfg.patch_size, cfg.batch_size, cfg.beta1, cfg.beta2, cfg.epochs) == (256, 4, 0.9, 0.99, 80)
    assert paths == {}


def test_file_values_and_comments(tmp_path):
    path = write(tmp_path, "# training\nepochs=80\n\nbatch_size = 2  # small\nlow=/data/low\n")
    cfg, paths = parse_config(path)
    assert cfg.epochs == 80 and cfg.batch_size == 2
    assert paths == {"low": "/data/low"}


@pytest.mark.parametrize(
    "text,line",
    [("epochs=3\nbogus_key=1\n", 2), ("just words\n", 1), ("\n\nepochs=ten\n", 3), ("lr_g=\n", 1)],
)
def test_errors_name_the_line(tmp_path, text, line):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError, match=f":{line}:"):
        read_config_map(path)


def test_invalid_value_rejected(tmp_path):
    with pytest.raises(ConfigError, match="patch_size"):
        parse_config(write(tmp_path, "patch_size=30\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "none.cfg")


SAMPLE = {
    "patch_size": (64, 128),
    "batch_size": (2, 3),
    "epochs": (7, 9),
    "lr_g": (0.001, 0.002),
    "lr_d": (0.003, 0.004),
    "beta1": (0.5, 0.6),
    "beta2": (0.9, 0.95),
    "adam_eps": (1e-6, 1e-7),
    "a_max": (4.0, 6.0),
    "seed": (11, 12),
    "checkpoint_every": (2, 3),
    "fx_weights": ("a.llen", "b.llen"),
    "deterministic": (False, True),
}


def test_precedence_every_key(tmp_path):
    assert set(SAMPLE) == {f.name for f in dataclasses.fields(TrainConfig)}
    text = "".join(f"{k}={v[0]}\n" for k, v in SAMPLE.items())
    path = write(tmp_path, text)
    from_file, _ = parse_config(path)
    defaults = TrainConfig()
    for key, (file_value, cli_value) in SAMPLE.items():
        assert getattr(from_file, key) == file_value != getattr(defaults, key)
        cfg, _ = parse_config(path, {key: cli_value})
        assert getattr(cfg, key) == cli_value
        cfg, _ = parse_config(None, {key: cli_value})
        assert getattr(cfg, key) == cli_value
        cfg, _ = parse_config(path, {key: None})
        assert getattr(cfg, key) == file_value


# --- cli ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    return make_unpaired_set(root, count=3, size=24, seed=1)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    rng = np.random.default_rng(4)
    gen = randomize_zero_heads(Generator(rng), rng)
    path = tmp_path_factory.mktemp("ck") / "g.llen"
    checkpoint_save(path, gen, Discriminator(rng), {}, 0)
    return path


def test_no_command_is_usage_error(capsys):
    assert run_cli([]) == EXIT_USAGE
    assert run_cli(["enhance", "--input", "x"]) == EXIT_USAGE
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 2 and all(line.startswith("lowlight: error:") for line in err)


def test_enhance_missing_checkpoint(tmp_path, images, capsys):
    missing = tmp_path / "missing.llen"
    code = run_cli(["enhance", "--input", str(images[0]), "--checkpoint", str(missing), "--output", str(tmp_path / "o")])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert str(missing) in err and len(err.strip().splitlines()) == 1


def test_enhance_dir_idempotent(tmp_path, images, checkpoint):
    low = images[0]
    args = ["enhance", "--input", str(low), "--checkpoint", str(checkpoint)]
    assert run_cli(args + ["--output", str(tmp_path / "a")]) == EXIT_OK
    assert run_cli(args + ["--output", str(tmp_path / "b")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in low.iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        # 24 is not a multiple of 16, so this also covers the pad/crop path
        assert load_image(tmp_path / "a" / n).shape == (1, 3, 24, 24)


def test_enhance_single_file(tmp_path, images, checkpoint):
    src = sorted(images[0].iterdir())[0]
    out = tmp_path / "one.png"
    assert run_cli(["enhance", "--input", str(src), "--checkpoint", str(checkpoint), "--output", str(out)]) == 0
    assert load_image(out).shape == load_image(src).shape


def test_enhance_corrupt_checkpoint(tmp_path, images):
    bad = tmp_path / "bad.llen"
    bad.write_bytes(b"LLEN\x01")
    assert run_cli(["enhance", "--input", str(images[0]), "--checkpoint", str(bad), "--output", str(tmp_path)]) == EXIT_DATA


def test_eval_identical_dirs(tmp_path, images):
    out = tmp_path / "m.csv"
    assert run_cli(["eval", "--pred", str(images[1]), "--gt", str(images[1]), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4
    for r in rows:
        assert float(r["psnr"]) == 99.0
        assert float(r["ssim"]) == pytest.approx(1.0, abs=1e-6)


def test_eval_mismatch_listed_and_skipped(tmp_path, images, capsys):
    pred = tmp_path / "pred"
    pred.mkdir()
    src = sorted(images[1].iterdir())
    (pred / src[0].name).write_bytes(src[0].read_bytes())
    (pred / "extra.png").write_bytes(src[1].read_bytes())
    out = tmp_path / "m.csv"
    assert run_cli(["eval", "--pred", str(pred), "--gt", str(images[1]), "--out", str(out)]) == EXIT_OK
    err = capsys.readouterr().err
    assert "extra.png" in err and src[2].name in err
    assert [r["filename"] for r in csv.DictReader(out.open())] == [src[0].name, "MEAN"]


def test_eval_zero_pairs(tmp_path, images):
    assert run_cli(["eval", "--pred", str(images[0]), "--gt", str(images[1]), "--out", str(tmp_path / "m.csv")]) == EXIT_DATA


def test_train_bad_config(tmp_path, images):
    cfg = write(tmp_path, "bogus=1\n")
    code = run_cli(["train", "--low", str(images[0]), "--clean", str(images[1]), "--out", str(tmp_path), "--config", str(cfg)])
    assert code == EXIT_DATA


def test_train_missing_paths(tmp_path):
    assert run_cli(["train", "--out", str(tmp_path)]) == EXIT_USAGE


def test_train_smoke(tmp_path):
    low, clean = make_unpaired_set(tmp_path / "data", count=4, size=32, seed=0)
    cfg = write(tmp_path, f"patch_size=32\nbatch_size=2\nclean={clean}\n")
    out = tmp_path / "run"
    code = run_cli(["train", "--low", str(low), "--out", str(out), "--config", str(cfg), "--epochs", "1", "--seed", "3"])
    assert code == EXIT_OK
    assert list(out.glob("*.llen"))
    assert (out / "loss_log.csv").read_text().startswith("epoch,step,adv_d,adv_g,perc,total\n")
