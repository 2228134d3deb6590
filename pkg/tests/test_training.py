import csv
import logging

import numpy as np
import pytest

from lowlight.checkpoint import checkpoint_load, read_checkpoint
from lowlight.losses import LossWeights, weight_schedule
from lowlight.networks import Discriminator, FeatureExtractor, Generator
from lowlight.optim import AdamState
from lowlight.synthetic import make_unpaired_set
from lowlight.tensor import Tensor
from lowlight.training import (
    LOG_HEADER,
    DatasetError,
    NonFiniteError,
    TrainConfig,
    epoch_plan,
    fit,
    sample_patch,
    scan_unpaired_dataset,
    train_step,
)

from helpers import low_light_batch, randomize_zero_heads


def small_cfg(**kw):
    base = dict(patch_size=32, batch_size=4, epochs=2, seed=0, checkpoint_every=5)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return make_unpaired_set(root, count=8, size=32, seed=3)


@pytest.fixture(scope="module")
def index(dataset):
    return scan_unpaired_dataset(*dataset)


# --- dataset -----------------------------------------------------------------


def test_scan_sorted(tmp_path):
    low, clean = make_unpaired_set(tmp_path, count=3, size=16)
    idx = scan_unpaired_dataset(low, clean)
    assert [p.name for p in idx.low_paths] == ["low_000.png", "low_001.png", "low_002.png"]
    assert len(idx.clean_paths) == 3


def test_scan_empty_dir(tmp_path):
    low, clean = make_unpaired_set(tmp_path, count=1, size=16)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DatasetError, match="empty"):
        scan_unpaired_dataset(empty, clean)
    with pytest.raises(DatasetError):
        scan_unpaired_dataset(tmp_path / "nope", clean)


def test_scan_skips_non_images_with_warning(tmp_path, caplog):
    low, clean = make_unpaired_set(tmp_path, count=2, size=16)
    (low / "notes.txt").write_text("x")
    with caplog.at_level(logging.WARNING):
        idx = scan_unpaired_dataset(low, clean)
    assert len(idx.low_paths) == 2
    assert "notes.txt" in caplog.text


def test_sample_patch_size_and_seed():
    img = Tensor(np.random.default_rng(0).random((1, 3, 80, 90)))
    a = sample_patch(img, 64, np.random.default_rng(5))
    b = sample_patch(img, 64, np.random.default_rng(5))
    assert a.shape == (1, 3, 64, 64)
    assert a.data.tobytes() == b.data.tobytes()


def test_sample_patch_pads_small_image():
    img = Tensor(np.random.default_rng(1).random((1, 3, 100, 100)))
    patch = sample_patch(img, 256, np.random.default_rng(0))
    assert patch.shape == (1, 3, 256, 256)
    # the original content is present somewhere inside (centred reflect pad)
    assert np.isin(img.data[0, 0, 50, 50], patch.data).item()


def test_epoch_plan_independent_streams(index):
    cfg = small_cfg(batch_size=2)
    low, clean, _ = epoch_plan(index, cfg, 0)
    assert low.shape == clean.shape == (4, 2)
    assert sorted(low.ravel()) == list(range(8))
    low2, clean2, _ = epoch_plan(index, cfg, 0)
    assert np.array_equal(low, low2) and np.array_equal(clean, clean2)
    low3, _, _ = epoch_plan(index, cfg, 1)
    assert not np.array_equal(low, low3)


# --- train_step --------------------------------------------------------------


def fresh(seed=0, randomize=False):
    rng = np.random.default_rng(seed)
    gen = Generator(rng)
    if randomize:
        randomize_zero_heads(gen, rng)
    disc = Discriminator(rng)
    fx = FeatureExtractor(seed)
    states = {"gen": AdamState.for_params(gen.parameters()), "disc": AdamState.for_params(disc.parameters())}
    return gen, disc, fx, states


def batches(seed=0):
    rng = np.random.default_rng(seed)
    return low_light_batch(rng, (2, 3, 32, 32)), Tensor(rng.uniform(0.3, 0.9, (2, 3, 32, 32)))


def params_of(*nets):
    return [p.data.copy() for net in nets for p in net.parameters()]


def test_zero_learning_rate_changes_nothing():
    gen, disc, fx, states = fresh()
    before = params_of(gen, disc)
    low, clean = batches()
    train_step(gen, disc, fx, low, clean, LossWeights(1, 1), states, small_cfg(lr_g=0.0, lr_d=0.0))
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before, params_of(gen, disc)))


def test_report_total_consistent():
    gen, disc, fx, states = fresh(randomize=True)
    low, clean = batches()
    w = weight_schedule(0)
    r = train_step(gen, disc, fx, low, clean, w, states, small_cfg())
    assert abs(r.total - (w.omega1 * r.adv_g + w.omega2 * r.perc)) < 1e-6
    assert (r.omega1, r.omega2) == (1.0, 0.5)


def test_discriminator_step_does_not_touch_generator():
    # With lr_g = 0 the generator can only move through gradients leaking from the D step.
    gen, disc, fx, states = fresh(randomize=True)
    low, clean = batches()
    before_g = params_of(gen)
    before_d = params_of(disc)
    train_step(gen, disc, fx, low, clean, LossWeights(1, 1), states, small_cfg(lr_g=0.0))
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before_g, params_of(gen)))
    assert any(a.tobytes() != b.tobytes() for a, b in zip(before_d, params_of(disc)))
    assert all(p.grad is None for p in gen.parameters())


def changed(before, net):
    return [not np.array_equal(a, p.data) for a, p in zip(before, net.parameters())]


def test_pam_and_decoder_move_after_two_steps():
    gen, disc, fx, states = fresh()
    pam_before = params_of(gen.pam)
    dec_before = params_of(*gen.decoder)
    low, clean = batches()
    for _ in range(2):
        train_step(gen, disc, fx, low, clean, LossWeights(1, 1), states, small_cfg())
    assert any(changed(pam_before, gen.pam))
    assert any(changed(dec_before, gen.decoder[-1]))


def test_pam_moves_after_one_step_with_live_heads():
    gen, disc, fx, states = fresh(randomize=True)
    before = params_of(gen.pam)
    low, clean = batches()
    train_step(gen, disc, fx, low, clean, LossWeights(1, 1), states, small_cfg())
    assert any(changed(before, gen.pam))


def test_non_finite_input_is_reported():
    gen, disc, fx, states = fresh()
    low, clean = batches()
    low.data[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="generator output"):
        train_step(gen, disc, fx, low, clean, LossWeights(1, 1), states, small_cfg())


def test_batch_mismatch():
    gen, disc, fx, states = fresh()
    low, clean = batches()
    with pytest.raises(ValueError):
        train_step(gen, disc, fx, low, Tensor(clean.data[:1]), LossWeights(1, 1), states)


# --- fit ---------------------------------------------------------------------


def read_log(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fit_step_count_and_checkpoint(index, tmp_path):
    final = fit(small_cfg(), index, tmp_path)
    rows = read_log(tmp_path / "loss_log.csv")
    assert ",".join(rows[0]) == LOG_HEADER
    assert len(rows) - 1 == 4
    assert [r[:2] for r in rows[1:]] == [["0", "0"], ["0", "1"], ["1", "0"], ["1", "1"]]
    assert sorted(p.name for p in tmp_path.glob("*.llen")) == [final.name]
    assert read_checkpoint(final)[1] == 2
    for r in rows[1:]:
        assert all(np.isfinite(float(v)) for v in r[2:])


def test_fit_rejects_tiny_dataset(dataset, tmp_path):
    idx = scan_unpaired_dataset(*dataset)
    idx.low_paths = idx.low_paths[:3]
    with pytest.raises(DatasetError):
        fit(small_cfg(), idx, tmp_path)


def test_schedule_handoff_logged(dataset, tmp_path, caplog):
    idx = scan_unpaired_dataset(*dataset)
    idx.low_paths = idx.low_paths[:4]
    with caplog.at_level(logging.INFO, logger="lowlight.training"):
        fit(small_cfg(epochs=6), idx, tmp_path)
    lines = [m for m in caplog.messages if m.startswith("epoch ")]
    assert "epoch 4: omega1=1 omega2=0.5" in lines
    assert "epoch 5: omega1=1 omega2=1" in lines
    # the CSV agrees: total = adv_g + omega2 * perc
    for r in read_log(tmp_path / "loss_log.csv")[1:]:
        epoch, adv_g, perc, total = int(r[0]), float(r[3]), float(r[4]), float(r[5])
        omega2 = 0.5 if epoch < 5 else 1.0
        assert abs(total - (adv_g + omega2 * perc)) < 1e-6


def test_checkpoint_cadence(dataset, tmp_path):
    idx = scan_unpaired_dataset(*dataset)
    idx.low_paths = idx.low_paths[:4]
    fit(small_cfg(epochs=5, checkpoint_every=2), idx, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.llen")) == [
        "checkpoint_epoch0002.llen",
        "checkpoint_epoch0004.llen",
        "checkpoint_epoch0005.llen",
    ]


def test_same_seed_same_bytes(index, tmp_path):
    a = fit(small_cfg(), index, tmp_path / "a")
    b = fit(small_cfg(), index, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    c = fit(small_cfg(seed=1), index, tmp_path / "c")
    assert a.read_bytes() != c.read_bytes()


def test_resume_matches_uninterrupted(dataset, tmp_path):
    idx = scan_unpaired_dataset(*dataset)
    idx.low_paths = idx.low_paths[:4]
    full = fit(small_cfg(epochs=4, checkpoint_every=2), idx, tmp_path / "full")
    half = fit(small_cfg(epochs=2), idx, tmp_path / "part")
    resumed = fit(small_cfg(epochs=4, checkpoint_every=2), idx, tmp_path / "part", resume=half)
    assert resumed.read_bytes() == full.read_bytes()
    assert len(read_log(tmp_path / "part" / "loss_log.csv")) == len(read_log(tmp_path / "full" / "loss_log.csv"))
    again = fit(small_cfg(epochs=4), idx, tmp_path / "part", resume=resumed)
    assert again == resumed


def test_fx_weights_from_file(index, tmp_path):
    from lowlight.checkpoint import write_checkpoint

    fx = FeatureExtractor(seed=42)
    path = tmp_path / "fx.llen"
    write_checkpoint(path, {k: v.data for k, v in fx.file_names().items()}, 0, {})
    loaded = FeatureExtractor.from_file(path)
    for a, b in zip(fx.parameters(), loaded.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    final = fit(small_cfg(epochs=1, fx_weights=str(path)), index, tmp_path / "run")
    gen, _, _, epoch = checkpoint_load(final)
    assert epoch == 1


@pytest.mark.parametrize(
    "kw", [dict(patch_size=30), dict(batch_size=0), dict(beta2=1.0), dict(a_max=1.0), dict(lr_g=-1.0)]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw).validate()
