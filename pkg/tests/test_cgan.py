import csv
import math

import numpy as np
import pytest
import torch

from demgan.cgan import (
    CheckpointPredictor,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    TrainingStageConfig,
    UNetGenerator,
    discriminator_loss,
    generator_forward,
    generator_loss,
    load_checkpoint,
    save_checkpoint,
    train_on_arrays,
)
from demgan.cgan.data import check_files
from demgan.cgan.models import count_parameters, init_weights
from demgan.cgan.train import LOG_COLUMNS, write_training_log
from demgan.curation import ManifestEntry
from demgan.errors import AlignmentError, ConfigError, DataError, DomainError, TrainingDivergedError

SMALL_G = GeneratorConfig(depth=3, base_channels=4)
SMALL_D = DiscriminatorConfig(base_channels=4, n_layers=2)


def toy_data(n=6, size=16, seed=0):
    rng = np.random.default_rng(seed)
    rgb = rng.uniform(-1, 1, (n, 3, size, size)).astype(np.float32)
    dem = np.tanh(rgb.mean(axis=1, keepdims=True) * 2).astype(np.float32)
    return rgb, dem


def bce_oracle(logits, label):
    return float(np.mean([math.log1p(math.exp(-z)) if label else math.log1p(math.exp(z)) for z in logits.ravel()]))


@pytest.mark.parametrize("size,depth", [(32, 3), (64, 4), (16, 2)])
def test_generator_shapes_and_range(size, depth):
    gen = UNetGenerator(GeneratorConfig(depth=depth, base_channels=4))
    out = gen(torch.randn(2, 3, size, size) * 3, stochastic=False)
    assert out.shape == (2, 1, size, size)
    assert out.abs().max() <= 1.0
    with pytest.raises(AlignmentError):
        gen(torch.zeros(1, 3, size + 2, size + 2))


@pytest.mark.parametrize("size,n_layers", [(64, 3), (32, 2), (256, 3), (8, 1)])
def test_discriminator_patch_grid(size, n_layers):
    cfg = DiscriminatorConfig(base_channels=2, n_layers=n_layers)
    out = PatchDiscriminator(cfg)(torch.zeros(1, 3, size, size), torch.zeros(1, 1, size, size))
    g = cfg.patch_grid(size)
    assert out.shape == (1, 1, g, g)
    assert g == size // 2**n_layers - 2


def test_discriminator_rejects_misaligned_pairs():
    with pytest.raises(AlignmentError):
        PatchDiscriminator(SMALL_D)(torch.zeros(1, 3, 16, 16), torch.zeros(1, 1, 8, 8))


def test_dropout_is_the_only_noise():
    torch.manual_seed(0)
    gen = UNetGenerator(SMALL_G)
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    assert torch.equal(gen(x, stochastic=False), gen(x, stochastic=False))
    assert not torch.equal(gen(x, stochastic=True), gen(x, stochastic=True))
    quiet = UNetGenerator(GeneratorConfig(depth=3, base_channels=4, dropout=0.0))
    assert torch.equal(quiet(x, stochastic=True), quiet(x, stochastic=True))


def test_generator_forward_checks_domain():
    gen = UNetGenerator(SMALL_G)
    with pytest.raises(DomainError):
        generator_forward(gen, torch.full((1, 3, 16, 16), 1.5))


def test_init_weights_statistics():
    torch.manual_seed(1)
    gen = UNetGenerator(GeneratorConfig(depth=4, base_channels=32))
    init_weights(gen)
    w = torch.cat([m.weight.reshape(-1) for m in gen.modules() if isinstance(m, torch.nn.Conv2d)])
    assert abs(w.mean().item()) < 1e-3
    assert w.std().item() == pytest.approx(0.02, rel=0.05)
    assert all(m.bias.abs().max() == 0 for m in gen.modules() if isinstance(m, torch.nn.Conv2d))


def test_losses_match_bce_oracle():
    rng = np.random.default_rng(2)
    real = torch.tensor(rng.normal(size=(2, 1, 3, 3)))
    fake = torch.tensor(rng.normal(size=(2, 1, 3, 3)))
    total, r, f = discriminator_loss(real, fake)
    assert r.item() == pytest.approx(bce_oracle(real.numpy(), 1), rel=1e-12)
    assert f.item() == pytest.approx(bce_oracle(fake.numpy(), 0), rel=1e-12)
    assert total.item() == pytest.approx(r.item() + f.item())
    pred = torch.tensor(rng.uniform(-1, 1, (2, 1, 4, 4)))
    tgt = torch.tensor(rng.uniform(-1, 1, (2, 1, 4, 4)))
    g_total, gan, l1 = generator_loss(fake, pred, tgt, 100.0)
    assert gan.item() == pytest.approx(bce_oracle(fake.numpy(), 1), rel=1e-12)
    assert l1.item() == pytest.approx(np.abs(pred.numpy() - tgt.numpy()).mean(), rel=1e-12)
    assert g_total.item() == pytest.approx(gan.item() + 100 * l1.item())
    with pytest.raises(AlignmentError):
        generator_loss(fake, pred, tgt[:, :, :2])


def test_stage_config_validation():
    with pytest.raises(ConfigError):
        TrainingStageConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainingStageConfig(stage="stage3")
    with pytest.raises(ConfigError):
        TrainingStageConfig(lambda_l1=-1)


def test_training_reduces_l1_and_is_deterministic():
    rgb, dem = toy_data()
    cfg = TrainingStageConfig(steps=60, batch_size=3, seed=4)
    a, rows_a = train_on_arrays(rgb, dem, cfg, gen_cfg=SMALL_G, disc_cfg=SMALL_D)
    b, rows_b = train_on_arrays(rgb, dem, cfg, gen_cfg=SMALL_G, disc_cfg=SMALL_D)
    assert rows_a == rows_b
    assert [r["step"] for r in rows_a] == list(range(1, 61))
    assert np.mean([r["l1_term"] for r in rows_a[-10:]]) < np.mean([r["l1_term"] for r in rows_a[:10]])
    for k in a.generator_state:
        assert torch.equal(a.generator_state[k], b.generator_state[k])


def test_checkpoint_roundtrip_and_resume(tmp_path):
    rgb, dem = toy_data()
    ck, _ = train_on_arrays(rgb, dem, TrainingStageConfig(steps=5, batch_size=2), gen_cfg=SMALL_G, disc_cfg=SMALL_D)
    path = save_checkpoint(tmp_path / "c.pt", ck)
    back = load_checkpoint(path)
    assert back.step == 5 and back.config_hash == ck.config_hash and back.stages == ["stage1"]
    pred_a = CheckpointPredictor(ck)(rgb)
    pred_b = CheckpointPredictor(back)(rgb)
    assert np.array_equal(pred_a, pred_b)

    s2 = TrainingStageConfig(learning_rate=1e-4, steps=3, batch_size=2, stage="stage2")
    ck2, rows = train_on_arrays(rgb, dem, s2, init=back)
    assert ck2.step == 8 and [r["step"] for r in rows] == [6, 7, 8]
    assert ck2.stages == ["stage1", "stage2"]
    groups = ck2.optimizer_state["generator"]["param_groups"]
    assert all(g["lr"] == 1e-4 for g in groups)


def test_checkpoint_hash_mismatch_is_rejected(tmp_path):
    rgb, dem = toy_data()
    ck, _ = train_on_arrays(rgb, dem, TrainingStageConfig(steps=0), gen_cfg=SMALL_G, disc_cfg=SMALL_D)
    ck.config_hash = "0" * 16
    save_checkpoint(tmp_path / "c.pt", ck)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "c.pt")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.pt")


def test_non_finite_loss_raises():
    rgb, dem = toy_data()
    rgb[:] = np.nan
    with pytest.raises(TrainingDivergedError):
        train_on_arrays(rgb, dem, TrainingStageConfig(steps=2, batch_size=2), gen_cfg=SMALL_G, disc_cfg=SMALL_D)


def test_empty_training_set_raises():
    with pytest.raises(DataError):
        train_on_arrays(np.zeros((0, 3, 16, 16), np.float32), np.zeros((0, 1, 16, 16), np.float32),
                        TrainingStageConfig(steps=1))


def test_training_log_columns(tmp_path):
    rows = [{"step": 1, "gen_total": 1.5, "gan_term": 0.5, "l1_term": 0.01, "disc_total": 1.3}]
    path = write_training_log(tmp_path / "log.csv", rows)
    got = list(csv.reader(path.open()))
    assert tuple(got[0]) == LOG_COLUMNS and got[1] == ["1", "1.5", "0.5", "0.01", "1.3"]


def test_missing_tiles_are_listed(tmp_path):
    entries = [ManifestEntry("a", "x.tif", "y.tif"), ManifestEntry("b", "z.tif", "w.tif")]
    with pytest.raises(DataError, match="4 tile file"):
        check_files(entries, tmp_path)


def test_tiny_models_are_small():
    gen = UNetGenerator(GeneratorConfig(depth=2, base_channels=2))
    assert count_parameters(gen) < 500
