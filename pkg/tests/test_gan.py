import numpy as np
import pytest

from vpre.gan import (Discriminator, GanConfig, GanPair, Generator, Adam,
                      discriminator_step, fake_loss, generator_step, load_pair,
                      real_loss, save_pair, train_gan)
from vpre.synth import SyntheticStyleSpec, generate_synthetic


def fresh_pair(n_categories=4, side=16, seed=0):
    cfg = GanConfig(image_side=side, base_channels=8, seed=seed)
    seq = np.random.SeedSequence((seed, 1))
    rg, rd = (np.random.default_rng(s) for s in seq.spawn(2))
    return GanPair(Generator(n_categories, cfg, rg),
                   Discriminator(n_categories, cfg, rd), cfg)


class TestGenerate:
    def test_output_shape_and_range(self):
        pair = fresh_pair(side=16)
        z = pair.sample_latent(np.random.default_rng(0), 5)
        out = pair.generate(z, [0, 1, 2, 3, 0]).data
        assert out.shape == (5, 3, 16, 16)
        assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_same_inputs_same_images(self):
        pair = fresh_pair()
        z = pair.sample_latent(np.random.default_rng(3), 2)
        a = pair.generate(z, [1, 2]).data
        b = pair.generate(z, [1, 2]).data
        assert np.array_equal(a, b)

    def test_category_changes_output(self):
        pair = fresh_pair()
        z = pair.sample_latent(np.random.default_rng(4), 1)
        a = pair.generate(z, 0).data
        b = pair.generate(z, 3).data
        assert not np.array_equal(a, b)

    def test_out_of_range_latent_rejected(self):
        pair = fresh_pair()
        bad = np.full((1, pair.latent_dim), 1.5, dtype=np.float32)
        with pytest.raises(ValueError, match=r"\[-1, 1\]"):
            pair.generate(bad, 0)

    def test_bad_category_rejected(self):
        pair = fresh_pair()
        z = pair.sample_latent(np.random.default_rng(0), 1)
        with pytest.raises(ValueError, match="category"):
            pair.generate(z, 9)


class TestDiscriminate:
    def test_untrained_scores_finite(self):
        pair = fresh_pair()
        x = np.random.default_rng(0).uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)
        d = pair.discriminate(x, [0, 1, 2]).data
        assert d.shape == (3,)
        assert np.all(np.isfinite(d))

    def test_wrong_shape_rejected(self):
        pair = fresh_pair()
        with pytest.raises(ValueError, match="expected"):
            pair.discriminate(np.zeros((1, 3, 8, 8), np.float32), 0)

    def test_squared_losses_match_direct_recomputation(self):
        # batch losses equal the scalar formulas to machine precision
        pair = fresh_pair()
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 1, (6, 3, 16, 16)).astype(np.float32)
        cats = np.array([0, 1, 2, 3, 0, 1])
        d = pair.discriminate(x, cats).data
        lr = real_loss(pair, x, cats).item()
        lf = fake_loss(pair, x, cats).item()
        assert lr == pytest.approx(float(np.mean((d - 1.0) ** 2)), abs=1e-7)
        assert lf == pytest.approx(float(np.mean(d ** 2)), abs=1e-7)
        # zero exactly when the scores sit on their targets
        assert float(np.mean((np.ones(4) - 1.0) ** 2)) == 0.0
        assert float(np.mean(np.zeros(4) ** 2)) == 0.0

    def test_constant_half_scores_give_loss_half(self):
        # [0.5-1]^2 + [0.5]^2 = 0.25 + 0.25 per sample
        d = np.full(8, 0.5)
        assert float(np.mean((d - 1) ** 2) + np.mean(d ** 2)) == pytest.approx(0.5)


class TestTraining:
    def test_gradient_isolation(self):
        corpus = generate_synthetic(SyntheticStyleSpec(image_side=16), 8, 16, seed=0)
        pair = fresh_pair(corpus.n_categories)
        images = corpus.float_images()
        cats = np.array([it.category_id for it in corpus.items])
        rng = np.random.default_rng(0)
        g_params, d_params = pair.generator.params(), pair.discriminator.params()
        opt_g = Adam(lr=2e-4, beta1=0.5)
        opt_d = Adam(lr=2e-4, beta1=0.5)

        def checksum(params):
            return {k: v.data.sum() for k, v in params.items()}

        g_before = checksum(g_params)
        discriminator_step(pair, opt_d, d_params, images[:8], cats[:8],
                           pair.sample_latent(rng, 8))
        assert checksum(g_params) == g_before  # D step leaves G untouched

        d_before = checksum(d_params)
        generator_step(pair, opt_g, g_params, d_params, cats[:8],
                       pair.sample_latent(rng, 8))
        assert checksum(d_params) == d_before  # G step leaves D untouched
        assert checksum(g_params) != g_before

    def test_latent_sampling_uniform(self):
        pair = fresh_pair()
        rng = np.random.default_rng(0)
        total = np.zeros(pair.latent_dim)
        n = 0
        for _ in range(100):
            z = pair.sample_latent(rng, 1000)
            total += z.sum(axis=0)
            n += 1000
        assert np.max(np.abs(total / n)) < 0.02

    def test_training_deterministic(self, tiny_world):
        corpus = tiny_world["corpus"]
        cfg = GanConfig(image_side=16, epochs=2, batch_size=8, base_channels=8, seed=4)
        r1 = train_gan(corpus, cfg)
        r2 = train_gan(corpus, cfg)
        assert r1.history == r2.history
        for k, v in r1.pair.state_arrays().items():
            assert np.array_equal(v, r2.pair.state_arrays()[k]), k

    def test_history_and_holdout(self, tiny_world):
        hist = tiny_world["gan_history"]
        assert all(h["step"] == k for k, h in enumerate(hist))
        assert all(np.isfinite(h["d_loss"]) and np.isfinite(h["g_loss"]) for h in hist)
        hold = tiny_world["gan_holdout"]
        assert len(hold) == round(0.1 * tiny_world["corpus"].n_items)

    def test_save_load_roundtrip(self, tiny_world, tmp_path):
        pair = tiny_world["gan"]
        path = str(tmp_path / "gan.vpre")
        save_pair(path, pair, tiny_world["corpus"].n_categories)
        again = load_pair(path)
        z = pair.sample_latent(np.random.default_rng(0), 2)
        assert np.array_equal(pair.generate(z, [0, 1]).data,
                              again.generate(z, [0, 1]).data)
