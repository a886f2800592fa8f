import math

import numpy as np
import pytest

from threads_desk.evaluation.metrics import balanced_accuracy
from threads_desk.model import init_model
from threads_desk.molecular import GenomicEncoderConfig
from threads_desk.slide_encoder import PatchBag, SlideEncoderConfig
from threads_desk.synthetic import GeneratorConfig, generate_dataset
from threads_desk.train import (
    AdamW,
    FinetuneConfig,
    TrainConfig,
    adamw_step,
    class_weights,
    finetune_classifier,
    infonce_loss,
    lr_at,
    pretrain_fit,
    rankme,
    sample_patches,
)

from oracles import rankme_oracle


def tiny_world(seed=0, n=24):
    gen = GeneratorConfig(n_samples=n, n_classes=2, latent_dim=4, patch_dim=6, bag_min=3, bag_max=6,
                          n_genes=3, seed=seed)
    state = init_model(SlideEncoderConfig(input_dim=6, hidden_dim=6, heads=2, output_dim=8),
                       GenomicEncoderConfig(n_genes=3, hidden_dim=8, output_dim=8), seed=seed)
    return generate_dataset(gen), state


class TestSamplePatches:
    def test_large_bag_without_replacement(self, rng):
        bag = PatchBag("a", np.arange(1000.0)[:, None])
        out = sample_patches(bag, 512, rng)
        assert out.X.shape == (512, 1) and len(np.unique(out.X)) == 512

    def test_small_bag_with_replacement(self):
        bag = PatchBag("a", np.arange(100.0)[:, None])
        out = sample_patches(bag, 512, np.random.default_rng(0))
        assert out.X.shape == (512, 1)
        assert set(np.unique(out.X)) <= set(range(100))

    def test_seeded(self):
        bag = PatchBag("a", np.arange(50.0)[:, None])
        a = sample_patches(bag, 20, np.random.default_rng(3)).X
        b = sample_patches(bag, 20, np.random.default_rng(3)).X
        np.testing.assert_array_equal(a, b)


class TestInfoNCE:
    def test_identical_embeddings(self):
        x = np.ones((4, 5))
        loss, _, _ = infonce_loss(x, x, 0.07)
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_orthonormal_pairs(self):
        loss, _, _ = infonce_loss(np.eye(2), np.eye(2), 0.07)
        assert loss < 1e-5

    def test_symmetry(self, rng):
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        assert infonce_loss(a, b)[0] == pytest.approx(infonce_loss(b, a)[0], abs=1e-12)

    def test_scale_invariance(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        assert infonce_loss(a, b)[0] == pytest.approx(infonce_loss(3 * a, b)[0], abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            infonce_loss(np.ones((1, 3)), np.ones((1, 3)))


class TestSchedule:
    cfg = TrainConfig()

    def test_start(self):
        assert lr_at(0, 10, self.cfg) == 0.0

    def test_end_of_warmup(self):
        assert lr_at(50, 10, self.cfg) == pytest.approx(1e-5, rel=1e-12)

    def test_final_step(self):
        assert lr_at(1010, 10, self.cfg) == pytest.approx(1e-8, rel=1e-9)

    def test_cosine_midpoint(self):
        mid = 50 + (1010 - 50) // 2
        assert lr_at(mid, 10, self.cfg) == pytest.approx(1e-8 + (1e-5 - 1e-8) / 2, rel=1e-12)
        assert lr_at(mid, 10, self.cfg) == pytest.approx(5.005e-6, rel=1e-12)

    def test_monotone_after_warmup(self):
        lrs = [lr_at(s, 10, self.cfg) for s in range(50, 1011)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


class TestAdamW:
    def test_zero_grad_no_decay(self):
        p = {"w": np.array([1.0, -2.0])}
        adamw_step(p, {"w": np.zeros(2)}, AdamW(), 0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_zero_grad_decay(self):
        p = {"w": np.array([1.0, -2.0])}
        adamw_step(p, {"w": np.zeros(2)}, AdamW(weight_decay=0.01), 0.1)
        np.testing.assert_allclose(p["w"], np.array([1.0, -2.0]) * (1 - 0.1 * 0.01), rtol=1e-15)

    def test_first_step(self):
        p = {"w": np.zeros(1)}
        adamw_step(p, {"w": np.ones(1)}, AdamW(), 0.1)
        assert p["w"][0] == pytest.approx(-0.1, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamW(), 0.1)


class TestRankMe:
    def test_identity(self):
        assert rankme(np.eye(4)) == pytest.approx(4.0, abs=1e-3)

    def test_rank_one(self, rng):
        H = np.outer(rng.normal(size=6), rng.normal(size=4))
        assert rankme(H) == pytest.approx(1.0, abs=1e-4)

    def test_entropy_arithmetic(self):
        H = np.diag([2.0, 1.0, 1.0, 0.0])
        assert rankme(H) == pytest.approx(2 * math.sqrt(2), abs=1e-3)

    def test_jacobi_oracle(self, rng):
        H = rng.normal(size=(10, 6))
        assert abs(rankme(H) - rankme_oracle(H)) < 1e-6

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            rankme(np.zeros((3, 3)))


class TestPretrain:
    def test_zero_epochs(self):
        samples, state = tiny_world()
        before = {k: v.copy() for k, v in state.flat().items()}
        res = pretrain_fit(samples, state, TrainConfig(batch_size=8, patches_per_slide=4, max_epochs=0,
                                                       warmup_epochs=0))
        assert res.checkpoints == [] and res.log == []
        for k, v in state.flat().items():
            np.testing.assert_array_equal(v, before[k])

    def test_checkpoint_rule(self):
        samples, state = tiny_world(seed=1)
        cfg = TrainConfig(batch_size=8, patches_per_slide=4, max_epochs=9, warmup_epochs=2, peak_lr=5e-3)
        res = pretrain_fit(samples, state, cfg)
        assert len(res.log) == 9
        assert all(r["rankme"] is None and not r["checkpointed"] for r in res.log[:2])
        ranks = [c.rankme for c in res.checkpoints]
        assert ranks and all(a < b for a, b in zip(ranks, ranks[1:]))
        assert all(c.epoch > cfg.warmup_epochs for c in res.checkpoints)
        best = -math.inf
        for r in res.log[2:]:
            assert r["checkpointed"] == (r["rankme"] > best)
            best = max(best, r["rankme"])

    def test_checkpoints_are_snapshots(self):
        samples, state = tiny_world(seed=2)
        res = pretrain_fit(samples, state, TrainConfig(batch_size=8, patches_per_slide=4, max_epochs=4,
                                                       warmup_epochs=1, peak_lr=5e-3))
        first = res.checkpoints[0].state.flat()
        assert any(not np.array_equal(first[k], v) for k, v in state.flat().items())

    def test_deterministic(self):
        cfg = TrainConfig(batch_size=8, patches_per_slide=4, max_epochs=3, warmup_epochs=1, peak_lr=1e-3)
        logs = []
        for _ in range(2):
            samples, state = tiny_world(seed=3)
            logs.append(pretrain_fit(samples, state, cfg).log)
        assert logs[0] == logs[1]

    def test_default_monitoring_starts_at_epoch_six(self):
        assert TrainConfig().warmup_epochs == 5


class TestFinetune:
    def test_balanced_weights(self):
        np.testing.assert_array_equal(class_weights([0, 1, 0, 1], 2), [1.0, 1.0])
        np.testing.assert_allclose(class_weights([0, 0, 0, 1], 2), [4 / 6, 2.0])

    def test_zero_epochs_keeps_encoder(self):
        samples, state = tiny_world()
        clf = finetune_classifier(state, [s.bag for s in samples], [s.label for s in samples], 2,
                                  FinetuneConfig(epochs=0, patches_per_slide=4))
        for k, v in state.slide.items():
            np.testing.assert_array_equal(clf.slide[k], v)

    def test_separable_task(self):
        gen = GeneratorConfig(n_samples=40, n_classes=2, latent_dim=4, patch_dim=8, bag_min=4, bag_max=8,
                              n_genes=2, noise=0.3, class_sep=5.0, seed=4)
        samples = generate_dataset(gen)
        state = init_model(SlideEncoderConfig(input_dim=8, hidden_dim=8, heads=2, output_dim=16),
                           GenomicEncoderConfig(n_genes=2, hidden_dim=8, output_dim=16), seed=4)
        bags, labels = [s.bag for s in samples], np.array([s.label for s in samples])
        clf = finetune_classifier(state, bags, labels, 2, FinetuneConfig(patches_per_slide=64, lr=1e-3))
        assert balanced_accuracy(clf.predict(bags), labels) >= 0.9
