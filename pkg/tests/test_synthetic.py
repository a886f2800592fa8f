import numpy as np
import pytest

from threads_desk.data import load_dataset, save_dataset
from threads_desk.evaluation import balanced_accuracy, fit_logistic_probe
from threads_desk.model import init_model
from threads_desk.molecular import GenomicEncoderConfig, GenomicProfile, TranscriptomicProfile
from threads_desk.slide_encoder import SlideEncoderConfig
from threads_desk.synthetic import GeneratorConfig, generate_dataset, holdout_pair_recall, pair_recall

SMALL = dict(latent_dim=4, patch_dim=6, bag_min=2, bag_max=5, n_genes=5, vocab_size=12)


def test_noise_free_bags_identical_within_class():
    samples = generate_dataset(GeneratorConfig(n_samples=10, n_classes=2, noise=0.0, bag_min=1, bag_max=1,
                                               **{k: v for k, v in SMALL.items() if not k.startswith("bag")}))
    for c in (0, 1):
        bags = [s.bag.X for s in samples if s.label == c]
        assert all(np.array_equal(b, bags[0]) for b in bags)


def test_stratified_counts():
    samples = generate_dataset(GeneratorConfig(n_samples=100, n_classes=4, **SMALL))
    assert np.bincount([s.label for s in samples]).tolist() == [25, 25, 25, 25]


def test_no_censoring():
    samples = generate_dataset(GeneratorConfig(n_samples=30, censor_rate=0.0, **SMALL))
    assert all(s.survival.event == 1 for s in samples)


def test_bag_sizes_and_modes():
    g = generate_dataset(GeneratorConfig(n_samples=12, **SMALL))
    assert all(2 <= s.bag.n_patches <= 5 and s.bag.X.shape[1] == 6 for s in g)
    assert all(isinstance(s.molecular, GenomicProfile) and s.molecular.vector.shape == (35,) for s in g)
    t = generate_dataset(GeneratorConfig(n_samples=12, mode="transcriptomic", **SMALL))
    assert all(isinstance(s.molecular, TranscriptomicProfile) and len(s.molecular) == 12 for s in t)
    assert all(np.all(s.molecular.values >= 0) for s in t)


def test_seed_determinism():
    a = generate_dataset(GeneratorConfig(n_samples=8, seed=3, **SMALL))
    b = generate_dataset(GeneratorConfig(n_samples=8, seed=3, **SMALL))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.bag.X, y.bag.X)
        np.testing.assert_array_equal(x.molecular.vector, y.molecular.vector)
        assert x.survival == y.survival and x.label == y.label


def test_learnable_by_construction():
    samples = generate_dataset(GeneratorConfig(n_samples=200, n_classes=4, noise=0.1, **SMALL))
    X = np.stack([s.bag.X.mean(axis=0) for s in samples])
    y = np.array([s.label for s in samples])
    probe = fit_logistic_probe(X[:150], y[:150])
    assert balanced_accuracy(probe.predict(X[150:]), y[150:]) >= 0.95


@pytest.mark.parametrize("bad", [dict(n_samples=2, n_classes=3), dict(noise=-1.0), dict(censor_rate=1.0),
                                 dict(label_noise=1.5), dict(bag_min=5, bag_max=2), dict(mode="proteomic")])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        GeneratorConfig(**bad)


class TestPairRecall:
    def test_aligned(self, rng):
        S = rng.normal(size=(20, 5))
        assert pair_recall(S, S, np.arange(20) % 4) == 1.0

    def test_untrained_is_chance(self):
        gen = GeneratorConfig(n_samples=200, n_classes=4, **SMALL)
        samples = generate_dataset(gen)
        state = init_model(SlideEncoderConfig(input_dim=6, hidden_dim=8, output_dim=16),
                           GenomicEncoderConfig(n_genes=5, hidden_dim=8, output_dim=16), seed=1)
        assert abs(holdout_pair_recall(state, samples) - 0.25) <= 0.1

    def test_shuffled_pairing(self):
        r = np.random.default_rng(0)
        labels = np.arange(400) % 4
        S = np.eye(4)[labels] + 0.1 * r.normal(size=(400, 4))
        assert abs(pair_recall(S, S[r.permutation(400)], labels) - 0.25) <= 0.1

    def test_too_few(self):
        with pytest.raises(ValueError):
            pair_recall(np.ones((1, 2)), np.ones((1, 2)), [0])


@pytest.mark.parametrize("mode", ["genomic", "transcriptomic"])
def test_dataset_roundtrip(tmp_path, mode):
    samples = generate_dataset(GeneratorConfig(n_samples=9, mode=mode, **SMALL))
    save_dataset(samples, tmp_path)
    back = load_dataset(tmp_path)
    for a, b in zip(samples, back):
        assert a.id == b.id and a.label == b.label and a.survival == b.survival
        np.testing.assert_array_equal(a.bag.X, b.bag.X)
        if mode == "genomic":
            np.testing.assert_array_equal(a.molecular.vector, b.molecular.vector)
        else:
            np.testing.assert_array_equal(a.molecular.values, b.molecular.values)
