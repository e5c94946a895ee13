import numpy as np
import pytest

from chamferlab import rng
from chamferlab.datasets import LabeledSet
from chamferlab.utility import (ClassifierSpec, UtilityError, train_classifier,
                                utility_experiment)

SPEC = ClassifierSpec(hidden=16, steps=400, batch_size=32)


def blobs(n_per_class, sep=4.0, seed=0, shift=0.0):
    gen = rng.stream(seed, "blobs")
    labels = np.repeat([0, 1, 2], n_per_class)
    angles = labels * 2 * np.pi / 3
    centers = sep * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = centers + 0.4 * rng.gauss(gen, (3 * n_per_class, 2)) + shift
    return LabeledSet(pts, labels, np.zeros_like(labels))


def test_separable_data_high_accuracy():
    train = blobs(100, seed=0)
    val = blobs(100, seed=1)
    clf = train_classifier(train.points, train.class_labels, SPEC)
    assert clf.score(val.points, val.class_labels) >= 0.99


def test_shuffled_labels_chance_level():
    train = blobs(100, seed=2)
    gen = rng.stream(0, "shuffle")
    shuffled = gen.permutation(train.class_labels)
    clf = train_classifier(train.points, shuffled, SPEC)
    val = blobs(200, seed=3)
    # random labels carry no signal; anything close to chance is fine
    assert clf.score(val.points, val.class_labels) < 0.6


def test_single_class_rejected():
    with pytest.raises(UtilityError):
        train_classifier(np.zeros((10, 2)), np.zeros(10, dtype=int), SPEC)


def test_fit_deterministic():
    train = blobs(50, seed=4)
    a = train_classifier(train.points, train.class_labels, SPEC, seed=9)
    b = train_classifier(train.points, train.class_labels, SPEC, seed=9)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_get_params_exposes_spec():
    train = blobs(30, seed=5)
    clf = train_classifier(train.points, train.class_labels, SPEC)
    p = clf.get_params()
    assert p["n_classes"] == 3 and p["hidden"] == 16


class TestUtilityExperiment:
    def _oracle_generator(self):
        # draws real-looking points for requested labels: best-case synthesizer
        def generator(labels, seed):
            gen = rng.stream(seed, "oracle-gen")
            angles = labels * 2 * np.pi / 3
            centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
            return centers + 0.4 * rng.gauss(gen, (len(labels), 2))
        return generator

    def _labels_for(self, n, seed):
        return np.arange(n) % 3

    def test_oracle_generator_matches_real(self):
        val = blobs(100, seed=6)
        shifted = blobs(100, seed=7, shift=0.5)
        rows = utility_experiment(self._oracle_generator(), self._labels_for,
                                  n_synth=300, n_real=0, seeds=[0, 1],
                                  real_train=blobs(100, seed=8), real_val=val,
                                  shifted_val=shifted, spec=SPEC)
        assert len(rows) == 2
        for row in rows:
            assert row["mix"] == "synthetic-only"
            assert row["acc_id"] >= 0.95
            assert np.isfinite(row["acc_ood"])

    def test_real_only_and_mixed_labels(self):
        train = blobs(100, seed=9)
        val = blobs(50, seed=10)
        real_rows = utility_experiment(self._oracle_generator(), self._labels_for,
                                       n_synth=0, n_real=200, seeds=[0],
                                       real_train=train, real_val=val, spec=SPEC)
        assert real_rows[0]["mix"] == "real-only"
        assert np.isnan(real_rows[0]["acc_ood"])
        mixed = utility_experiment(self._oracle_generator(), self._labels_for,
                                   n_synth=100, n_real=100, seeds=[0],
                                   real_train=train, real_val=val, spec=SPEC)
        assert mixed[0]["mix"] == "mixed"

    def test_empty_mixture_rejected(self):
        with pytest.raises(UtilityError):
            utility_experiment(self._oracle_generator(), self._labels_for,
                               n_synth=0, n_real=0, seeds=[0],
                               real_train=blobs(10), real_val=blobs(10), spec=SPEC)

    def test_bad_generator_hurts_accuracy(self):
        def noise_generator(labels, seed):
            return rng.gauss(rng.stream(seed, "junk"), (len(labels), 2))

        val = blobs(100, seed=11)
        good = utility_experiment(self._oracle_generator(), self._labels_for,
                                  n_synth=300, n_real=0, seeds=[0],
                                  real_train=blobs(10), real_val=val, spec=SPEC)
        bad = utility_experiment(noise_generator, self._labels_for,
                                 n_synth=300, n_real=0, seeds=[0],
                                 real_train=blobs(10), real_val=val, spec=SPEC)
        assert bad[0]["acc_id"] < good[0]["acc_id"]
