import math

import numpy as np
import pytest

from jitterlab.geometry import angles_between_deg, pitchyaw_to_vectors
from jitterlab.imageops import ssim
from jitterlab.metrics import (
    MavConfig,
    MavReport,
    NoQualifyingPairs,
    mav,
    mean_angular_error,
    triplet_probe,
)
from jitterlab.synthdata import Dataset, DomainSpec, generate_dataset


def _dataset(images, labels):
    n = len(images)
    return Dataset(np.asarray(images, dtype=np.float32),
                   np.asarray(labels, dtype=np.float64), "source",
                   np.full(n, -1, dtype=np.int64), np.zeros(n, dtype=np.uint64))


def brute_force_mav(images, labels, preds, alpha, beta_deg):
    """Double-loop oracle over all unordered pairs."""
    vt = pitchyaw_to_vectors(labels)
    vp = pitchyaw_to_vectors(preds)
    deltas = []
    n = len(labels)
    for i in range(n):
        for j in range(i + 1, n):
            ang_t = float(angles_between_deg(vt[i : i + 1], vt[j : j + 1])[0])
            if ang_t >= beta_deg:
                continue
            if ssim(images[i], images[j]) <= alpha:
                continue
            ang_p = float(angles_between_deg(vp[i : i + 1], vp[j : j + 1])[0])
            deltas.append(abs(ang_p - ang_t))
    if not deltas:
        raise NoQualifyingPairs("oracle found none")
    return sum(deltas) / len(deltas), len(deltas)


class TestMeanAngularError:
    def test_zero_for_equal(self, rng):
        labels = rng.uniform(-0.3, 0.3, size=(6, 2))
        assert mean_angular_error(labels, labels) == pytest.approx(0.0, abs=1e-6)

    def test_known_single_pair(self):
        # 3D angle of arctan(0.1) between (0,0) and a yawed gaze
        a = np.array([[0.0, 0.0]])
        b = np.array([[0.0, math.atan(0.1)]])
        assert mean_angular_error(a, b) == pytest.approx(
            math.degrees(math.atan(0.1)), abs=1e-9
        )

    def test_permutation_invariant(self, rng):
        labels = rng.uniform(-0.3, 0.3, size=(10, 2))
        preds = labels + rng.normal(scale=0.02, size=(10, 2))
        preds[:, 0] = np.clip(preds[:, 0], -1.5, 1.5)
        base = mean_angular_error(preds, labels)
        perm = rng.permutation(10)
        assert mean_angular_error(preds[perm], labels[perm]) == pytest.approx(
            base, abs=1e-12
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_angular_error(np.zeros((0, 2)), np.zeros((0, 2)))


class TestMav:
    def test_perfect_predictions_give_zero(self):
        ds = generate_dataset(30, DomainSpec.source_default(), 6, seed=0)
        rep = mav(ds, ds.labels, MavConfig())
        assert rep.mav_deg == pytest.approx(0.0, abs=1e-12)
        assert rep.qualifying_pairs >= 6 * 3

    def test_handcrafted_two_pair_case(self):
        # two qualifying pairs with label angles 0.5/0.8 deg and prediction
        # angles 2.5/1.8 deg -> mav = (2.0 + 1.0) / 2
        base = np.random.default_rng(3).uniform(0.3, 0.7, size=(32, 32))
        images = [base, base, base, base]
        d = math.radians(1.0)
        labels = np.array([
            [0.0, 0.0], [0.0, math.radians(0.5)],
            [0.5, 0.0], [0.5 + math.radians(0.8), 0.0],
        ])
        preds = np.array([
            [0.0, 0.0], [0.0, math.radians(2.5)],
            [0.5, 0.0], [0.5 + math.radians(1.8), 0.0],
        ])
        rep = mav(_dataset(images, labels), preds, MavConfig())
        assert rep.qualifying_pairs == 2
        assert rep.mav_deg == pytest.approx(1.5, abs=1e-6)

    def test_matches_brute_force_oracle(self, rng):
        ds = generate_dataset(50, DomainSpec.source_default(), 10, seed=4)
        preds = ds.labels + rng.normal(scale=0.01, size=ds.labels.shape)
        rep = mav(ds, preds, MavConfig())
        expected, count = brute_force_mav(ds.images, ds.labels, preds, 0.75, 1.0)
        assert rep.qualifying_pairs == count
        assert rep.mav_deg == pytest.approx(expected, abs=1e-9)

    def test_permutation_invariance(self, rng):
        ds = generate_dataset(30, DomainSpec.source_default(), 6, seed=5)
        preds = ds.labels + rng.normal(scale=0.01, size=ds.labels.shape)
        base = mav(ds, preds, MavConfig())
        perm = rng.permutation(len(ds))
        rep = mav(ds.subset(perm), preds[perm], MavConfig())
        assert rep.mav_deg == pytest.approx(base.mav_deg, abs=1e-9)
        assert rep.qualifying_pairs == base.qualifying_pairs

    def test_no_qualifying_pairs_raises(self):
        # gazes far apart: the angle gate rejects every pair
        images = [np.random.default_rng(i).uniform(0, 1, (32, 32)) for i in range(4)]
        labels = np.array([[0.0, 0.0], [0.0, 0.5], [0.3, 0.0], [0.3, 0.5]])
        with pytest.raises(NoQualifyingPairs):
            mav(_dataset(images, labels), labels, MavConfig())

    def test_subsampled_agrees_with_exhaustive(self, rng):
        ds = generate_dataset(60, DomainSpec.source_default(), 15, seed=6)
        preds = ds.labels + rng.normal(scale=0.02, size=ds.labels.shape)
        full = mav(ds, preds, MavConfig())
        sub = mav(ds, preds, MavConfig(max_pairs=20, seed=8))
        assert sub.qualifying_pairs == 20
        # within 2 standard errors of the subsample
        deltas_spread = full.mav_deg  # scale proxy; use generous absolute guard
        assert abs(sub.mav_deg - full.mav_deg) <= max(2 * deltas_spread, 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MavConfig(alpha=1.5)
        with pytest.raises(ValueError):
            MavConfig(beta_deg=0.0)
        with pytest.raises(ValueError):
            MavConfig(max_pairs=-1)


class TestTripletProbe:
    def test_identical_features_zero_loss(self, rng):
        f = rng.normal(size=(10, 16))
        assert triplet_probe(f, f.copy(), margin=0.0, n_triples=50, seed=0) == 0.0

    def test_margin_dominated_regime(self, rng):
        f = rng.normal(size=(10, 16))
        g = f + rng.normal(scale=0.01, size=f.shape)
        val = triplet_probe(f, g, margin=1e3, n_triples=50, seed=1)
        assert val > 900.0

    def test_deterministic(self, rng):
        f = rng.normal(size=(12, 8))
        g = f + rng.normal(scale=0.1, size=f.shape)
        a = triplet_probe(f, g, margin=1e-3, n_triples=100, seed=7)
        b = triplet_probe(f, g, margin=1e-3, n_triples=100, seed=7)
        assert a == b

    def test_needs_two_samples(self, rng):
        f = rng.normal(size=(1, 8))
        with pytest.raises(ValueError):
            triplet_probe(f, f, margin=0.0, n_triples=10, seed=0)
