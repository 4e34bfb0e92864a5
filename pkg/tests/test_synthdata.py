import math
import os

import numpy as np
import pytest

from jitterlab.geometry import angles_between_deg, pitchyaw_to_vectors
from jitterlab.imageops import ssim
from jitterlab.synthdata import (
    DomainSpec,
    SceneParams,
    generate_dataset,
    load_dataset,
    render_eye,
    save_dataset,
)


class TestRenderEye:
    def test_centered_gaze_is_flip_symmetric(self):
        p = SceneParams(pitch=0.0, yaw=0.0, eye_center=(15.5, 15.5), jitter_seed=3)
        img = render_eye(p, DomainSpec("source"))
        assert np.abs(img - img[:, ::-1]).max() <= 1e-6

    def test_deterministic_per_seed(self):
        p = SceneParams(pitch=0.1, yaw=-0.2, jitter_seed=9)
        spec = DomainSpec.target_default()
        a = render_eye(p, spec)
        b = render_eye(p, spec)
        assert a.tobytes() == b.tobytes()

    def test_grating_boosts_high_frequency_energy(self):
        # DFT energy oracle: the grating must add energy above the 8-cycle
        # radius on the order of its analytic Parseval energy a^2 N^4 / 2
        # (clamping at the near-binary plateaus absorbs part of it, and the
        # textured backdrop already carries high-frequency energy of its own,
        # so the check is on the added energy, not a clean/perturbed ratio)
        p = SceneParams(pitch=0.05, yaw=0.1, jitter_seed=4)
        amp = 0.1
        clean = render_eye(p, DomainSpec("source"))
        hfc = render_eye(p, DomainSpec("target", hfc_amplitude=amp, hfc_frequency=12.0))

        def high_energy(img):
            spec = np.fft.fftshift(np.fft.fft2(img.astype(np.float64)))
            h, w = img.shape
            yy, xx = np.mgrid[0:h, 0:w]
            r = np.hypot(yy - h // 2, xx - w // 2)
            return float(np.sum(np.abs(spec[r > 8.0]) ** 2))

        analytic = amp**2 * 32**4 / 2
        added = high_energy(hfc) - high_energy(clean)
        assert added >= 0.15 * analytic
        assert added <= 2.0 * analytic

    def test_gaze_outside_eye_rejected(self):
        with pytest.raises(ValueError):
            render_eye(SceneParams(pitch=0.0, yaw=0.9), DomainSpec("source"))

    def test_values_in_range(self):
        p = SceneParams(pitch=-0.2, yaw=0.3, jitter_seed=5)
        img = render_eye(p, DomainSpec.target_default())
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestDomainSpec:
    def test_source_must_be_clean(self):
        with pytest.raises(ValueError):
            DomainSpec("source", hfc_amplitude=0.1)

    def test_unknown_domain_rejected(self):
        with pytest.raises(ValueError):
            DomainSpec("validation")

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ValueError):
            DomainSpec("target", hfc_amplitude=-0.1)


class TestGenerateDataset:
    def test_counts_and_grouping(self):
        ds = generate_dataset(30, DomainSpec.source_default(), 5, seed=1)
        assert len(ds) == 30
        for g in range(5):
            assert (ds.group_ids == g).sum() == 3
        assert (ds.group_ids == -1).sum() == 15

    def test_dup_groups_satisfy_both_gates(self):
        ds = generate_dataset(24, DomainSpec.target_default(), 8, seed=2)
        vecs = pitchyaw_to_vectors(ds.labels)
        for g in range(8):
            idx = np.where(ds.group_ids == g)[0]
            for a in range(3):
                for b in range(a + 1, 3):
                    ang = angles_between_deg(vecs[idx[a]][None], vecs[idx[b]][None])[0]
                    assert ang < 1.0
                    assert ssim(ds.images[idx[a]], ds.images[idx[b]]) > 0.75

    def test_deterministic(self):
        a = generate_dataset(20, DomainSpec.source_default(), 3, seed=7)
        b = generate_dataset(20, DomainSpec.source_default(), 3, seed=7)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_gaze_distribution_centered(self):
        ds = generate_dataset(10_000, DomainSpec.source_default(), 0, seed=8)
        mean_deg = np.degrees(np.abs(ds.labels.mean(axis=0)))
        assert mean_deg.max() < 1.0
        assert np.degrees(np.abs(ds.labels[:, 0])).max() <= 20.0
        assert np.degrees(np.abs(ds.labels[:, 1])).max() <= 30.0

    def test_images_are_quantized(self):
        ds = generate_dataset(5, DomainSpec.source_default(), 0, seed=9)
        scaled = ds.images.astype(np.float64) * 255.0
        assert np.abs(scaled - np.round(scaled)).max() < 1e-4

    def test_invalid_counts_rejected(self):
        with pytest.raises(ValueError):
            generate_dataset(5, DomainSpec.source_default(), 3, seed=0)


class TestManifestRoundTrip:
    def test_save_load_bitwise(self, tmp_path):
        ds = generate_dataset(12, DomainSpec.target_default(), 2, seed=10)
        manifest = save_dataset(ds, tmp_path / "data")
        loaded = load_dataset(manifest)
        assert loaded.images.tobytes() == ds.images.tobytes()
        assert np.abs(loaded.labels - ds.labels).max() < 1e-9
        assert np.array_equal(loaded.group_ids, ds.group_ids)
        assert np.array_equal(loaded.seeds, ds.seeds)
        assert loaded.domain == ds.domain

    def test_manifest_is_byte_stable(self, tmp_path):
        ds = generate_dataset(6, DomainSpec.source_default(), 0, seed=11)
        m1 = save_dataset(ds, tmp_path / "a")
        m2 = save_dataset(ds, tmp_path / "b")
        assert open(m1, "rb").read() == open(m2, "rb").read()

    def test_missing_image_reported_by_path(self, tmp_path):
        ds = generate_dataset(6, DomainSpec.source_default(), 0, seed=12)
        manifest = save_dataset(ds, tmp_path / "data")
        victim = tmp_path / "data" / "img_00003.png"
        os.remove(victim)
        with pytest.raises(FileNotFoundError, match="img_00003.png"):
            load_dataset(manifest)

    def test_out_of_range_label_rejected(self, tmp_path):
        ds = generate_dataset(4, DomainSpec.source_default(), 0, seed=13)
        manifest = save_dataset(ds, tmp_path / "data")
        lines = open(manifest).read().splitlines()
        parts = lines[1].split(",")
        parts[1] = "2.5"  # pitch beyond pi/2
        lines[1] = ",".join(parts)
        open(manifest, "w").write("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="out of range"):
            load_dataset(manifest)

    def test_bad_header_rejected(self, tmp_path):
        bad = tmp_path / "manifest.csv"
        bad.write_text("nope,nope\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            load_dataset(bad)
