"""Synthetic activation generator: determinism and population structure."""

import numpy as np

from bitbottleneck import synth, tensor_store


class TestGenerateLayer:
    def setup_method(self):
        self.rng = np.random.default_rng(31)

    def test_shape_and_dtype(self):
        values = synth.generate_layer(self.rng, 5, (4, 6, 8))
        assert values.shape == (5, 4, 6, 8)
        assert values.dtype == np.float32
        assert np.all(values >= 0.0)

    def test_zero_fraction_near_request(self):
        values = synth.generate_layer(self.rng, 8, (16, 16, 16), zero_frac=0.6)
        frac = float(np.mean(values == 0.0))
        assert 0.55 < frac < 0.65

    def test_outlier_count_is_exact_per_sample(self):
        step = 0.05 * 12.0 / 255.0
        values = synth.generate_layer(self.rng, 6, (16, 16, 16),
                                      outlier_frac=8 / 4096)
        codes = values.astype(np.float64) / step
        for i in range(6):
            assert np.sum(codes[i] >= 159.5) == 8

    def test_sample_zero_pins_the_peak_code(self):
        # one outlier sits exactly at code 255 with no in-bin noise, so a
        # max-percentile quantizer recovers every code exactly
        step = 0.05 * 12.0 / 255.0
        values = synth.generate_layer(self.rng, 4, (16, 16, 16))
        assert float(values.max()) == np.float32(255 * step)

    def test_bulk_codes_sit_near_the_lattice(self):
        values = synth.generate_layer(self.rng, 4, (16, 16, 16),
                                      outlier_frac=0.0)
        codes = np.rint(values.astype(np.float64) / (0.05 * 12.0 / 255.0))
        nonzero = codes[codes > 0]
        off_lattice = np.mean(nonzero % synth.BULK_LATTICE != 0)
        assert 0.0 < off_lattice < 0.1
        assert nonzero.max() <= synth.BULK_TOP_CODE + 1

    def test_zero_elements_carry_no_noise(self):
        values = synth.generate_layer(self.rng, 4, (8, 8, 8), zero_frac=0.9)
        assert np.sum(values == 0.0) > 0


class TestGenerateDataset:
    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth.generate_dataset(a, num_layers=2, num_samples=4, shape=(4, 4, 4),
                               seed=9)
        synth.generate_dataset(b, num_layers=2, num_samples=4, shape=(4, 4, 4),
                               seed=9)
        for name in ("layer_1.bin", "layer_2.bin", "manifest.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_different_values(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth.generate_dataset(a, num_layers=1, num_samples=2, shape=(4, 4, 4),
                               seed=1)
        synth.generate_dataset(b, num_layers=1, num_samples=2, shape=(4, 4, 4),
                               seed=2)
        assert (a / "layer_1.bin").read_bytes() != (b / "layer_1.bin").read_bytes()

    def test_loads_as_valid_container(self, tmp_path):
        synth.generate_dataset(tmp_path, num_layers=3, num_samples=5,
                               shape=(4, 4, 4), seed=0)
        manifest = tensor_store.load_dataset(tmp_path)
        assert manifest.num_layers == 3
        assert manifest.num_samples == 5
        t = tensor_store.read_tensor(manifest, 3, 5)
        assert t.shape == (4, 4, 4)

    def test_layer_scale_grows_with_depth(self, tmp_path):
        synth.generate_dataset(tmp_path, num_layers=3, num_samples=6,
                               shape=(16, 16, 16), seed=4)
        manifest = tensor_store.load_dataset(tmp_path)
        maxima = [max(t.values.max() for t in tensor_store.read_layer(manifest, lid))
                  for lid in (1, 2, 3)]
        assert maxima[0] < maxima[1] < maxima[2]
