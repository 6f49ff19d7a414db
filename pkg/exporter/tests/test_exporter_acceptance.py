"""Integration gate: a CIFAR10-scale export drives the quantization pipeline.

64 samples over all four capture points must load through the primary
validator, profile under `stats`, and survive a full `sweep` at a 24 dB
per-sample loss threshold with every stored scheme inside the bound.
"""

from pathlib import Path

from activation_exporter import ExportSpec, MODELS, export_activations
from bitbottleneck import cli, tensor_store

EXPECTED_SHAPES = ((32, 32, 16), (32, 32, 16), (16, 16, 32), (8, 8, 64))
THRESHOLD_DB = 24.0


class TestExporterIntegration:
    def test_cifar_scale_export_sweeps_under_loss_bound(self, tmp_path, record_secondary):
        ok = False
        detail = "did not run"
        try:
            data = tmp_path / "data"
            captures = tuple(MODELS["resnet-tiny"].captures)
            export_activations(ExportSpec("resnet-tiny", captures, 64, data))

            manifest = tensor_store.load_dataset(data)
            assert manifest.num_layers == 4
            assert manifest.num_samples == 64
            assert tuple(manifest.shape(l) for l in range(1, 5)) == EXPECTED_SHAPES

            assert cli.main(["stats", "--data", str(data), "--no-figures"]) == 0

            out = tmp_path / "sweep"
            rc = cli.main(["sweep", "--data", str(data), "--out", str(out),
                           "--threshold-db", str(THRESHOLD_DB), "--jobs", "2",
                           "--no-figures"])
            assert rc == 0

            losses = []
            for lid in range(1, 5):
                scheme = tensor_store.read_scheme(out / f"scheme_layer_{lid}.txt")
                assert not scheme.threshold_unmet
                assert scheme.psnr_loss_db <= THRESHOLD_DB
                losses.append(scheme.psnr_loss_db)
            ok = True
            detail = (f"64 samples x 4 captures load and sweep at T={THRESHOLD_DB:g}; "
                      f"per-layer loss [{', '.join(f'{v:.3f}' for v in losses)}] dB")
        finally:
            record_secondary("exporter integration", ok, detail)
