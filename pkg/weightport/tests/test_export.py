import numpy as np
import pytest
import torch

from weightport import (
    ShapeMismatch,
    UnknownTensor,
    export_reference_activations,
    export_weights,
    write_synthetic_checkpoint,
)
from weightport.cli import main as cli_main
from weightport.export import expected_shapes, read_pgm


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "reference.pth"
    write_synthetic_checkpoint(path, seed=1)
    return path


def write_probe_image(path, seed=0):
    rng = np.random.default_rng(seed)
    pixels = (rng.uniform(0, 1, size=(64, 64)) * 255).astype(np.uint8)
    path.write_bytes(b"P5\n64 64\n255\n" + pixels.tobytes())
    return path


class TestExportWeights:
    def test_manifest_covers_every_canonical_name_once(self, checkpoint, tmp_path):
        out = tmp_path / "w.spwf"
        manifest = export_weights(checkpoint, out)
        assert out.exists()
        canonical = sorted(manifest.tensor_map.values())
        assert len(canonical) == 24 and len(set(canonical)) == 24
        assert (tmp_path / "w.spwf.manifest.json").exists()

    def test_renamed_tensor_rejected(self, checkpoint, tmp_path):
        state = torch.load(checkpoint, weights_only=True)
        state["conv9z.weight"] = state.pop("conv1a.weight")
        bad = tmp_path / "bad.pth"
        torch.save(state, bad)
        with pytest.raises(UnknownTensor):
            export_weights(bad, tmp_path / "w.spwf")

    def test_wrong_shape_rejected(self, checkpoint, tmp_path):
        state = torch.load(checkpoint, weights_only=True)
        state["conv2a.weight"] = torch.zeros(64, 64, 5, 5)
        bad = tmp_path / "bad.pth"
        torch.save(state, bad)
        with pytest.raises(ShapeMismatch):
            export_weights(bad, tmp_path / "w.spwf")

    def test_reexport_is_byte_identical(self, checkpoint, tmp_path):
        a, b = tmp_path / "a.spwf", tmp_path / "b.spwf"
        export_weights(checkpoint, a)
        export_weights(checkpoint, b)
        assert a.read_bytes() == b.read_bytes()

    def test_loadable_by_the_primary_implementation(self, checkpoint, tmp_path):
        spnet = pytest.importorskip("patchattack.spnet")
        out = tmp_path / "w.spwf"
        export_weights(checkpoint, out)
        w = spnet.load_weights(out.read_bytes())  # no shape errors
        assert set(w.tensors) == set(spnet.shape_table())


class TestReferenceActivations:
    def test_zero_image_matches_primary_forward(self, checkpoint, tmp_path):
        spnet = pytest.importorskip("patchattack.spnet")
        from patchattack import spwf as primary_spwf
        from patchattack.imagecore import ImageBuffer

        img = tmp_path / "zero.pgm"
        img.write_bytes(b"P5\n64 64\n255\n" + bytes(64 * 64))
        acts = tmp_path / "acts.spwf"
        export_reference_activations(checkpoint, img, acts)
        tensors = primary_spwf.read_tensor_file(acts.read_bytes())
        assert tensors["logits"].shape == (65, 8, 8)
        assert tensors["coarse_desc"].shape == (256, 8, 8)

        weights_file = tmp_path / "w.spwf"
        export_weights(checkpoint, weights_file)
        w = spnet.load_weights(weights_file.read_bytes())
        out = spnet.forward(w, ImageBuffer(np.zeros((64, 64, 1))))
        assert np.abs(out.logits - tensors["logits"]).max() < 1e-4
        assert np.abs(out.coarse_desc - tensors["coarse_desc"]).max() < 1e-4

    def test_random_image_matches_primary_forward(self, checkpoint, tmp_path):
        spnet = pytest.importorskip("patchattack.spnet")
        from patchattack import spwf as primary_spwf
        from patchattack.imagecore import ImageBuffer

        img = write_probe_image(tmp_path / "probe.pgm", seed=7)
        acts = tmp_path / "acts.spwf"
        export_reference_activations(checkpoint, img, acts)
        tensors = primary_spwf.read_tensor_file(acts.read_bytes())

        weights_file = tmp_path / "w.spwf"
        export_weights(checkpoint, weights_file)
        w = spnet.load_weights(weights_file.read_bytes())
        out = spnet.forward(w, ImageBuffer(read_pgm(img)[:, :, None]))
        assert np.abs(out.logits - tensors["logits"]).max() < 1e-4
        assert np.abs(out.coarse_desc - tensors["coarse_desc"]).max() < 1e-4

    def test_same_call_twice_identical_bytes(self, checkpoint, tmp_path):
        img = write_probe_image(tmp_path / "probe.pgm")
        a, b = tmp_path / "a.spwf", tmp_path / "b.spwf"
        export_reference_activations(checkpoint, img, a)
        export_reference_activations(checkpoint, img, b)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupted_checkpoint_rejected(self, tmp_path):
        state = {k: torch.zeros(2, 2) for k in expected_shapes()}
        bad = tmp_path / "bad.pth"
        torch.save(state, bad)
        img = write_probe_image(tmp_path / "probe.pgm")
        with pytest.raises(ShapeMismatch):
            export_reference_activations(bad, img, tmp_path / "acts.spwf")

    def test_wrong_probe_size_rejected(self, checkpoint, tmp_path):
        img = tmp_path / "small.pgm"
        img.write_bytes(b"P5\n32 32\n255\n" + bytes(32 * 32))
        with pytest.raises(Exception):
            export_reference_activations(checkpoint, img, tmp_path / "acts.spwf")


class TestCli:
    def test_export_with_activations(self, checkpoint, tmp_path):
        img = write_probe_image(tmp_path / "probe.pgm")
        rc = cli_main([
            "export", "--checkpoint", str(checkpoint), "--out", str(tmp_path / "w.spwf"),
            "--activations", str(img), str(tmp_path / "acts.spwf"),
        ])
        assert rc == 0
        assert (tmp_path / "w.spwf").exists() and (tmp_path / "acts.spwf").exists()

    def test_missing_checkpoint_is_error(self, tmp_path):
        rc = cli_main(["export", "--checkpoint", str(tmp_path / "nope.pth"), "--out", str(tmp_path / "w.spwf")])
        assert rc == 2
