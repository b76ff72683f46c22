import struct

import numpy as np
import pytest

from dualvit.data import (Dataset, class_means, load_checkpoint,
                          load_checkpoint_into, load_packed_dataset,
                          make_synthetic, save_checkpoint,
                          save_packed_dataset)
from dualvit.errors import ConfigError, FormatError
from dualvit.model import build_model, preset_config
from dualvit.training import _randomize


def test_synthetic_is_balanced_and_in_range():
    data = make_synthetic(num_classes=5, per_class=4, resolution=16, seed=0)
    assert data.images.shape == (20, 16, 16, 3)
    assert data.images.dtype == np.float32
    assert data.images.min() >= 0.0 and data.images.max() <= 1.0
    counts = np.bincount(data.labels, minlength=5)
    np.testing.assert_array_equal(counts, 4)


def test_synthetic_is_deterministic():
    a = make_synthetic(4, 3, 16, seed=42)
    b = make_synthetic(4, 3, 16, seed=42)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = make_synthetic(4, 3, 16, seed=43)
    assert not np.array_equal(a.images, c.images)


def test_nearest_mean_classifier_is_perfect():
    """The class signal dominates the noise: nearest clean mean recovers labels."""
    data = make_synthetic(num_classes=6, per_class=8, resolution=16, seed=1)
    means = class_means(6, 16, seed=1).reshape(6, -1)
    flat = data.images.reshape(len(data.labels), -1)
    dists = ((flat[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    predicted = dists.argmin(axis=1)
    np.testing.assert_array_equal(predicted, data.labels)


def test_dataset_rejects_bad_labels():
    images = np.zeros((2, 4, 4, 3), dtype=np.float32)
    with pytest.raises(FormatError):
        Dataset(images=images, labels=np.array([0, 3]), num_classes=3)


def test_load_handcrafted_minimal_file(tmp_path):
    """One 2x2 image written byte by byte against the documented layout."""
    pixels = bytes(range(12))
    blob = struct.pack("<4sIIHHHH", b"DVDS", 1, 1, 2, 2, 3, 4)
    blob += struct.pack("<H", 3) + pixels
    path = tmp_path / "one.dvds"
    path.write_bytes(blob)
    data = load_packed_dataset(str(path))
    assert data.num_classes == 4
    assert data.labels.tolist() == [3]
    expected = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 2, 3) / 255.0
    np.testing.assert_array_equal(data.images[0], expected.astype(np.float32))


def test_dataset_roundtrip_is_bit_exact(tmp_path):
    data = make_synthetic(3, 5, 8, seed=9)
    path = tmp_path / "set.dvds"
    save_packed_dataset(data, str(path))
    back = load_packed_dataset(str(path))
    np.testing.assert_array_equal(back.images, data.images)
    np.testing.assert_array_equal(back.labels, data.labels)
    assert back.num_classes == data.num_classes


def test_truncated_file_error_names_lengths(tmp_path):
    data = make_synthetic(2, 2, 8, seed=0)
    path = tmp_path / "cut.dvds"
    save_packed_dataset(data, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(FormatError, match=f"expected {len(blob)}.*got {len(blob) - 10}"):
        load_packed_dataset(str(path))


def test_bad_magic_and_version_rejected(tmp_path):
    path = tmp_path / "bad.dvds"
    path.write_bytes(struct.pack("<4sIIHHHH", b"NOPE", 1, 0, 2, 2, 3, 1))
    with pytest.raises(FormatError, match="magic"):
        load_packed_dataset(str(path))
    path.write_bytes(struct.pack("<4sIIHHHH", b"DVDS", 9, 0, 2, 2, 3, 1))
    with pytest.raises(FormatError, match="version"):
        load_packed_dataset(str(path))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = preset_config("tiny")
    model = build_model(cfg)
    _randomize(model, np.random.default_rng(4), scale=0.05)
    path = tmp_path / "m.dvcp"
    save_checkpoint(model, str(path))
    restored = load_checkpoint(str(path))
    for (name, p), (name2, q) in zip(model.named_parameters(),
                                     restored.named_parameters()):
        assert name == name2
        np.testing.assert_array_equal(p.data, q.data, err_msg=name)


def test_checkpoint_forward_identical_after_reload(tmp_path):
    cfg = preset_config("tiny")
    model = build_model(cfg)
    _randomize(model, np.random.default_rng(8), scale=0.05)
    images = np.random.default_rng(0).random((2, cfg.resolution, cfg.resolution, 3))
    images = images.astype(np.float32)
    before = model(images).data.copy()
    path = tmp_path / "m.dvcp"
    save_checkpoint(model, str(path))
    fresh = build_model(cfg)
    load_checkpoint_into(fresh, str(path))
    np.testing.assert_array_equal(fresh(images).data, before)


def test_checkpoint_rejects_mismatched_model(tmp_path):
    path = tmp_path / "m.dvcp"
    save_checkpoint(build_model(preset_config("tiny")), str(path))
    other = build_model(preset_config("tiny", m=8))
    with pytest.raises(ConfigError):
        load_checkpoint_into(other, str(path))
    wrong_variant = build_model(preset_config("tiny"), variant="A")
    with pytest.raises(ConfigError):
        load_checkpoint_into(wrong_variant, str(path))


def test_checkpoint_detects_corruption(tmp_path):
    path = tmp_path / "m.dvcp"
    save_checkpoint(build_model(preset_config("tiny")), str(path))
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="checksum"):
        load_checkpoint(str(path))
