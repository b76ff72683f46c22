"""Datasets and serialization: synthetic data, the DVDS container, checkpoints.

DVDS v1 (packed image dataset, little-endian throughout):
    magic "DVDS" | u32 version=1 | u32 N | u16 H | u16 W | u16 channels=3
    | u16 classes | N records of (u16 label + H*W*3 bytes, row-major,
    pixel value = byte / 255)

DVCP v1 (checkpoint):
    magic "DVCP" | u32 version=1 | u32 manifest_len | manifest JSON (UTF-8:
    model config echo, ablation variant, ordered entries of name + shape)
    | concatenated raw little-endian float32 payloads in entry order
    | u32 CRC32 of the payload bytes

Both round trips are bit-exact. Synthetic images are quantized to the
byte grid so that a DVDS round trip reproduces them exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .model import DualViT, ModelConfig, build_model

DVDS_MAGIC = b"DVDS"
DVCP_MAGIC = b"DVCP"


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int
    num_classes: int

    def __post_init__(self):
        if len(self.labels) < 1:
            raise FormatError("dataset must contain at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise FormatError("labels out of range for class count")


def class_means(num_classes: int, resolution: int, seed: int = 0) -> np.ndarray:
    """Clean per-class mean images: one Gaussian blob per class.

    Blob center, radius and channel color are drawn per class from the seeded
    generator, so distinct classes get distinct patterns.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    means = np.zeros((num_classes, resolution, resolution, 3), dtype=np.float64)
    for c in range(num_classes):
        cy, cx = rng.uniform(0.2, 0.8, size=2) * resolution
        sigma = rng.uniform(0.12, 0.25) * resolution
        color = rng.uniform(0.3, 1.0, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        means[c] = 0.1 + 0.8 * blob[..., None] * color
    return means.astype(np.float32)


def make_synthetic(num_classes: int, per_class: int, resolution: int,
                   seed: int = 0, noise_std: float = 0.1) -> Dataset:
    """Class-conditional blob images plus Gaussian noise, byte-quantized."""
    rng = np.random.default_rng(seed)
    means = class_means(num_classes, resolution, seed)
    images = []
    labels = []
    for c in range(num_classes):
        noise = noise_std * rng.standard_normal((per_class, resolution, resolution, 3))
        imgs = np.clip(means[c] + noise, 0.0, 1.0)
        images.append(imgs)
        labels.extend([c] * per_class)
    stacked = np.concatenate(images, axis=0)
    quantized = np.round(stacked * 255.0).astype(np.uint8)
    return Dataset(images=(quantized / 255.0).astype(np.float32),
                   labels=np.asarray(labels, dtype=np.int64),
                   num_classes=num_classes)


# ---------------------------------------------------------------------------
# DVDS packed dataset container
# ---------------------------------------------------------------------------

_DVDS_HEADER = struct.Struct("<4sIIHHHH")


def save_packed_dataset(dataset: Dataset, path: str) -> None:
    n, h, w, c = dataset.images.shape
    if c != 3:
        raise FormatError(f"DVDS v1 stores 3-channel images, got {c}")
    payload = bytearray(_DVDS_HEADER.pack(DVDS_MAGIC, 1, n, h, w, 3,
                                          dataset.num_classes))
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    for i in range(n):
        payload += struct.pack("<H", int(dataset.labels[i]))
        payload += pixels[i].tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)


def load_packed_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DVDS_HEADER.size:
        raise FormatError(
            f"truncated DVDS header: need {_DVDS_HEADER.size} bytes, got {len(blob)}"
        )
    magic, version, n, h, w, c, classes = _DVDS_HEADER.unpack_from(blob, 0)
    if magic != DVDS_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {DVDS_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported DVDS version {version} at byte 4")
    if c != 3:
        raise FormatError(f"DVDS v1 requires 3 channels, file declares {c}")
    record = 2 + h * w * 3
    expected = _DVDS_HEADER.size + n * record
    if len(blob) != expected:
        raise FormatError(
            f"DVDS payload length mismatch: expected {expected} bytes, "
            f"got {len(blob)} (first bad offset {min(expected, len(blob))})"
        )
    images = np.empty((n, h, w, 3), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    offset = _DVDS_HEADER.size
    for i in range(n):
        (labels[i],) = struct.unpack_from("<H", blob, offset)
        offset += 2
        pix = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=offset)
        images[i] = pix.reshape(h, w, 3) / 255.0
        offset += h * w * 3
    if labels.max() >= classes:
        raise FormatError("label exceeds declared class count")
    return Dataset(images=images, labels=labels, num_classes=classes)


# ---------------------------------------------------------------------------
# DVCP checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(model: DualViT, path: str) -> None:
    entries = []
    payload = bytearray()
    for name, p in model.named_parameters():
        data = np.ascontiguousarray(p.data, dtype="<f4")
        entries.append({"name": name, "shape": list(p.data.shape)})
        payload += data.tobytes()
    manifest = json.dumps({
        "config": model.config.to_dict(),
        "variant": model.variant,
        "entries": entries,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DVCP_MAGIC)
        fh.write(struct.pack("<II", 1, len(manifest)))
        fh.write(manifest)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def _read_checkpoint(path: str) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DVCP_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {DVCP_MAGIC!r}")
    version, manifest_len = struct.unpack_from("<II", blob, 4)
    if version != 1:
        raise FormatError(f"unsupported DVCP version {version}")
    manifest_end = 12 + manifest_len
    manifest = json.loads(blob[12:manifest_end].decode("utf-8"))
    payload = blob[manifest_end:-4]
    (checksum,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != checksum:
        raise FormatError("checkpoint payload checksum mismatch")
    return manifest, np.frombuffer(payload, dtype="<f4")


def load_checkpoint_into(model: DualViT, path: str) -> None:
    """Load parameters into an existing model, validating names and shapes."""
    manifest, flat = _read_checkpoint(path)
    if manifest["config"] != model.config.to_dict() or manifest["variant"] != model.variant:
        raise ConfigError(
            "checkpoint was saved for a different model configuration"
        )
    params = dict(model.named_parameters())
    offset = 0
    for entry in manifest["entries"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in params:
            raise ConfigError(f"checkpoint entry {name!r} not present in model")
        p = params[name]
        if p.data.shape != shape:
            raise ConfigError(
                f"shape mismatch for {name!r}: checkpoint {shape}, model {p.data.shape}"
            )
        size = int(np.prod(shape))
        p.data[...] = flat[offset:offset + size].reshape(shape).astype(p.data.dtype)
        offset += size
    if offset != flat.size:
        raise FormatError("checkpoint payload longer than manifest describes")


def load_checkpoint(path: str) -> DualViT:
    """Rebuild the model described by the checkpoint's config echo."""
    manifest, _ = _read_checkpoint(path)
    config = ModelConfig.from_dict(manifest["config"])
    model = build_model(config, variant=manifest["variant"])
    load_checkpoint_into(model, path)
    return model
