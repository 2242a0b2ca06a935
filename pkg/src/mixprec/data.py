"""Dataset ingestion (IDX), the binary model file format, and synthetic nets.

Model files store weights as raw low-format encodings (one byte per FP8
weight), so quantization survives a round trip by construction.  A CRC32
over the payload catches corruption that still decodes to valid values.
"""

from __future__ import annotations

import gzip
import io
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind
from .linalg import Matrix
from .network import Layer, Network
from .precision import (
    FORMATS,
    FP8_E4M3,
    FP16,
    FloatFormat,
    OverflowPolicy,
    decode,
    encode,
    quantize,
)

__all__ = [
    "DataError",
    "BadMagicError",
    "TruncatedDataError",
    "DimensionMismatchError",
    "ModelFormatError",
    "Dataset",
    "load_idx_images",
    "load_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_dataset",
    "save_model",
    "load_model",
    "synthetic_net",
    "synthetic_inputs",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MODEL_MAGIC = b"MPNN"
MODEL_VERSION = 1


class DataError(Exception):
    """Base class for ingestion failures."""


class BadMagicError(DataError):
    pass


class TruncatedDataError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class ModelFormatError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Flattened images in [0, 1] with class labels."""

    images: np.ndarray  # (N, 784) float64
    labels: np.ndarray  # (N,) int64 in 0..9
    split: str  # "train" or "test"

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _open_maybe_gzip(source):
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return io.BytesIO(data)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedDataError(f"truncated while reading {what}")
    return buf


def load_idx_images(source) -> np.ndarray:
    """Big-endian IDX image tensor -> (N, 784) pixels scaled into [0, 1]."""
    fh = _open_maybe_gzip(source)
    magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "header"))
    if magic != IMAGE_MAGIC:
        raise BadMagicError(f"image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    if (rows, cols) != (28, 28):
        raise DimensionMismatchError(f"expected 28x28 images, got {rows}x{cols}")
    raw = _read_exact(fh, n * rows * cols, "pixel payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(n, rows * cols)


def load_idx_labels(source) -> np.ndarray:
    """Big-endian IDX label vector -> (N,) int64."""
    fh = _open_maybe_gzip(source)
    magic, n = struct.unpack(">II", _read_exact(fh, 8, "header"))
    if magic != LABEL_MAGIC:
        raise BadMagicError(f"label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    raw = _read_exact(fh, n, "label payload")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(images: np.ndarray, path) -> None:
    """Inverse of :func:`load_idx_images` (pixels rescaled back to bytes)."""
    n = images.shape[0]
    body = np.rint(np.asarray(images) * 255.0).astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, 28, 28))
        fh.write(body)


def write_idx_labels(labels: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_dataset(images_source, labels_source, split: str) -> Dataset:
    images = load_idx_images(images_source)
    labels = load_idx_labels(labels_source)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return Dataset(images=images, labels=labels, split=split)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_ACTIVATION_TAGS = {ActivationKind.RELU: 0, ActivationKind.TANH: 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}


def _pack_format(fmt: FloatFormat) -> bytes:
    policy = 0 if fmt.overflow_policy is OverflowPolicy.SATURATE_TO_MAX_FINITE else 1
    return struct.pack(
        "<BBhBB",
        fmt.exponent_bits,
        fmt.mantissa_bits,
        fmt.exponent_bias,
        policy,
        int(fmt.supports_subnormals),
    )


def _unpack_format(buf: bytes) -> FloatFormat:
    ebits, mbits, bias, policy, subnormals = struct.unpack("<BBhBB", buf)
    policy_enum = (
        OverflowPolicy.SATURATE_TO_MAX_FINITE if policy == 0 else OverflowPolicy.TO_INFINITY
    )
    for fmt in FORMATS.values():
        if (
            fmt.exponent_bits,
            fmt.mantissa_bits,
            fmt.exponent_bias,
            fmt.overflow_policy,
            fmt.supports_subnormals,
        ) == (ebits, mbits, bias, policy_enum, bool(subnormals)):
            return fmt
    return FloatFormat(
        f"e{ebits}m{mbits}", ebits, mbits, bias, policy_enum, bool(subnormals)
    )


def save_model(net: Network, path, metadata: dict | None = None) -> None:
    """Serialize a network; weights stored as low-format byte encodings."""
    if net.low_format.total_bits != 8:
        raise ModelFormatError("model files require an 8-bit low format")
    meta = json.dumps(metadata or {}).encode()
    payload = bytearray()
    header = bytearray()
    header += MODEL_MAGIC
    header += struct.pack("<I", MODEL_VERSION)
    header += _pack_format(net.low_format)
    header += _pack_format(net.high_format)
    header += struct.pack("<I", net.depth)
    header += struct.pack("<I", len(meta)) + meta
    for ly in net.layers:
        payload += struct.pack(
            "<IIB", ly.out_dim, ly.in_dim, _ACTIVATION_TAGS[ly.activation]
        )
        codes = encode(ly.weights.data.ravel(), net.low_format).astype(np.uint8)
        payload += codes.tobytes()
    crc = zlib.crc32(bytes(payload))
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(bytes(payload))
        fh.write(struct.pack("<I", crc))


def load_model(path) -> tuple[Network, dict]:
    """Load a model file; returns the network and its metadata."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fh = io.BytesIO(blob)
    magic = _read_exact(fh, 4, "model magic")
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"model magic {magic!r}, expected {MODEL_MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    low = _unpack_format(_read_exact(fh, 6, "low format"))
    high = _unpack_format(_read_exact(fh, 6, "high format"))
    (depth,) = struct.unpack("<I", _read_exact(fh, 4, "layer count"))
    (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
    try:
        metadata = json.loads(_read_exact(fh, meta_len, "metadata"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt metadata: {exc}") from exc

    payload_start = fh.tell()
    layers = []
    for _ in range(depth):
        out_dim, in_dim, act_tag = struct.unpack(
            "<IIB", _read_exact(fh, 9, "layer header")
        )
        if act_tag not in _TAG_ACTIVATIONS:
            raise ModelFormatError(f"unknown activation tag {act_tag}")
        n_codes = out_dim * (in_dim + 1)
        codes = np.frombuffer(
            _read_exact(fh, n_codes, "weight payload"), dtype=np.uint8
        )
        values = decode(codes.astype(np.uint64), low).reshape(out_dim, in_dim + 1)
        if not np.all(np.isfinite(values)):
            raise ModelFormatError("payload decodes to non-finite weights")
        layers.append(Layer(Matrix(values, low), _TAG_ACTIVATIONS[act_tag]))
    payload_end = fh.tell()
    (crc_stored,) = struct.unpack("<I", _read_exact(fh, 4, "checksum"))
    crc = zlib.crc32(blob[payload_start:payload_end])
    if crc != crc_stored:
        raise ModelFormatError(
            f"payload checksum mismatch (stored 0x{crc_stored:08x}, got 0x{crc:08x})"
        )
    return Network(tuple(layers), low, high), metadata


# ---------------------------------------------------------------------------
# synthetic problems for property tests and experiments
# ---------------------------------------------------------------------------


def synthetic_net(
    seed: int,
    dims,
    activation: ActivationKind,
    weight_scale: float,
    bias_scale: float = 0.5,
    low: FloatFormat = FP8_E4M3,
    high: FloatFormat = FP16,
) -> Network:
    """Random network with uniform weights quantized to the low format.

    ``dims = [in, h1, ..., out]``; weights are drawn from
    U(-weight_scale, weight_scale) and biases from U(-bias_scale, bias_scale),
    deterministically from the seed.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        w = rng.uniform(-weight_scale, weight_scale, size=(d_out, d_in))
        b = rng.uniform(-bias_scale, bias_scale, size=(d_out, 1))
        aug = quantize(np.concatenate([w, b], axis=1), low)
        layers.append(Layer(Matrix(aug, low), activation))
    return Network(tuple(layers), low, high)


def synthetic_inputs(seed: int, n: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """(n, dim) inputs drawn from U(-scale, scale), deterministic in seed."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(n, dim))
