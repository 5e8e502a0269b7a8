"""Channel sampling, uncertainty injection, and the binary channel dump.

All randomness flows through `substream`, which derives independent
generators from a master seed and an integer/string path, so training
batches, test sets, and per-channel error draws never share a stream.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

CHANNEL_MAGIC = b"RBCH"
CHANNEL_VERSION = 1


def _as_entropy(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ConfigurationError(f"stream ids must be nonnegative, got {part}")
        return int(part)
    raise ConfigurationError(f"stream path parts must be int or str, got {type(part)!r}")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for (seed, path); equal inputs give identical streams."""
    entropy = [_as_entropy(seed)] + [_as_entropy(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _resolve_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed)


def sample_channels(seed, L: int, K: int, count: int) -> np.ndarray:
    """count i.i.d. Rayleigh channels, entries CN(0, 1), shape (count, L, K)."""
    if L < 1 or K < 1 or count < 0:
        raise ConfigurationError(f"bad dimensions L={L} K={K} count={count}")
    rng = _resolve_rng(seed)
    re = rng.standard_normal((count, L, K))
    im = rng.standard_normal((count, L, K))
    return (re + 1j * im) / np.sqrt(2.0)


@dataclass
class UncertaintyBatch:
    """A nominal channel plus B noisy observations of it."""

    nominal: np.ndarray
    samples: np.ndarray  # (B, L, K)
    sigma_h2: float

    @property
    def B(self) -> int:
        return self.samples.shape[0]


def inject_uncertainty(H: np.ndarray, sigma_h2: float, B: int, seed) -> UncertaintyBatch:
    """H_b = H + E_b with E_b entries CN(0, sigma_h2), b = 1..B."""
    if sigma_h2 < 0:
        raise ConfigurationError(f"sigma_h2 must be >= 0, got {sigma_h2}")
    if B < 1:
        raise ConfigurationError(f"need B >= 1, got {B}")
    rng = _resolve_rng(seed)
    L, K = H.shape
    err = rng.standard_normal((B, L, K)) + 1j * rng.standard_normal((B, L, K))
    err *= np.sqrt(sigma_h2 / 2.0)
    return UncertaintyBatch(nominal=H, samples=H[None, :, :] + err, sigma_h2=sigma_h2)


def save_channels(path, channels: np.ndarray) -> None:
    """Binary dump: magic, version/L/K as u32, count as u64, then little-endian
    float64 (re, im) pairs in column-major order (antenna fastest) per sample."""
    channels = np.asarray(channels)
    if channels.ndim != 3:
        raise ConfigurationError(f"expected (count, L, K) stack, got shape {channels.shape}")
    count, L, K = channels.shape
    header = CHANNEL_MAGIC + struct.pack("<IIIQ", CHANNEL_VERSION, L, K, count)
    flat = np.transpose(channels, (0, 2, 1)).reshape(count, L * K)  # k major, l minor
    pairs = np.empty((count, L * K, 2), dtype="<f8")
    pairs[:, :, 0] = flat.real
    pairs[:, :, 1] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pairs.tobytes())


def load_channels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    head = len(CHANNEL_MAGIC) + struct.calcsize("<IIIQ")
    if len(raw) < head or raw[:4] != CHANNEL_MAGIC:
        raise ConfigurationError(f"{path}: not a channel dump (bad magic)")
    version, L, K, count = struct.unpack("<IIIQ", raw[4:head])
    if version != CHANNEL_VERSION:
        raise ConfigurationError(f"{path}: unsupported format version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=head)
    if body.size != count * L * K * 2:
        raise ConfigurationError(f"{path}: truncated payload")
    pairs = body.reshape(count, K, L, 2)
    flat = pairs[..., 0] + 1j * pairs[..., 1]
    return np.ascontiguousarray(np.transpose(flat, (0, 2, 1)))
