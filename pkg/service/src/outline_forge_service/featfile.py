"""FEAT binary container writer.

Layout: magic "FEAT", version u32, count u64, dim u32 (all little endian),
then count*dim float32 rows. This mirrors the consumer-side reader in the
augmentation tool; the two implementations are kept independent on purpose
and cross-checked by the conformance tests.
"""

from __future__ import annotations

import struct

import numpy as np

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def feature_bytes(features: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
    if arr.ndim != 2:
        raise ValueError(f"features must be 2-D (count, dim), got shape {arr.shape}")
    header = _HEADER.pack(FEAT_MAGIC, FEAT_VERSION, arr.shape[0], arr.shape[1])
    return header + arr.astype("<f4").tobytes()


def write_feature_file(path, features: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(feature_bytes(features))
    return path
