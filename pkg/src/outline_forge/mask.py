"""Binary mask value type, the common currency for annotations and inpaint regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Immutable W x H bit grid stored as a row-major boolean array."""

    data: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def area(self) -> int:
        """Popcount of the mask."""
        return int(self.data.sum())

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.data & other.data)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.data | other.data)

    def __invert__(self) -> "BinaryMask":
        return BinaryMask(~self.data)

    def minus(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.data & ~other.data)

    def is_subset_of(self, other: "BinaryMask") -> bool:
        return bool(np.all(~self.data | other.data))
