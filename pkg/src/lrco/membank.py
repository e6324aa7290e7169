"""Fixed-capacity FIFO store of unit-normalized key vectors."""

from __future__ import annotations

from collections import deque

import numpy as np

from .losses import UNIT_NORM_TOL


class MemoryBank:
    """Queue of teacher keys; oldest entries fall out once capacity is reached.

    The bank is never flushed during a run; it only ever evolves by pushes.
    """

    def __init__(self, capacity: int = 512):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._entries: deque[np.ndarray] = deque(maxlen=self.capacity)
        self._dim: int | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def dim(self) -> int | None:
        return self._dim

    def push_batch(self, keys) -> None:
        """Append rows in order; earlier rows are evicted first when full."""
        keys = np.asarray(keys, dtype=np.float64)
        if keys.size == 0:
            return
        if keys.ndim == 1:
            keys = keys.reshape(1, -1)
        if keys.ndim != 2:
            raise ValueError("keys must be a vector or a matrix of row vectors")
        if self._dim is None:
            self._dim = keys.shape[1]
        elif keys.shape[1] != self._dim:
            raise ValueError(
                f"key dim {keys.shape[1]} does not match bank dim {self._dim}"
            )
        norms = np.linalg.norm(keys, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError(
                f"bank keys must be unit-normalized (tolerance {UNIT_NORM_TOL})"
            )
        for row in keys:
            self._entries.append(row.copy())

    def snapshot(self) -> np.ndarray:
        """Immutable copy of the current contents, oldest row first."""
        if not self._entries:
            out = np.zeros((0, self._dim if self._dim is not None else 0))
        else:
            out = np.stack(list(self._entries))
        out.flags.writeable = False
        return out

    # Checkpoint support -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        contents = (
            np.stack(list(self._entries))
            if self._entries
            else np.zeros((0, self._dim if self._dim is not None else 0))
        )
        return {
            "bank.contents": contents,
            "bank.capacity": np.array(self.capacity, dtype=np.int64),
        }

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray]) -> "MemoryBank":
        bank = cls(capacity=int(arrays["bank.capacity"]))
        contents = np.asarray(arrays["bank.contents"], dtype=np.float64)
        if contents.size:
            bank.push_batch(contents)
        elif contents.ndim == 2 and contents.shape[1] > 0:
            bank._dim = contents.shape[1]
        return bank
