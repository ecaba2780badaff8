"""Small shared building blocks: parameter init, feedforward, positions."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["glorot", "zeros", "sinusoidal_positions", "collect_tensors"]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    """Glorot-uniform trainable matrix/vector."""
    if shape is None:
        shape = (fan_in, fan_out)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    """Fixed interleaved sin/cos positional table of shape (max_len, dim)."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim - dim // 2])
    return table


def collect_tensors(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Walk dataclass-like containers and gather named trainable tensors.

    Recognizes Tensors, lists/tuples and objects with __dict__ or
    __dataclass_fields__; fixed numpy arrays are skipped.
    """
    found: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            found.append((prefix or "param", obj))
        return found
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            found.extend(collect_tensors(item, f"{prefix}[{i}]"))
        return found
    fields = getattr(obj, "__dataclass_fields__", None)
    if fields is not None:
        for name in fields:
            found.extend(collect_tensors(getattr(obj, name), f"{prefix}.{name}" if prefix else name))
    return found
