"""Dense tensor substrate.

Tensors are plain ``numpy.ndarray`` objects in double precision. Whenever a
tensor is flattened, the first index varies fastest (column-major), so that
``vec(u_1 o u_2 o ... o u_N) == kron(u_N, ..., u_1)``.

Modes are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DegenerateModelError(ArithmeticError):
    """A factor, projection or scale vanished and the update is undefined."""


def as_tensor(data, shape=None) -> np.ndarray:
    """Return ``data`` as a finite float64 array, optionally folded to ``shape``.

    A flat ``data`` with an explicit ``shape`` is interpreted column-major.
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"extents must be positive, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape, order="F")
    if arr.ndim == 0 or arr.size == 0:
        raise ValueError("a tensor needs at least one mode and one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    return arr


def vec(t: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(t).reshape(-1, order="F")


def _check_mode(ndim: int, mode: int) -> int:
    if not 0 <= mode < ndim:
        raise IndexError(f"mode {mode} out of range for an order-{ndim} tensor")
    return mode


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(I_mode, prod of the other extents)``.

    Columns are ordered with the remaining modes in increasing order, first
    one fastest.
    """
    _check_mode(t.ndim, mode)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(shape)
    _check_mode(len(shape), mode)
    rest = shape[:mode] + shape[mode + 1 :]
    return np.moveaxis(m.reshape((shape[mode],) + rest, order="F"), 0, mode)


def contract_all_but(t: np.ndarray, vectors: Sequence[np.ndarray], skip: int) -> np.ndarray:
    """Contract ``t`` with ``vectors[k]`` along every mode ``k != skip``.

    ``vectors[skip]`` is ignored (it may be ``None``). Trailing modes are
    contracted first by matrix-vector products on the last axis, then the
    leading modes on the first axis, so no transposed copy is ever made.
    """
    _check_mode(t.ndim, skip)
    if len(vectors) != t.ndim:
        raise ValueError(f"expected {t.ndim} vectors, got {len(vectors)}")
    for k, v in enumerate(vectors):
        if k != skip and np.shape(v) != (t.shape[k],):
            raise ValueError(f"vector for mode {k} has shape {np.shape(v)}, expected ({t.shape[k]},)")
    out = t
    for k in range(t.ndim - 1, skip, -1):
        out = out @ vectors[k]
    for k in range(skip):
        out = vectors[k] @ out.reshape(t.shape[k], -1)
    return np.asarray(out, dtype=np.float64).reshape(t.shape[skip])


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """``t x̄_mode m``: contract mode ``mode`` of ``t`` with the rows of ``m``.

    The extent of ``mode`` changes from ``m.shape[0]`` to ``m.shape[1]``.
    """
    _check_mode(t.ndim, mode)
    if m.ndim != 2 or m.shape[0] != t.shape[mode]:
        raise ValueError(f"matrix of shape {m.shape} does not match extent {t.shape[mode]} of mode {mode}")
    return np.moveaxis(np.moveaxis(t, mode, -1) @ m, -1, mode)


def multi_mode_product(t: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """``t x̄_1 V_1 ... x̄_N V_N``; modes are processed by decreasing extent."""
    if len(mats) != t.ndim:
        raise ValueError(f"expected {t.ndim} matrices, got {len(mats)}")
    for n, m in enumerate(mats):
        if np.ndim(m) != 2 or m.shape[0] != t.shape[n]:
            raise ValueError(f"matrix {n} has shape {np.shape(m)}, expected ({t.shape[n]}, *)")
    out = t
    for n in sorted(range(t.ndim), key=lambda k: -t.shape[k]):
        out = mode_product(out, mats[n], n)
    return out


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product ``U_N ⊙ ... ⊙ U_1`` of ``mats = [U_1, ..., U_N]``.

    With this ordering ``khatri_rao(factors) @ ones(R)`` is the column-major
    vectorization of the Kruskal tensor.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("need at least one matrix")
    R = mats[0].shape[1]
    if any(m.ndim != 2 or m.shape[1] != R for m in mats):
        raise ValueError("all matrices must share the same column count")
    out = mats[0]
    for m in mats[1:]:
        out = (m[:, None, :] * out[None, :, :]).reshape(-1, R)
    return out


def inner(a: np.ndarray, b: np.ndarray) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    return float(np.dot(vec(a), vec(b)))


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(vec(t)))


def permute(t: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Reorder modes: mode ``k`` of the result is mode ``perm[k]`` of ``t``."""
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ValueError(f"{perm} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, perm))


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for k, p in enumerate(perm):
        inv[p] = k
    return tuple(inv)


def outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Rank-1 tensor ``v_1 o v_2 o ... o v_N``."""
    shape = tuple(len(v) for v in vectors)
    col = khatri_rao([np.asarray(v, dtype=np.float64).reshape(-1, 1) for v in vectors])
    return col[:, 0].reshape(shape, order="F")


@dataclass
class KruskalModel:
    """Rank-R CP model: ``sum_r U_1[:, r] o ... o U_N[:, r]``."""

    factors: list[np.ndarray]

    def __post_init__(self):
        self.factors = [np.array(f, dtype=np.float64, ndmin=2) for f in self.factors]
        if not self.factors:
            raise ValueError("a Kruskal model needs at least one factor matrix")
        if len({f.shape[1] for f in self.factors}) != 1:
            raise ValueError("factor matrices must share the same column count")
        if not all(np.all(np.isfinite(f)) for f in self.factors):
            raise ValueError("factor entries must be finite")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ndim(self) -> int:
        return len(self.factors)

    def component(self, r: int) -> list[np.ndarray]:
        return [f[:, r].copy() for f in self.factors]

    def copy(self) -> "KruskalModel":
        return KruskalModel([f.copy() for f in self.factors])


def reconstruct_kruskal(m: KruskalModel) -> np.ndarray:
    kr = khatri_rao(m.factors)
    return kr.sum(axis=1).reshape(m.shape, order="F")


def read_tensor(path) -> np.ndarray:
    """Read the ``.ten`` text format (order, extents, column-major values)."""
    tokens = Path(path).read_text().split()
    if not tokens:
        raise ValueError(f"{path}: empty tensor file")
    order = int(tokens[0])
    if order < 1 or len(tokens) < 1 + order:
        raise ValueError(f"{path}: malformed header")
    shape = tuple(int(s) for s in tokens[1 : 1 + order])
    values = np.array([float(v) for v in tokens[1 + order :]], dtype=np.float64)
    return as_tensor(values, shape)


def write_tensor(path, t: np.ndarray) -> None:
    t = as_tensor(t)
    lines = [str(t.ndim), " ".join(str(s) for s in t.shape)]
    lines.extend(f"{v:.17g}" for v in vec(t))
    Path(path).write_text("\n".join(lines) + "\n")
