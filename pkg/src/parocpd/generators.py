"""Benchmark tensors: matrix-multiplication tensors, random Kruskal tensors, noise.

Randomness comes from numpy's PCG64 through :func:`stream`. A generator is
keyed by the user seed followed by integer stream labels, so independent
draws never share a sequence and adding a new stream never shifts an old one:

* ``stream(seed, FACTORS, n)`` draws the factor matrix of mode ``n``;
* ``stream(seed, NOISE)`` draws additive noise;
* ``stream(seed, r, it)`` (used by PARO) re-initializes component ``r`` at
  iteration ``it``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import KruskalModel, frobenius_norm, reconstruct_kruskal

FACTORS = 1
NOISE = 2
INIT = 3
COLLINEAR_MAX_TRIES = 10_000

KNOWN_RANKS = {(2, 2, 2): 7, (2, 3, 2): 11, (3, 3, 3): 23}


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


@dataclass(frozen=True)
class MultTensorSpec:
    """The product of an ``m x n`` and an ``n x p`` matrix."""

    m: int
    n: int
    p: int

    def __post_init__(self):
        if min(self.m, self.n, self.p) < 1:
            raise ValueError(f"matrix sizes must be positive, got {self}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m * self.n, self.n * self.p, self.m * self.p)


def mult_tensor(spec: MultTensorSpec) -> np.ndarray:
    """0/1 tensor ``Y`` with ``vec(A B) = Y x_1 vec(A.T) x_2 vec(B.T)`` for all ``A``, ``B``.

    Mode 1 indexes ``A[i, j]`` at ``j + n i``, mode 2 indexes ``B[j, k]`` at
    ``k + p j`` and mode 3 indexes ``(A B)[i, k]`` at ``i + m k``.
    """
    m, n, p = spec.m, spec.n, spec.p
    y = np.zeros(spec.shape)
    i, j, k = np.meshgrid(np.arange(m), np.arange(n), np.arange(p), indexing="ij")
    y[(j + n * i).ravel(), (k + p * j).ravel(), (i + m * k).ravel()] = 1.0
    return y


def known_rank(spec: MultTensorSpec) -> int | None:
    """Tensor rank for the cases where it is established; ``None`` otherwise."""
    return KNOWN_RANKS.get((spec.m, spec.n, spec.p))


def _unit_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    u = rng.standard_normal((rows, cols))
    return u / np.linalg.norm(u, axis=0)


def _collinear_block(rng: np.random.Generator, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
    """Columns ``cos(t) d + sin(t) p`` around a shared unit ``d``; all pairwise cosines in ``[lo, hi]``."""
    if cols == 1:
        return _unit_columns(rng, rows, 1)
    if rows < 2:
        raise ValueError("collinear blocks need extents of at least 2")
    # cos(t_i + t_j) >= lo bounds the smallest pairwise cosine
    t_max = math.acos(lo) / 2.0
    for _ in range(COLLINEAR_MAX_TRIES):
        d = _unit_columns(rng, rows, 1)[:, 0]
        p = rng.standard_normal((rows, cols))
        p -= np.outer(d, d @ p)
        p /= np.linalg.norm(p, axis=0)
        t = rng.uniform(0.0, t_max, size=cols)
        block = np.outer(d, np.cos(t)) + p * np.sin(t)
        block /= np.linalg.norm(block, axis=0)
        cos = block.T @ block
        off = cos[np.triu_indices(cols, 1)]
        if off.min() >= lo and off.max() <= hi:
            return block
    raise ValueError(f"could not draw {cols} columns in {rows} dimensions with cosines in [{lo}, {hi}]")


def random_kruskal(
    dims: Sequence[int],
    rank: int,
    seed: int,
    collinearity: tuple[float, float] | None = None,
    blocks: Sequence[int] | None = None,
) -> tuple[KruskalModel, np.ndarray]:
    """Seeded random CP model with unit columns, and its full tensor.

    With ``collinearity=(lo, hi)`` the columns are split into ``blocks``
    (sizes summing to ``rank``; one block by default) and inside each block
    every pair of columns of every factor has cosine in ``[lo, hi]``.
    """
    dims = [int(d) for d in dims]
    if not dims or min(dims) < 1:
        raise ValueError(f"extents must be positive, got {dims}")
    if rank < 1:
        raise ValueError("rank must be at least 1")
    factors = []
    if collinearity is None:
        for n, rows in enumerate(dims):
            factors.append(_unit_columns(stream(seed, FACTORS, n), rows, rank))
    else:
        lo, hi = (float(c) for c in collinearity)
        if not -1.0 <= lo <= hi <= 1.0:
            raise ValueError(f"collinearity range [{lo}, {hi}] is empty or outside [-1, 1]")
        blocks = [rank] if blocks is None else [int(b) for b in blocks]
        if sum(blocks) != rank or min(blocks) < 1:
            raise ValueError(f"block sizes {blocks} do not partition rank {rank}")
        for n, rows in enumerate(dims):
            rng = stream(seed, FACTORS, n)
            factors.append(np.hstack([_collinear_block(rng, rows, b, lo, hi) for b in blocks]))
    model = KruskalModel(factors)
    return model, reconstruct_kruskal(model)


def random_init(dims: Sequence[int], rank: int, seed: int) -> KruskalModel:
    """Standard-normal starting factors for a decomposition run."""
    return KruskalModel([stream(seed, INIT, n).standard_normal((int(d), rank)) for n, d in enumerate(dims)])


def add_noise(t: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add Gaussian noise scaled so that ``10 log10(|t|^2 / |noise|^2) == snr_db``.

    ``snr_db = inf`` returns ``t`` unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return t.copy()
    signal = frobenius_norm(t)
    if signal == 0.0:
        raise ValueError("cannot set a finite SNR for a zero tensor")
    noise = stream(seed, NOISE).standard_normal(t.shape)
    noise *= signal / frobenius_norm(noise) * 10.0 ** (-snr_db / 20.0)
    return t + noise
