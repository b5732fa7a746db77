"""Rotational best rank-1 updates (RORO).

Each unit factor ``u_n`` is paired with its normalized sphere-constrained
gradient, giving an orthonormal basis ``[u_n, g_n]``. The target is projected
onto these bases, producing a 2x...x2 tensor ``W``, and the best rank-1 term of
``W`` (unit vectors ``eta_n``) rotates every factor at once:
``u_n <- [u_n, g_n] @ eta_n``. Since ``eta_n = [1, 0]`` reproduces the current
model, an exact subproblem solve never lowers ``xi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantized import best_rank1_binary
from .rank1 import Rank1Model, target_contract, target_project
from .tensor import DegenerateModelError

STATIONARY_RTOL = 1e-12


def degenerate_mode_basis(u: np.ndarray) -> np.ndarray:
    """``[u, v]`` with ``v`` the first canonical vector made orthogonal to ``u``.

    A canonical vector nearly parallel to ``u`` is skipped in favour of the
    next one. For a length-1 ``u`` there is no orthogonal complement and the
    second column is zero, which freezes the mode.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.size == 1:
        return np.column_stack([u, np.zeros(1)])
    for k in range(u.size):
        v = -u[k] * u
        v[k] += 1.0
        nrm = np.linalg.norm(v)
        if nrm > 0.5:
            return np.column_stack([u, v / nrm])
    raise DegenerateModelError("no orthogonal complement found; is u a unit vector?")


@dataclass
class RotationBasis:
    """Per-mode ``I_n x 2`` orthonormal bases ``[u_n, g_n]`` and the current ``xi``."""

    columns: list[np.ndarray]
    frozen: list[bool]
    degenerate: list[bool]
    xi: float

    @property
    def stationary(self) -> bool:
        return all(self.degenerate)


def rotation_basis(t, m: Rank1Model) -> RotationBasis:
    factors = [u / np.linalg.norm(u) for u in m.factors]
    tns = [target_contract(t, factors, n) for n in range(len(factors))]
    xi = float(tns[0] @ factors[0])
    thr = STATIONARY_RTOL * max(1.0, xi * xi)
    cols, frozen, degenerate = [], [], []
    for u, tn in zip(factors, tns):
        g = xi * tn - xi * xi * u
        gnorm = float(np.linalg.norm(g))
        frozen.append(u.size == 1)
        degenerate.append(gnorm <= thr)
        if gnorm <= thr or u.size == 1:
            cols.append(degenerate_mode_basis(u))
            continue
        g = g / gnorm
        g = g - (u @ g) * u
        cols.append(np.column_stack([u, g / np.linalg.norm(g)]))
    return RotationBasis(cols, frozen, degenerate, xi)


def roro_step(t, m: Rank1Model) -> Rank1Model:
    """One RORO iteration; returns unit factors and ``weight = xi`` of the new model.

    At a stationary point every mode uses the complement basis. The rotated
    model is then kept only if it raises ``xi``, so a true maximizer is
    returned unchanged while saddles and lower maxima can still be left.
    """
    basis = rotation_basis(t, m)
    current = Rank1Model([v[:, 0].copy() for v in basis.columns], basis.xi)
    if all(basis.frozen):
        return current
    w = target_project(t, basis.columns)
    # frozen modes keep eta = [1, 0]; contract them away before solving
    live = [n for n, f in enumerate(basis.frozen) if not f]
    for n in reversed(range(w.ndim)):
        if basis.frozen[n]:
            w = w[(slice(None),) * n + (0,)]
    sol = best_rank1_binary(w, init=[np.array([1.0, 0.0]) for _ in live])
    etas = {n: eta for n, eta in zip(live, sol.factors)}
    factors = []
    for n, v in enumerate(basis.columns):
        if n in etas:
            u = v @ etas[n]
            factors.append(u / np.linalg.norm(u))
        else:
            factors.append(v[:, 0].copy())
    if basis.stationary and sol.sigma <= abs(basis.xi) * (1.0 + STATIONARY_RTOL):
        return current
    return Rank1Model(factors, sol.sigma)
