"""Best rank-1 approximation of tensors whose extents are all 2.

For a 2x2x2 tensor the problem reduces to maximizing the largest singular
value of the 2x2 matrix ``W x̄_3 [cos a, sin a]`` over the angle ``a``. After a
rotation that makes the two frontal slices orthogonal, the stationary angles
are ``arctan`` of the real roots of a degree-6 polynomial.

For 2x2x2x2 tensors two routes are provided: ALS3, which alternates the
2x2x2 closed form over triples of modes, and an alternation of univariate
degree-6 root solves through the bivariate coefficient matrices C1/C2.

Vectorizations are column-major, so ``w_1..w_8`` of a 2x2x2 tensor are
``W[0,0,0], W[1,0,0], W[0,1,0], W[1,1,0], W[0,0,1], ...``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polyroots import real_roots
from .tensor import contract_all_but, unfold, vec

# Maps [cos 2a, sin 2a, 1] to 2 (eta ⊗ eta) via Q.T, eta = [cos a, sin a].
Q = np.array(
    [
        [1.0, 0.0, 0.0, -1.0],
        [0.0, 1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0, 1.0],
    ]
)

# vec(M).T @ R @ vec(M) == 2 det(M) for a 2x2 matrix M.
R = np.array(
    [
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
    ]
)

# d/da [cos 2a, sin 2a, 1] == 2 F [cos 2a, sin 2a, 1]
F = np.array(
    [
        [0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
    ]
)

# K.T @ [x^6, ..., x, 1] == (1 + x^2)^3 (v ⊗ v ⊗ v), v = [cos 2a, sin 2a, 1], x = tan a.
K = np.array(
    [
        [-1, 0, 1, 0, 0, 0, 1, 0, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, -1, 0, 0, 0, -1, 0, 1],
        [0, 2, 0, 2, 0, -2, 0, -2, 0, 2, 0, -2, 0, 0, 0, -2, 0, 2, 0, -2, 0, -2, 0, 2, 0, 2, 0],
        [3, 0, -1, 0, -4, 0, -1, 0, -1, 0, -4, 0, -4, 0, 4, 0, 4, 0, -1, 0, -1, 0, 4, 0, -1, 0, 3],
        [0, -4, 0, -4, 0, 0, 0, 0, 0, -4, 0, 0, 0, 8, 0, 0, 0, 4, 0, 0, 0, 0, 0, 4, 0, 4, 0],
        [-3, 0, -1, 0, 4, 0, -1, 0, 1, 0, 4, 0, 4, 0, 4, 0, 4, 0, -1, 0, 1, 0, 4, 0, 1, 0, 3],
        [0, 2, 0, 2, 0, 2, 0, 2, 0, 2, 0, 2, 0, 0, 0, 2, 0, 2, 0, 2, 0, 2, 0, 2, 0, 2, 0],
        [1, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 1],
    ],
    dtype=np.float64,
)

# Commutation matrix taking vec(T) to vec(T permuted by modes [1 3 2 4]) for a
# 2x2x2x2 tensor: row k of P_1324 selects entry _P1324_SOURCE[k] of vec(T).
_P1324_SOURCE = (0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15)
P_1324 = np.eye(16)[list(_P1324_SOURCE)]

_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def _trig(alpha: float) -> np.ndarray:
    return np.array([np.cos(2 * alpha), np.sin(2 * alpha), 1.0])


def _unit_angle(alpha: float) -> np.ndarray:
    return np.array([np.cos(alpha), np.sin(alpha)])


def sigma_max_2x2(m) -> float:
    """Largest singular value of a 2x2 matrix from its Frobenius norm and determinant."""
    m = np.asarray(m, dtype=np.float64)
    a = m[0, 0] ** 2 + m[0, 1] ** 2 + m[1, 0] ** 2 + m[1, 1] ** 2
    b = 2.0 * (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    disc = a * a - b * b
    if disc < 0.0:
        if disc < -1e-12 * max(1.0, a * a):
            raise ArithmeticError(f"negative discriminant {disc} for a 2x2 matrix")
        disc = 0.0
    return float(np.sqrt((a + np.sqrt(disc)) / 2.0))


def svd_2x2(m) -> tuple[float, np.ndarray, np.ndarray]:
    """Leading singular triple ``(sigma, u, v)`` of a 2x2 matrix, ``u @ m @ v == sigma >= 0``."""
    m = np.asarray(m, dtype=np.float64)
    s = m @ m.T
    theta = 0.5 * np.arctan2(2.0 * s[0, 1], s[0, 0] - s[1, 1])
    u = np.array([np.cos(theta), np.sin(theta)])
    mv = m.T @ u
    sigma = float(np.linalg.norm(mv))
    if sigma == 0.0:
        return 0.0, np.array([1.0, 0.0]), np.array([1.0, 0.0])
    return sigma, u, mv / sigma


def _check_binary(w, order: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if any(s != 2 for s in w.shape) or (order is not None and w.ndim != order):
        want = "x".join(["2"] * order) if order else "2x...x2"
        raise ValueError(f"expected a {want} tensor, got shape {w.shape}")
    return w


def orthogonalize_slices(w) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a 2x2x2 tensor along mode 3 so its two frontal slices are orthogonal.

    Returns ``(w_rot, Z)`` with ``w_rot = w x̄_3 Z``; a direction ``eta`` for
    ``w_rot`` corresponds to ``Z @ eta`` for ``w``. ``Z`` is a Jacobi rotation,
    so it is the identity when the slices are already orthogonal.
    """
    w = _check_binary(w, 3)
    g = unfold(w, 2) @ unfold(w, 2).T
    diff = g[0, 0] - g[1, 1]
    if diff == 0.0:
        theta = np.pi / 4 * np.sign(g[0, 1])
    else:
        theta = 0.5 * np.arctan(2.0 * g[0, 1] / diff)
    c, s = np.cos(theta), np.sin(theta)
    z = np.array([[c, -s], [s, c]])
    return np.tensordot(w, z, axes=([2], [0])), z


@dataclass(frozen=True)
class ABCoeffs:
    """``a(t) = a1 cos 2t + a2 sin 2t + a3`` and ``b(t) = b1 cos 2t + b2 sin 2t + b3``.

    ``a(t)`` is the squared Frobenius norm of ``W x̄_3 [cos t, sin t]`` and
    ``b(t)`` is minus twice its determinant.
    """

    a1: float
    a2: float
    a3: float
    b1: float
    b2: float
    b3: float

    def a(self, alpha):
        return self.a1 * np.cos(2 * alpha) + self.a2 * np.sin(2 * alpha) + self.a3

    def b(self, alpha):
        return self.b1 * np.cos(2 * alpha) + self.b2 * np.sin(2 * alpha) + self.b3

    def f(self, alpha):
        """``2 sigma_max^2`` of the projected matrix."""
        a, b = self.a(alpha), self.b(alpha)
        return a + np.sqrt(np.maximum(a * a - b * b, 0.0))


def ab_coeffs(w) -> ABCoeffs:
    w = _check_binary(w, 3)
    w1, w2, w3, w4, w5, w6, w7, w8 = vec(w)
    n1 = w1 * w1 + w2 * w2 + w3 * w3 + w4 * w4
    n2 = w5 * w5 + w6 * w6 + w7 * w7 + w8 * w8
    return ABCoeffs(
        a1=0.5 * (n1 - n2),
        a2=w1 * w5 + w2 * w6 + w3 * w7 + w4 * w8,
        a3=0.5 * (n1 + n2),
        b1=-w1 * w4 + w2 * w3 + w5 * w8 - w6 * w7,
        b2=-w1 * w8 + w2 * w7 + w3 * w6 - w4 * w5,
        b3=-w1 * w4 + w2 * w3 - w5 * w8 + w6 * w7,
    )


@dataclass(frozen=True)
class Degree6Poly:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float

    def descending(self) -> np.ndarray:
        return np.array([self.c6, self.c5, self.c4, self.c3, self.c2, self.c1, self.c0])

    def __call__(self, x):
        return np.polyval(self.descending(), x)


def degree6_coeffs(ab: ABCoeffs) -> Degree6Poly:
    """Polynomial whose real roots ``x`` give the stationary angles ``arctan x``.

    Requires orthogonal frontal slices (``a2 == 0``); see :func:`orthogonalize_slices`.
    """
    if abs(ab.a2) > 1e-10 * max(1.0, ab.a3):
        raise ValueError(f"a2 = {ab.a2:g} is not negligible; orthogonalize the frontal slices first")
    a1, a3, b1, b2, b3 = ab.a1, ab.a3, ab.b1, ab.b2, ab.b3
    return Degree6Poly(
        c6=b2**2 * (b3 - b1),
        c5=2 * b2 * (2 * a1**2 - 2 * a3 * a1 - 2 * b1**2 + 2 * b3 * b1 + b2**2),
        c4=4 * a1**2 * (b1 + b3) - 8 * a1 * a3 * b1 - 4 * b1**2 * (b1 - b3) + 11 * b1 * b2**2 - b3 * b2**2,
        c3=16 * b1**2 * b2 - 4 * b2**3,
        c2=-4 * a1**2 * (b1 - b3) - 8 * a1 * a3 * b1 + 4 * b1**2 * (b1 + b3) - 11 * b1 * b2**2 - b3 * b2**2,
        c1=2 * b2 * (2 * a1**2 + 2 * a1 * a3 - 2 * b1**2 - 2 * b1 * b3 + b2**2),
        c0=b2**2 * (b3 + b1),
    )


@dataclass
class QuantizedSolution:
    """Best rank-1 term ``sigma * u_1 o ... o u_N`` of a 2x...x2 tensor."""

    sigma: float
    factors: list[np.ndarray]
    root: float | None = None
    poly: Degree6Poly | None = None
    sweeps: int = 0
    history: list[float] = field(default_factory=list)


def _best_angle(w_rot: np.ndarray) -> tuple[float, float, Degree6Poly]:
    """Maximize ``f`` for a tensor with orthogonal slices; returns ``(alpha, x, poly)``."""
    ab = ab_coeffs(w_rot)
    poly = degree6_coeffs(ab)
    roots = real_roots(poly.descending())
    cands = [(float(np.arctan(x)), float(x)) for x in roots]
    # arctan never reaches the direction [0, 1]; x = 0 covers the opposite boundary
    cands.append((np.pi / 2, np.inf))
    cands.append((0.0, 0.0))
    best = max(cands, key=lambda c: (ab.f(c[0]), -abs(c[1])))
    return best[0], best[1], poly


def best_rank1_222(w) -> QuantizedSolution:
    """Closed-form best rank-1 approximation of a 2x2x2 tensor."""
    w = _check_binary(w, 3)
    if not np.any(w):
        e1 = np.array([1.0, 0.0])
        return QuantizedSolution(0.0, [e1.copy(), e1.copy(), e1.copy()])
    w_rot, z = orthogonalize_slices(w)
    alpha, x, poly = _best_angle(w_rot)
    if not abs(x) <= 1.0:
        # swapping the slices keeps them orthogonal and maps the optimum into |x| <= 1
        w_rot = np.tensordot(w_rot, _SWAP, axes=([2], [0]))
        z = z @ _SWAP
        alpha, x, poly = _best_angle(w_rot)
    eta3 = z @ _unit_angle(alpha)
    m = np.tensordot(w, eta3, axes=([2], [0]))
    sigma, u1, u2 = svd_2x2(m)
    return QuantizedSolution(sigma, [u1, u2, eta3], root=x, poly=poly)


def ab_matrices_2222(w) -> tuple[np.ndarray, np.ndarray]:
    """3x3 matrices with ``a(al, be) = t(al) @ A @ t(be)`` and ``b(al, be) = t(al) @ B @ t(be)``.

    ``t(x) = [cos 2x, sin 2x, 1]``; ``a`` is the squared norm and ``b`` twice
    the determinant of ``W x̄_3 [cos al, sin al] x̄_4 [cos be, sin be]``.
    """
    w = _check_binary(w, 4)
    w12 = w.reshape(4, 4, order="F")
    qq = np.kron(Q, Q)

    def reduce(g):
        h = 0.25 * qq @ P_1324.T @ vec(g)
        return h.reshape(3, 3, order="F")

    return reduce(w12.T @ w12), reduce(w12.T @ R @ w12)


def bivariate_coeff_matrices(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """7x7 matrices C1, C2 of the stationarity equations in ``x = tan al``, ``z = tan be``.

    ``[x^6..1] @ C1 @ [z^6..1]`` is ``(1+x^2)^3 (1+z^2)^3`` times
    ``b (a_al^2 + b_al^2) - 2 a a_al b_al`` with ``a_al = t(al) @ F.T @ A @ t(be)``
    (half the true derivative); C2 is the same in ``be``.
    """
    fta, ftb = F.T @ a, F.T @ b
    af, bf = a @ F, b @ F
    c1 = K @ (np.kron(b, np.kron(fta, fta) + np.kron(ftb, ftb)) - 2 * np.kron(np.kron(a, fta), ftb)) @ K.T
    c2 = K @ (np.kron(b, np.kron(af, af) + np.kron(bf, bf)) - 2 * np.kron(np.kron(a, af), bf)) @ K.T
    return c1, c2


def _powers(angle: float) -> np.ndarray:
    """``cos^6(angle) * [x^6, ..., x, 1]`` for ``x = tan(angle)``; finite at pi/2."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([s**k * c ** (6 - k) for k in range(6, -1, -1)])


def _leading_vectors(w: np.ndarray) -> list[np.ndarray]:
    out = []
    for n in range(w.ndim):
        u = np.linalg.svd(unfold(w, n), full_matrices=False)[0][:, 0]
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        out.append(u)
    return out


def _project(w: np.ndarray, factors: Sequence[np.ndarray], fixed: Sequence[int]) -> np.ndarray:
    out = w
    for n in sorted(fixed, reverse=True):
        out = np.tensordot(out, factors[n], axes=([n], [0]))
    return out


def _full_value(w: np.ndarray, factors: Sequence[np.ndarray]) -> float:
    return float(contract_all_but(w, factors, 0) @ factors[0])


def _triples(order: int) -> list[tuple[int, ...]]:
    if order == 4:
        return [tuple(k for k in range(4) if k != n) for n in range(4)]
    return [tuple(sorted((n + j) % order for j in range(3))) for n in range(order)]


def _als3(w: np.ndarray, init, max_sweeps: int, tol: float) -> QuantizedSolution:
    factors = [np.asarray(u, dtype=np.float64).copy() for u in (init or _leading_vectors(w))]
    factors = [u / np.linalg.norm(u) for u in factors]
    sigma = abs(_full_value(w, factors))
    history = [sigma]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        prev = sigma
        for free in _triples(w.ndim):
            fixed = [k for k in range(w.ndim) if k not in free]
            sub = best_rank1_222(_project(w, factors, fixed))
            if sub.sigma >= sigma:
                for k, u in zip(free, sub.factors):
                    factors[k] = u
                sigma = sub.sigma
        history.append(sigma)
        if abs(sigma - prev) < tol:
            break
    sigma = _full_value(w, factors)
    if sigma < 0:
        factors[0] = -factors[0]
        sigma = -sigma
    return QuantizedSolution(sigma, factors, sweeps=sweeps, history=history)


def _bivariate(w: np.ndarray, init, max_sweeps: int, tol: float) -> QuantizedSolution:
    a_mat, b_mat = ab_matrices_2222(w)
    c1, c2 = bivariate_coeff_matrices(a_mat, b_mat)
    start = init or _leading_vectors(w)
    alpha = float(np.arctan2(start[2][1], start[2][0]))
    beta = float(np.arctan2(start[3][1], start[3][0]))

    def f(al, be):
        a = _trig(al) @ a_mat @ _trig(be)
        b = _trig(al) @ b_mat @ _trig(be)
        return a + np.sqrt(max(a * a - b * b, 0.0))

    def pick(poly, current, score):
        cands = [current, 0.0, np.pi / 2] + [float(np.arctan(r)) for r in real_roots(poly)]
        return max(cands, key=score)

    value = f(alpha, beta)
    history = [float(np.sqrt(value / 2))]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        prev = value
        alpha = pick(c1 @ _powers(beta), alpha, lambda al: f(al, beta))
        beta = pick(_powers(alpha) @ c2, beta, lambda be: f(alpha, be))
        value = f(alpha, beta)
        history.append(float(np.sqrt(value / 2)))
        if abs(np.sqrt(value / 2) - np.sqrt(prev / 2)) < tol:
            break
    eta3, eta4 = _unit_angle(alpha), _unit_angle(beta)
    m = np.tensordot(np.tensordot(w, eta4, axes=([3], [0])), eta3, axes=([2], [0]))
    sigma, u1, u2 = svd_2x2(m)
    return QuantizedSolution(sigma, [u1, u2, eta3, eta4], sweeps=sweeps, history=history)


SEED_GRID = 16


def grid_starts(w: np.ndarray, size: int = SEED_GRID) -> list[list[np.ndarray]]:
    """Starting factors at the local maxima of ``f(al, be)`` on a periodic ``size x size`` grid.

    Starts are ordered by decreasing ``f``. The first two factors come from the
    closed-form SVD of the projected 2x2 matrix.
    """
    a_mat, b_mat = ab_matrices_2222(w)
    angles = np.arange(size) * (np.pi / size)
    t = np.stack([np.cos(2 * angles), np.sin(2 * angles), np.ones(size)], axis=1)
    a = t @ a_mat @ t.T
    b = t @ b_mat @ t.T
    f = a + np.sqrt(np.maximum(a * a - b * b, 0.0))
    peak = np.ones_like(f, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                peak &= f >= np.roll(np.roll(f, di, axis=0), dj, axis=1)
    order = sorted(zip(*np.nonzero(peak)), key=lambda ij: -f[ij])
    starts = []
    for i, j in order:
        eta3, eta4 = _unit_angle(angles[i]), _unit_angle(angles[j])
        m = np.tensordot(np.tensordot(w, eta4, axes=([3], [0])), eta3, axes=([2], [0]))
        _, u1, u2 = svd_2x2(m)
        starts.append([u1, u2, eta3, eta4])
    return starts


def best_rank1_2222(
    w, method: str = "als3", init=None, max_sweeps: int = 100, tol: float = 1e-12, multistart: bool = True
) -> QuantizedSolution:
    """Best rank-1 approximation of a 2x2x2x2 tensor by ``als3`` or ``bivariate`` alternation.

    Both alternations only find local maxima of the ``(al, be)`` surface. With
    ``multistart`` the method is run from ``init`` (if given), from the leading
    singular vectors and from every local maximum of a coarse angle grid, and
    the largest ``sigma`` is kept (earliest start on ties).
    """
    w = _check_binary(w, 4)
    if method == "als3":
        run = _als3
    elif method == "bivariate":
        run = _bivariate
    else:
        raise ValueError(f"unknown method {method!r}")
    if not multistart or not np.any(w):
        return run(w, init, max_sweeps, tol)
    starts = ([] if init is None else [list(init)]) + [_leading_vectors(w)] + grid_starts(w)
    best = None
    for s in starts:
        sol = run(w, s, max_sweeps, tol)
        if best is None or sol.sigma > best.sigma:
            best = sol
    return best


def best_rank1_binary(w, init=None, max_sweeps: int = 100, tol: float = 1e-12) -> QuantizedSolution:
    """Best rank-1 term of a 2x...x2 tensor of any order.

    Order 3 is solved in closed form, order 4 by ALS3, and higher orders by
    alternating the closed form over cyclic windows of three modes.
    """
    w = _check_binary(w)
    if w.ndim == 1:
        nrm = float(np.linalg.norm(w))
        return QuantizedSolution(nrm, [w / nrm if nrm else np.array([1.0, 0.0])])
    if w.ndim == 2:
        sigma, u, v = svd_2x2(w)
        return QuantizedSolution(sigma, [u, v])
    if w.ndim == 3:
        return best_rank1_222(w)
    if w.ndim == 4:
        return best_rank1_2222(w, "als3", init, max_sweeps, tol)
    return _als3(w, init, max_sweeps, tol)
