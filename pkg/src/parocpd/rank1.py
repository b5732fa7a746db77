"""Best rank-1 tensor approximation: ALS/HOOI, SVD and TT-SVD starts, and R1LM.

R1LM is Levenberg-Marquardt for the rank-1 model after balancing the factor
norms and fixing the optimal overall scale. Under those two normalizations the
damped step collapses to ``u_n - eta * g_n`` for every mode at once, and the
squared error along that line is a polynomial of degree ``2N`` in ``eta``, so
the damping is chosen by minimizing that polynomial exactly over
``[0, 1 / alpha^(N-1)]``.

Solver steps accept either a dense ``ndarray`` or any object with
``contract_all_but``, ``multi_mode_product`` and ``norm_sq`` methods (see
:class:`parocpd.paro.ImplicitResidue`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polyroots import real_roots
from .tensor import (
    DegenerateModelError,
    contract_all_but,
    frobenius_norm,
    multi_mode_product,
    outer,
    permute,
    unfold,
)

MAX_PERMUTATION_ORDER = 6


def target_contract(target, vectors, skip) -> np.ndarray:
    if isinstance(target, np.ndarray):
        return contract_all_but(target, vectors, skip)
    return target.contract_all_but(vectors, skip)


def target_project(target, mats) -> np.ndarray:
    if isinstance(target, np.ndarray):
        return multi_mode_product(target, mats)
    return target.multi_mode_product(mats)


def target_norm_sq(target) -> float:
    if isinstance(target, np.ndarray):
        return float(np.dot(target.ravel(), target.ravel()))
    return target.norm_sq()


def sign_fix(u: np.ndarray) -> tuple[np.ndarray, float]:
    """Flip ``u`` so its largest-magnitude entry is positive; returns ``(u, sign)``."""
    if u[np.argmax(np.abs(u))] < 0:
        return -u, -1.0
    return u, 1.0


@dataclass
class Rank1Model:
    """``weight * u_1 o u_2 o ... o u_N``.

    ALS and RORO keep unit factors and carry the scale in ``weight``; R1LM
    keeps ``weight == 1`` with balanced factor norms.
    """

    factors: list[np.ndarray]
    weight: float = 1.0

    def __post_init__(self):
        self.factors = [np.array(u, dtype=np.float64).reshape(-1) for u in self.factors]

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([u @ u for u in self.factors])

    @property
    def gamma(self) -> float:
        return float(np.prod(self.gammas))

    @property
    def alpha(self) -> float:
        return self.gamma ** (1.0 / self.ndim)

    def xi(self, target) -> float:
        """``<target, u_1 o ... o u_N>``, the weight excluded."""
        return float(target_contract(target, self.factors, 0) @ self.factors[0])

    def tensor(self) -> np.ndarray:
        return self.weight * outer(self.factors)

    def copy(self) -> "Rank1Model":
        return Rank1Model([u.copy() for u in self.factors], self.weight)


def absorb_weight(m: Rank1Model) -> Rank1Model:
    """Spread ``weight`` over the factors (``|w|^(1/N)`` each, sign on mode 0)."""
    if m.weight == 1.0:
        return m.copy()
    s = abs(m.weight) ** (1.0 / m.ndim)
    factors = [u * s for u in m.factors]
    if m.weight < 0:
        factors[0] = -factors[0]
    return Rank1Model(factors)


def unit_form(m: Rank1Model) -> Rank1Model:
    """Same tensor with unit-norm factors and the scale in ``weight``."""
    norms = [float(np.linalg.norm(u)) for u in m.factors]
    if min(norms) == 0.0:
        raise DegenerateModelError("zero factor")
    return Rank1Model([u / n for u, n in zip(m.factors, norms)], m.weight * float(np.prod(norms)))


def relative_error(t: np.ndarray, m: Rank1Model) -> float:
    nrm = frobenius_norm(t)
    err = frobenius_norm(t - m.tensor())
    return err / nrm if nrm > 0 else err


def balance_normalize(m: Rank1Model) -> Rank1Model:
    """Rescale factors to equal squared norms ``alpha`` without changing the tensor."""
    m = absorb_weight(m)
    g = m.gammas
    if np.any(g == 0.0):
        raise DegenerateModelError("cannot balance a model with a zero factor")
    alpha = float(np.exp(np.mean(np.log(g))))
    return Rank1Model([u * math.sqrt(alpha / gn) for u, gn in zip(m.factors, g)])


def optimal_scale(t, m: Rank1Model) -> Rank1Model:
    """Multiply the model by ``lambda = xi / gamma`` so that afterwards ``xi == gamma``."""
    m = absorb_weight(m)
    gamma = m.gamma
    if gamma == 0.0:
        raise DegenerateModelError("gamma = 0")
    lam = m.xi(t) / gamma
    if lam == 0.0:
        raise DegenerateModelError("target is orthogonal to the model")
    s = abs(lam) ** (1.0 / m.ndim)
    factors = [u * s for u in m.factors]
    if lam < 0:
        factors[0] = -factors[0]
    return Rank1Model(factors)


def als_step(t, m: Rank1Model) -> Rank1Model:
    """One HOOI sweep: each factor in turn becomes the normalized projection ``t_n``."""
    factors = [u / np.linalg.norm(u) for u in m.factors]
    xi = 0.0
    for n in range(len(factors)):
        tn = target_contract(t, factors, n)
        nrm = float(np.linalg.norm(tn))
        if nrm == 0.0:
            raise DegenerateModelError(f"zero projection in mode {n}")
        factors[n] = tn / nrm
        xi = nrm
    return Rank1Model(factors, xi)


def svd_init(t: np.ndarray) -> Rank1Model:
    """Leading left singular vector of every unfolding, largest entry made positive."""
    factors = []
    for n in range(t.ndim):
        u = np.linalg.svd(unfold(t, n), full_matrices=False)[0][:, 0]
        factors.append(sign_fix(u)[0])
    m = Rank1Model(factors)
    m.weight = m.xi(t)
    return m


def ttsvd_init(t: np.ndarray, perm: Sequence[int] | None = None) -> Rank1Model:
    """Sequential projection and rank-1 truncation along the mode order ``perm``."""
    perm = tuple(range(t.ndim)) if perm is None else tuple(perm)
    tp = permute(t, perm)
    shape = tp.shape
    cur = tp.reshape(shape[0], -1, order="F")
    found = []
    for k in range(t.ndim - 1):
        u_mat, s, vt = np.linalg.svd(cur, full_matrices=False)
        u, sgn = sign_fix(u_mat[:, 0])
        found.append(u)
        cur = (sgn * s[0] * vt[0]).reshape(shape[k + 1], -1, order="F")
    last = cur[:, 0]
    nrm = float(np.linalg.norm(last))
    if nrm == 0.0:
        last, nrm = np.eye(shape[-1])[0], 1.0
    found.append(sign_fix(last / nrm)[0])
    factors = [None] * t.ndim
    for k, p in enumerate(perm):
        factors[p] = found[k]
    m = Rank1Model(factors)
    m.weight = m.xi(t)
    return m


def poly_q_coeffs(w: np.ndarray) -> np.ndarray:
    """``q_k`` = sum of the entries of a 2x...x2 tensor with exactly ``k`` indices equal to 1.

    ``sum_k q_k eta^k == <w, [1, eta] o ... o [1, eta]>``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0 or any(s != 2 for s in w.shape):
        raise ValueError(f"expected a 2x...x2 tensor, got shape {w.shape}")
    counts = np.indices(w.shape).sum(axis=0)
    return np.bincount(counts.ravel(), weights=w.ravel(), minlength=w.ndim + 1)


@dataclass
class StepPolynomial:
    """Squared error ``f(eta) = |Y - o_n (u_n - eta g_n)|^2`` as a polynomial in ``eta``.

    ``f(eta) = norm_sq + prod_n (gamma_n - 2 d_n eta + c_n eta^2) - 2 sum_k q_k eta^k``
    with ``gamma_n = u_n.u_n``, ``d_n = u_n.g_n`` and ``c_n = g_n.g_n``. After
    optimal scaling ``d_n`` vanishes.
    """

    norm_sq: float
    gammas: np.ndarray
    c: np.ndarray
    q: np.ndarray
    d: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.d is None:
            self.d = np.zeros_like(self.c)

    def coefficients(self) -> np.ndarray:
        """Ascending coefficients, degree ``2N``."""
        prod = np.array([1.0])
        for gn, dn, cn in zip(self.gammas, self.d, self.c):
            prod = np.convolve(prod, [gn, -2.0 * dn, cn])
        out = prod.copy()
        out[0] += self.norm_sq
        out[: len(self.q)] -= 2.0 * np.asarray(self.q)
        return out

    def __call__(self, eta):
        return np.polynomial.polynomial.polyval(eta, self.coefficients())

    def minimize(self, lo: float, hi: float) -> float:
        """Minimizer over ``[lo, hi]``: interior roots of ``f'`` and both endpoints, ties to the smaller ``eta``."""
        coef = self.coefficients()
        deriv = np.polynomial.polynomial.polyder(coef)
        cands = [lo, hi]
        cands += [r for r in real_roots(deriv[::-1]) if lo < r < hi]
        vals = np.polynomial.polynomial.polyval(np.array(cands), coef)
        return min(zip(vals, cands))[1]


def step_polynomial(target, factors: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> StepPolynomial:
    w = target_project(target, [np.column_stack([u, -g]) for u, g in zip(factors, grads)])
    return StepPolynomial(
        norm_sq=target_norm_sq(target),
        gammas=np.array([u @ u for u in factors]),
        c=np.array([g @ g for g in grads]),
        q=poly_q_coeffs(w),
        d=np.array([u @ g for u, g in zip(factors, grads)]),
    )


def gradients(target, factors: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gradient of ``1/2 |Y - u_1 o ... o u_N|^2``: ``g_n = gamma_{-n} u_n - t_n``."""
    g = [u @ u for u in factors]
    out = []
    for n, u in enumerate(factors):
        others = float(np.prod([g[k] for k in range(len(factors)) if k != n]))
        out.append(others * u - target_contract(target, factors, n))
    return out


def r1lm_step(t, m: Rank1Model) -> Rank1Model:
    """One R1LM update with the polynomial-optimal step; returns a balanced, optimally scaled model."""
    m = absorb_weight(m)
    factors = m.factors
    n_modes = len(factors)
    grads = gradients(t, factors)
    g_scale = max(1.0, max(float(np.linalg.norm(u)) for u in factors) ** n_modes)
    if all(np.linalg.norm(g) <= 1e-14 * g_scale for g in grads):
        return m
    alpha = m.alpha
    if alpha == 0.0:
        raise DegenerateModelError("zero factor")
    poly = step_polynomial(t, factors, grads)
    eta = poly.minimize(0.0, 1.0 / alpha ** (n_modes - 1))
    if eta == 0.0:
        return m
    moved = Rank1Model([u - eta * g for u, g in zip(factors, grads)])
    return balance_normalize(optimal_scale(t, moved))


def prepare(t, m: Rank1Model, algo: str) -> Rank1Model:
    """Put a model in the normal form the chosen algorithm expects."""
    if algo == "r1lm":
        return balance_normalize(optimal_scale(t, m))
    u = unit_form(m)
    u.weight = u.xi(t)
    return u


def step(t, m: Rank1Model, algo: str) -> Rank1Model:
    if algo == "als":
        return als_step(t, m)
    if algo == "r1lm":
        return r1lm_step(t, m)
    if algo == "roro":
        from .roro import roro_step

        return roro_step(t, m)
    raise ValueError(f"unknown rank-1 algorithm {algo!r}")


@dataclass
class Rank1Result:
    model: Rank1Model
    trace: list[float]
    converged: bool
    perm: tuple[int, ...] | None = None

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    @property
    def error(self) -> float:
        return self.trace[-1]


def _iterate(t, m: Rank1Model, algo: str, tol: float, max_iters: int) -> Rank1Result:
    m = prepare(t, m, algo)
    trace = [relative_error(t, m)]
    for _ in range(max_iters):
        m = step(t, m, algo)
        trace.append(relative_error(t, m))
        if abs(trace[-1] - trace[-2]) < tol:
            return Rank1Result(m, trace, True)
    return Rank1Result(m, trace, False)


def solve_rank1(
    t: np.ndarray,
    algo: str = "als",
    init: str = "svd",
    tol: float = 1e-12,
    max_iters: int = 1000,
    perm: Sequence[int] | None = None,
    model: Rank1Model | None = None,
) -> Rank1Result:
    """Iterate a rank-1 algorithm until the relative error changes by less than ``tol``.

    ``init`` is one of ``svd``, ``ttsvd`` (mode order ``perm``, identity by
    default), ``ttsvd-best`` (every mode order, lowest final error kept) or
    ``given`` (``model``). The trace holds the relative error of the start and
    of every iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if init == "svd":
        return _iterate(t, svd_init(t), algo, tol, max_iters)
    if init == "ttsvd":
        p = tuple(range(t.ndim)) if perm is None else tuple(perm)
        res = _iterate(t, ttsvd_init(t, p), algo, tol, max_iters)
        res.perm = p
        return res
    if init == "ttsvd-best":
        if t.ndim > MAX_PERMUTATION_ORDER:
            raise ValueError(f"ttsvd-best enumerates N! orders and is capped at order {MAX_PERMUTATION_ORDER}")
        best = None
        for p in itertools.permutations(range(t.ndim)):
            res = _iterate(t, ttsvd_init(t, p), algo, tol, max_iters)
            res.perm = p
            if best is None or res.error < best.error:
                best = res
        return best
    if init == "given":
        if model is None:
            raise ValueError("init='given' needs a model")
        return _iterate(t, model, algo, tol, max_iters)
    raise ValueError(f"unknown init {init!r}")
