"""Rank-R CP decomposition by parallel rank-one updates (PARO), plus baselines.

PARO is ADMM on ``min |y - X 1_R|^2`` with ``X`` constrained to Khatri-Rao
structure. Eliminating the splitting variable and the dual leaves one shared
residue tensor ``e`` updated by a second-order difference of the component
means,

    e(k) = mu * (ybar - 2 xbar(k) + xbar(k-1) + e(k-1)),   e(0) = ybar - xbar(0),

with ``ybar = y / R``, ``xbar`` the mean of the rank-1 components and
``mu = gamma R / (1 + gamma R)``. Every component is then refit, independently
of the others, as the best rank-1 approximation of ``e(k) + x_r(k)``.

The sum ``e + x_r`` is never formed: :class:`ImplicitResidue` answers the
contractions the rank-1 solvers need from ``e`` and the factors of ``x_r``.
Besides the data, a run holds exactly five dense tensors (``ybar``, both
means, ``e`` and one scratch tensor), allocated through :func:`_alloc` so
tests can count them.

:func:`admm_reference` runs the same iteration on the explicit ``(Z, X, T)``
matrices and is only meant for validating PARO on small problems.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rank1
from .generators import random_init, stream
from .tensor import (
    DegenerateModelError,
    KruskalModel,
    contract_all_but,
    frobenius_norm,
    inner,
    khatri_rao,
    multi_mode_product,
    outer,
    reconstruct_kruskal,
    unfold,
)

GAMMA_R_MIN = 1e-3
GAMMA_R_MAX = 1e3
ADMM_SIZE_CAP = 100_000
RIDGE = 1e-12

# Called with the shape of every dense work tensor a PARO run allocates.
ALLOCATION_HOOK: Callable[[tuple[int, ...]], None] | None = None


def _alloc(shape: tuple[int, ...]) -> np.ndarray:
    if ALLOCATION_HOOK is not None:
        ALLOCATION_HOOK(shape)
    return np.zeros(shape)


def mu_of(gamma_r: float) -> float:
    return gamma_r / (1.0 + gamma_r)


@dataclass(frozen=True)
class MuSchedule:
    """How ``gamma R`` evolves during a run.

    ``fixed`` keeps ``gamma_r``. ``regular`` multiplies it by ``factor``
    every ``period`` iterations. ``adaptive`` does the same when the error did
    not increase at any step of the last ``period`` iterations and divides by
    ``factor`` otherwise. ``gamma R`` is kept inside ``[1e-3, 1e3]``.
    """

    kind: str = "adaptive"
    gamma_r: float = 5.0
    period: int = 20
    factor: float = math.sqrt(2.0)

    def __post_init__(self):
        if self.kind not in ("fixed", "regular", "adaptive"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.gamma_r > 0:
            raise ValueError("gamma R must be positive")
        if self.kind != "fixed" and (self.period < 1 or not self.factor > 1):
            raise ValueError("a schedule needs period >= 1 and factor > 1")

    @classmethod
    def fixed(cls, gamma_r: float = 1.0) -> "MuSchedule":
        return cls("fixed", gamma_r)

    @classmethod
    def regular(cls, period: int = 10, factor: float = math.sqrt(2.0), gamma_r: float = 1.0) -> "MuSchedule":
        return cls("regular", gamma_r, period, factor)

    @classmethod
    def adaptive(cls, period: int = 20, factor: float = math.sqrt(2.0), gamma_r: float = 5.0) -> "MuSchedule":
        return cls("adaptive", gamma_r, period, factor)

    @classmethod
    def parse(cls, text: str) -> "MuSchedule":
        """``fixed:G``, ``regular:K:ETA[:G0]`` or ``adaptive:K:ETA[:G0]``."""
        kind, *args = text.strip().split(":")
        try:
            if kind == "fixed" and len(args) == 1:
                return cls.fixed(float(args[0]))
            if kind in ("regular", "adaptive") and len(args) in (2, 3):
                period, factor = int(args[0]), float(args[1])
                g0 = float(args[2]) if len(args) == 3 else (1.0 if kind == "regular" else 5.0)
                return cls(kind, g0, period, factor)
        except ValueError as exc:
            raise ValueError(f"bad schedule {text!r}: {exc}") from None
        raise ValueError(f"bad schedule {text!r}; expected fixed:G, regular:K:ETA or adaptive:K:ETA:G0")


@dataclass
class ParoState:
    """Mutable state of a PARO run; ``gamma_r`` is ``gamma * R``."""

    ybar: np.ndarray
    xbar_curr: np.ndarray
    xbar_prev: np.ndarray
    e: np.ndarray
    temp: np.ndarray
    components: list[list[np.ndarray]]
    gamma_r: float
    iter: int = 0

    @property
    def rank(self) -> int:
        return len(self.components)

    @property
    def mu(self) -> float:
        return mu_of(self.gamma_r)

    @property
    def gamma(self) -> float:
        return self.gamma_r / self.rank

    def model(self) -> KruskalModel:
        n_modes = len(self.components[0])
        return KruskalModel([np.column_stack([c[n] for c in self.components]) for n in range(n_modes)])


def apply_schedule(state: ParoState, sched: MuSchedule, err_history: Sequence[float]) -> ParoState:
    """Update ``gamma R`` after iteration ``state.iter`` (``err_history[i]`` is the error after iteration ``i``)."""
    k = state.iter
    if sched.kind == "fixed" or k == 0 or k % sched.period:
        return state
    if sched.kind == "regular":
        g = state.gamma_r * sched.factor
    else:
        window = np.asarray(err_history[-(sched.period + 1) :])
        g = state.gamma_r * sched.factor if np.all(np.diff(window) <= 0.0) else state.gamma_r / sched.factor
    state.gamma_r = min(max(g, GAMMA_R_MIN), GAMMA_R_MAX)
    return state


class ImplicitResidue:
    """The tensor ``e + u_1 o ... o u_N`` without forming the sum."""

    def __init__(self, e: np.ndarray, factors: Sequence[np.ndarray]):
        if len(factors) != e.ndim or any(len(u) != s for u, s in zip(factors, e.shape)):
            raise ValueError("rank-1 part does not match the dense part")
        self.e = e
        self.factors = list(factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.e.shape

    @property
    def ndim(self) -> int:
        return self.e.ndim

    def contract_all_but(self, vectors: Sequence[np.ndarray], skip: int) -> np.ndarray:
        coef = 1.0
        for k, (v, u) in enumerate(zip(vectors, self.factors)):
            if k != skip:
                coef *= float(v @ u)
        return contract_all_but(self.e, vectors, skip) + coef * self.factors[skip]

    def multi_mode_product(self, mats: Sequence[np.ndarray]) -> np.ndarray:
        return multi_mode_product(self.e, mats) + outer([m.T @ u for m, u in zip(mats, self.factors)])

    def norm_sq(self) -> float:
        cross = float(contract_all_but(self.e, self.factors, 0) @ self.factors[0])
        own = float(np.prod([u @ u for u in self.factors]))
        return float(np.dot(self.e.ravel(), self.e.ravel())) + 2.0 * cross + own

    def materialize(self) -> np.ndarray:
        return self.e + outer(self.factors)


def implicit_contract_all_but(res: ImplicitResidue, vectors, skip: int) -> np.ndarray:
    return res.contract_all_but(vectors, skip)


def implicit_multi_mode_product(res: ImplicitResidue, mats) -> np.ndarray:
    return res.multi_mode_product(mats)


def refit_component(target, factors: Sequence[np.ndarray], algo: str, steps: int) -> list[np.ndarray]:
    """``steps`` iterations of a rank-1 solver warm-started at ``factors``; returns absorbed factors."""
    m = rank1.Rank1Model(list(factors))
    if algo != "als":
        m = rank1.prepare(target, m, algo)
    for _ in range(steps):
        m = rank1.step(target, m, algo)
    return rank1.absorb_weight(m).factors


def _einsum_spec(n_modes: int) -> str:
    letters = "abcdefghijklmnopq"[:n_modes]
    return ",".join(f"{c}z" for c in letters) + "->" + letters


def _mean_of_components(components, out: np.ndarray) -> np.ndarray:
    """``out = (1/R) sum_r x_r`` summed in component order, written in place."""
    n_modes = len(components[0])
    mats = [np.column_stack([c[n] for c in components]) for n in range(n_modes)]
    np.einsum(_einsum_spec(n_modes), *mats, out=out, optimize=False)
    out /= len(components)
    return out


@dataclass
class TraceRow:
    iter: int
    relative_error: float
    mu: float | None = None
    gamma_r: float | None = None
    elapsed_ms: float = 0.0


@dataclass
class CPDResult:
    model: KruskalModel
    trace: list[TraceRow]
    converged: bool
    reason: str
    events: list[str] = field(default_factory=list)

    @property
    def error(self) -> float:
        return self.trace[-1].relative_error

    @property
    def iterations(self) -> int:
        return self.trace[-1].iter


def _initial_model(t: np.ndarray, rank: int, init) -> KruskalModel:
    if isinstance(init, KruskalModel):
        if init.shape != t.shape or init.rank != rank:
            raise ValueError(f"initial model has shape {init.shape} and rank {init.rank}")
        return init.copy()
    return random_init(t.shape, rank, int(init))


def _reinit_component(shape, seed: int, r: int, it: int) -> list[np.ndarray]:
    rng = stream(seed, r, it)
    return [rng.standard_normal(s) for s in shape]


def paro_decompose(
    t: np.ndarray,
    rank: int,
    sched: MuSchedule | None = None,
    inner: str = "als",
    init=0,
    tol: float = 1e-10,
    max_iters: int = 1000,
    stall_tol: float = 1e-12,
    inner_steps: int = 1,
    seed: int = 0,
    workers: int = 1,
    callback: Callable[[ParoState], None] | None = None,
) -> CPDResult:
    """Decompose ``t`` into ``rank`` rank-1 terms by parallel rank-one updates.

    ``init`` is a :class:`KruskalModel` or an integer seed for random factors.
    A run stops when the relative error reaches ``tol``, when it changes by
    less than ``stall_tol`` between iterations, or after ``max_iters``. A
    component whose rank-1 refit degenerates is redrawn from
    ``stream(seed, r, iteration)`` and the event is logged. ``callback`` sees
    the state after every iteration, including iteration 0; after iteration
    ``k`` it holds ``xbar(k)``, ``xbar(k-1)`` and ``e(k)``.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    sched = sched or MuSchedule()
    model = _initial_model(t, rank, init)
    y_norm = frobenius_norm(t)
    if y_norm == 0.0:
        raise ValueError("cannot decompose a zero tensor")
    shape = t.shape

    state = ParoState(
        ybar=_alloc(shape),
        xbar_curr=_alloc(shape),
        xbar_prev=_alloc(shape),
        e=_alloc(shape),
        temp=_alloc(shape),
        components=[model.component(r) for r in range(rank)],
        gamma_r=sched.gamma_r,
    )
    np.divide(t, rank, out=state.ybar)
    _mean_of_components(state.components, state.xbar_curr)
    np.subtract(state.ybar, state.xbar_curr, out=state.e)

    def rel_error() -> float:
        np.subtract(state.ybar, state.xbar_curr, out=state.temp)
        return rank * frobenius_norm(state.temp) / y_norm

    start = time.perf_counter()
    errors = [rel_error()]
    trace = [TraceRow(0, errors[0], state.mu, state.gamma_r, 0.0)]
    events: list[str] = []
    if callback:
        callback(state)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def refit(r: int):
        target = ImplicitResidue(state.e, state.components[r])
        try:
            return refit_component(target, state.components[r], inner, inner_steps)
        except DegenerateModelError:
            return None

    reason = "max_iters"
    try:
        for k in range(1, max_iters + 1):
            results = list(pool.map(refit, range(rank))) if pool else [refit(r) for r in range(rank)]
            for r, new in enumerate(results):
                if new is None:
                    new = _reinit_component(shape, seed, r, k)
                    events.append(f"iter {k}: component {r} degenerated and was re-initialized")
                state.components[r] = new
            state.xbar_prev, state.xbar_curr, state.temp = state.xbar_curr, state.temp, state.xbar_prev
            _mean_of_components(state.components, state.xbar_curr)
            state.iter = k
            errors.append(rel_error())
            apply_schedule(state, sched, errors)
            trace.append(TraceRow(k, errors[-1], state.mu, state.gamma_r, 1e3 * (time.perf_counter() - start)))
            # e = mu * (ybar - 2 xbar + xbar_prev + e)
            np.multiply(state.xbar_curr, 2.0, out=state.temp)
            state.e += state.ybar
            state.e += state.xbar_prev
            state.e -= state.temp
            state.e *= state.mu
            if callback:
                callback(state)
            if errors[-1] <= tol:
                reason = "tol"
                break
            if abs(errors[-1] - errors[-2]) < stall_tol:
                reason = "stall"
                break
    finally:
        if pool:
            pool.shutdown()
    return CPDResult(state.model(), trace, reason != "max_iters", reason, events)


@dataclass
class AdmmRecord:
    """One iterate of the explicit ADMM; ``e`` and ``tbar`` are derived from ``X`` and ``T``."""

    z: np.ndarray
    x: np.ndarray
    t: np.ndarray
    model: KruskalModel
    xbar: np.ndarray
    tbar: np.ndarray
    e: np.ndarray


def admm_reference(
    t: np.ndarray,
    rank: int,
    gamma: float,
    init: KruskalModel,
    iters: int,
    inner: str = "als",
    inner_steps: int = 1,
    t0: np.ndarray | None = None,
) -> list[AdmmRecord]:
    """Explicit ADMM on the ``prod(I) x R`` matrices ``Z``, ``X`` and ``T``.

    ``Z`` solves its quadratic subproblem in closed form, each column of ``X``
    is refit as a rank-1 tensor to the matching column of ``Z - T`` (warm
    start, same solver and step count as :func:`paro_decompose`), and
    ``T <- T + X - Z``. ``t0`` is the starting dual; zero by default. The
    returned list holds the start (index 0) and every iterate, with
    ``e(k) = mu (ybar - xbar(k) - tbar(k))``.
    """
    size = t.size * rank
    if size > ADMM_SIZE_CAP:
        raise ValueError(f"explicit ADMM needs {size} matrix entries; the cap is {ADMM_SIZE_CAP}")
    shape = t.shape
    y = t.reshape(-1, order="F")
    mu = mu_of(gamma * rank)
    c = gamma / (1.0 + gamma * rank)
    ones = np.ones(rank)
    proj = np.eye(rank) - c * np.outer(ones, ones)
    comps = [init.component(r) for r in range(rank)]
    x = khatri_rao([np.column_stack([cp[n] for cp in comps]) for n in range(len(shape))])
    dual = np.zeros_like(x) if t0 is None else np.array(t0, dtype=np.float64)

    def record(z):
        xbar = x.mean(axis=1)
        tbar = dual.mean(axis=1)
        e = mu * (y / rank - xbar - tbar)
        model = KruskalModel([np.column_stack([cp[n] for cp in comps]) for n in range(len(shape))])
        return AdmmRecord(z, x.copy(), dual.copy(), model, xbar, tbar, e)

    out = [record(None)]
    for _ in range(iters):
        z = c * np.outer(y, ones) + (x + dual) @ proj
        target = z - dual
        for r in range(rank):
            tr = target[:, r].reshape(shape, order="F")
            try:
                comps[r] = refit_component(tr, comps[r], inner, inner_steps)
            except DegenerateModelError as exc:
                raise DegenerateModelError(f"column {r}: {exc}") from None
        x = khatri_rao([np.column_stack([cp[n] for cp in comps]) for n in range(len(shape))])
        dual = dual + x - z
        out.append(record(z))
    return out


def admm_dual_start(t: np.ndarray, rank: int, gamma: float, init: KruskalModel) -> np.ndarray:
    """Dual start ``T0`` for which the explicit ADMM begins at ``e(0) = ybar - xbar(0)``."""
    mu = mu_of(gamma * rank)
    y = t.reshape(-1, order="F")
    xbar = reconstruct_kruskal(init).reshape(-1, order="F") / rank
    tbar = (1.0 - 1.0 / mu) * (y / rank - xbar)
    return np.outer(tbar, np.ones(rank))


def _normalize_columns(u: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(u, axis=0)
    norms[norms == 0.0] = 1.0
    return u / norms


def cpd_als(
    t: np.ndarray,
    rank: int,
    init=0,
    tol: float = 1e-10,
    max_iters: int = 1000,
    stall_tol: float = 1e-12,
) -> CPDResult:
    """Rank-R CP by alternating least squares over the factor matrices.

    Each factor solves its normal equations with the Hadamard product of the
    other Gram matrices; a ``1e-12`` ridge is added (and logged) when that
    system is singular to working precision. Every factor but the last one
    updated is column-normalized, so the scale lives in the last mode.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    model = _initial_model(t, rank, init)
    factors = [f.copy() for f in model.factors]
    n_modes = t.ndim
    unfoldings = [unfold(t, n) for n in range(n_modes)]
    y_norm = frobenius_norm(t)
    if y_norm == 0.0:
        raise ValueError("cannot decompose a zero tensor")
    y_vec = t.reshape(-1, order="F")

    def rel_error():
        return float(np.linalg.norm(y_vec - khatri_rao(factors).sum(axis=1))) / y_norm

    start = time.perf_counter()
    trace = [TraceRow(0, rel_error())]
    events: list[str] = []
    reason = "max_iters"
    for k in range(1, max_iters + 1):
        for n in range(n_modes):
            others = [factors[m] for m in range(n_modes) if m != n]
            gram = np.ones((rank, rank))
            for f in others:
                gram *= f.T @ f
            mttkrp = unfoldings[n] @ khatri_rao(others)
            if np.linalg.cond(gram) > 1.0 / np.finfo(float).eps:
                gram = gram + RIDGE * np.eye(rank)
                events.append(f"iter {k}: ridge added in mode {n}")
            factors[n] = np.linalg.solve(gram, mttkrp.T).T
            if n != n_modes - 1:
                factors[n] = _normalize_columns(factors[n])
        trace.append(TraceRow(k, rel_error(), elapsed_ms=1e3 * (time.perf_counter() - start)))
        if trace[-1].relative_error <= tol:
            reason = "tol"
            break
        if abs(trace[-1].relative_error - trace[-2].relative_error) < stall_tol:
            reason = "stall"
            break
    return CPDResult(KruskalModel(factors), trace, reason != "max_iters", reason, events)


def epc_init(t: np.ndarray, m: KruskalModel) -> KruskalModel:
    """Rescale the whole model by ``c = <Y, X> / |X|^2``, the best single scale factor.

    ``|c|^(1/N)`` multiplies every factor and the sign of ``c`` goes to mode 0.
    """
    x = reconstruct_kruskal(m)
    xx = inner(x, x)
    if xx == 0.0:
        raise DegenerateModelError("initial model reconstructs to zero")
    c = inner(t, x) / xx
    s = abs(c) ** (1.0 / m.ndim)
    factors = [f * s for f in m.factors]
    if c < 0:
        factors[0] = -factors[0]
    return KruskalModel(factors)
