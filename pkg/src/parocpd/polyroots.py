"""Real roots of real polynomials through companion-matrix eigenvalues."""

from __future__ import annotations

import numpy as np

IMAG_TOL = 1e-8


def _trim(coeffs: np.ndarray) -> np.ndarray:
    """Drop leading coefficients that are zero relative to the largest one."""
    c = np.asarray(coeffs, dtype=np.float64)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return c[:0]
    nz = np.nonzero(np.abs(c) > 1e-14 * scale)[0]
    return c[nz[0] :]


def companion(coeffs) -> np.ndarray:
    """Companion matrix of ``c[0] x^d + ... + c[d]`` (``c[0] != 0``)."""
    c = np.asarray(coeffs, dtype=np.float64)
    d = len(c) - 1
    m = np.zeros((d, d))
    m[0, :] = -c[1:] / c[0]
    if d > 1:
        m[np.arange(1, d), np.arange(d - 1)] = 1.0
    return m


def polish(coeffs, x: float, steps: int = 2) -> float:
    """A few Newton steps on the polynomial; keeps the last finite iterate."""
    c = np.asarray(coeffs, dtype=np.float64)
    dc = np.polyder(c) if len(c) > 1 else np.zeros(1)
    for _ in range(steps):
        d = np.polyval(dc, x)
        if d == 0.0:
            break
        nx = x - np.polyval(c, x) / d
        if not np.isfinite(nx) or abs(np.polyval(c, nx)) > abs(np.polyval(c, x)):
            break
        x = nx
    return float(x)


def real_roots(coeffs, imag_tol: float = IMAG_TOL, newton_steps: int = 2) -> np.ndarray:
    """Real roots of the polynomial with descending coefficients ``coeffs``.

    Eigenvalues of the companion matrix whose imaginary part is at most
    ``imag_tol * (1 + |real part|)`` are accepted as real and polished with
    ``newton_steps`` Newton iterations. A polynomial that is identically zero
    has no isolated roots and yields an empty array.
    """
    c = _trim(coeffs)
    if len(c) <= 1:
        return np.zeros(0)
    # roots at zero come from trailing zeros; strip them to keep the matrix well scaled
    nz = np.nonzero(c)[0]
    n_zero = len(c) - 1 - nz[-1]
    core = c[: nz[-1] + 1]
    roots = [0.0] * n_zero
    if len(core) > 1:
        eig = np.linalg.eigvals(companion(core))
        for z in eig:
            if abs(z.imag) <= imag_tol * (1.0 + abs(z.real)):
                roots.append(polish(core, float(z.real), newton_steps))
    return np.sort(np.array(roots, dtype=np.float64))
