"""Integro-differential equation for the boundary probability ``h``.

The unknown ``h(t) = P_x(X_t = 0)`` solves, for ``t > 0``,

.. math::

    \\frac{1 - \\alpha(t)}{\\rho(h_t)} h(t) + \\psi'(t)
        = g(x, t) + \\frac{1}{2\\sqrt{2\\pi}} \\int_0^t \\frac{h(t-s) - h(t)}{s^{3/2}} ds
          - \\frac{h(t)}{\\sqrt{2\\pi t}},

with the heat kernel ``g(x, t) = exp(-x^2/2t) / sqrt(2 pi t)`` and an optional
source ``psi'`` (zero by default). The singular integral is product-integrated
against a piecewise interpolant of ``h``. On the segment next to ``s = 0`` the
difference ``h(t-s) - h(t)`` vanishes linearly in ``s`` and cancels one power
of the kernel, so that segment has a finite weight (``2/sqrt(dt)`` for the
interpolant linear in ``t``).

Three interpolants are available. ``"linear"`` is piecewise linear in
``t`` and gives Toeplitz weights, but a solution started on the boundary
behaves like ``1 - c sqrt(t) + b t`` and the error near ``t = 0`` is then
``O(dt^(1/2))``. ``"sqrt-linear"`` is piecewise linear in ``sqrt(t)`` and
captures the onset, with ``O(dt)`` error. ``"sqrt-quadratic"`` (the default)
is piecewise quadratic in ``sqrt(t)``; it also reproduces the ``b t`` term,
and the error near the start drops to ``O(dt^(3/2))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import brentq
from scipy.signal import oaconvolve

from stickylab.model import HTable, ModelSpec, Origin

__all__ = [
    "KernelWeights",
    "SolveOptions",
    "NoBracketWarning",
    "NonConvergenceError",
    "segment_m0",
    "segment_m1",
    "kernel_weights",
    "gaussian_source",
    "solve_h",
    "residual",
    "residuals",
    "char_fn",
    "occupation_functional",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
# coefficient of the singular integral
KERNEL_SCALE = 1.0 / (2.0 * SQRT_2PI)


class NoBracketWarning(RuntimeWarning):
    pass


class NonConvergenceError(RuntimeError):
    pass


# {{{ kernel


def segment_m0(a, b):
    """``int_a^b s^(-3/2) ds`` for ``0 < a < b``."""
    return 2.0 * (np.power(a, -0.5) - np.power(b, -0.5))


def segment_m1(a, b):
    """``int_a^b s * s^(-3/2) ds`` for ``0 <= a < b``."""
    return 2.0 * (np.sqrt(b) - np.sqrt(a))


@dataclass(frozen=True)
class KernelWeights:
    """Product-integration weights of ``s^(-3/2)`` on a uniform grid.

    ``m0[j]`` and ``m1[j]`` are the moments over ``[j dt, (j+1) dt]`` for
    ``j >= 1`` (entry 0 is unused and set to NaN).
    """

    dt: float
    first_segment_coeff: float
    m0: np.ndarray
    m1: np.ndarray

    @property
    def n(self) -> int:
        return self.m0.size

    def lag_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Split the moments into the weights of ``h`` at both segment ends.

        On segment ``j`` the interpolant runs from ``h_{n-j}`` to
        ``h_{n-j-1}``; the returned ``A[j]`` multiplies ``h_{n-j} - h_n`` and
        ``B[j]`` multiplies ``h_{n-j-1} - h_{n-j}``. Both are written in a
        cancellation-free form.
        """
        j = np.arange(self.n, dtype=float)
        sj, sj1 = np.sqrt(j), np.sqrt(j + 1.0)
        scale = 2.0 / math.sqrt(self.dt)
        with np.errstate(divide="ignore"):
            A = scale / (sj * sj1 * (sj + sj1))
        B = scale / (sj1 * (2.0 * j + 1.0 + 2.0 * sj * sj1))
        A[0] = np.nan
        return A, B


def kernel_weights(dt: float, n: int) -> KernelWeights:
    """Closed-form segment moments for ``n`` segments of width ``dt``."""
    if not dt > 0 or n < 1:
        raise ValueError(f"need dt > 0 and n >= 1, got dt={dt}, n={n}")
    j = np.arange(n, dtype=float)
    a, b = j * dt, (j + 1.0) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = segment_m0(a, b)
    m0[0] = np.nan
    m1 = segment_m1(a, b)
    return KernelWeights(dt=dt, first_segment_coeff=2.0 / math.sqrt(dt), m0=m0, m1=m1)


class _LinearHistory:
    """Piecewise-linear interpolant in ``t``: Toeplitz weights.

    The discretized integral is split as ``I_n = H_n - S_n h_n`` where
    ``H_n`` only involves ``h_0 .. h_{n-1}``.
    """

    lookahead = 0

    def __init__(self, dt: float, M: int, boundary_start: bool = True) -> None:
        A, B = kernel_weights(dt, M + 1).lag_weights()
        self.A, self.B = A, B
        # W[k] is the weight of h_{n-k} for 1 <= k < n
        W = np.zeros(M + 1)
        W[1:] = A[1:] - B[1:] + B[:-1]
        self.W = W
        n = np.arange(M + 1, dtype=float)
        with np.errstate(divide="ignore"):
            self.S = (2.0 / math.sqrt(dt)) * (2.0 - 1.0 / np.sqrt(n))
        self.S[0] = np.nan

    def at(self, h: np.ndarray, n: int) -> float:
        past = h[n - 1 :: -1]
        return float(np.dot(self.W[1 : n + 1], past)) - (self.A[n] - self.B[n]) * h[0]

    def all(self, h: np.ndarray) -> np.ndarray:
        M = h.shape[0] - 1
        W = self.W if h.ndim == 1 else self.W[:, None]
        conv = oaconvolve(W, h, axes=0)[: M + 1]
        AB = self.A - self.B if h.ndim == 1 else (self.A - self.B)[:, None]
        out = conv - AB * h[0]
        out[0] = np.nan
        return out


def _sqrt_phi(s, t: float):
    # antiderivative of (sqrt(t) - sqrt(t - s)) s^(-3/2), zero at s = 0
    s = np.asarray(s, dtype=float)
    st = math.sqrt(t)
    return 2.0 * (
        np.arcsin(np.sqrt(np.minimum(s / t, 1.0)))
        - np.sqrt(s) / (np.sqrt(np.maximum(t - s, 0.0)) + st)
    )


def sqrt_weights(dt: float, n: int) -> tuple[np.ndarray, float]:
    """Row ``n`` of the product integration for the interpolant linear in ``sqrt(t)``.

    Returns ``(c, S)`` with ``I_n = sum_k c[k] h_k - S h_n`` over ``k < n``.
    On every segment ``h`` is interpolated linearly in ``sqrt(tau)``, which
    reproduces the ``sqrt(t)`` onset of ``h`` at a boundary start exactly.
    The first segment still has ``h(t-s) - h(t)`` vanishing linearly in
    ``s``, so its weight is finite.
    """
    t = n * dt
    st = math.sqrt(t)
    sq = np.sqrt(np.arange(n + 1) * dt)
    gap = np.diff(sq)
    c = np.zeros(n)
    w0 = float(_sqrt_phi(dt, t)) / gap[n - 1]
    c[n - 1] += w0
    S = w0
    if n > 1:
        j = np.arange(1, n)
        sa, sb = j * dt, (j + 1) * dt
        k = n - 1 - j
        m0 = segment_m0(sa, sb)
        P = ((st - sq[k]) * m0 - (_sqrt_phi(sb, t) - _sqrt_phi(sa, t))) / gap[k]
        # segment j runs from h_{k+1} (s = sa) to h_k (s = sb)
        c[k] += m0 - P
        c[k + 1] += P
        S += float(m0.sum())
    return c, S


class _SqrtHistory:
    """Interpolant linear in ``sqrt(t)``; weights depend on ``(n, k)``."""

    dense_limit = 4096
    cache_limit = 12_000
    lookahead = 0

    def __init__(self, dt: float, M: int, boundary_start: bool = True) -> None:
        self.dt = dt
        self.M = M
        self.S = np.full(M + 1, np.nan)
        self._rows: list[np.ndarray | None] = [None] * (M + 1)
        self._dense: np.ndarray | None = None
        self._rows: list[np.ndarray] | None = None
        if M <= self.dense_limit:
            C = np.zeros((M + 1, M + 1))
            for n in range(1, M + 1):
                C[n, :n], self.S[n] = sqrt_weights(dt, n)
            self._dense = C
        else:
            for n in range(1, M + 1):
                _, self.S[n] = sqrt_weights(dt, n)

    def row(self, n: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[n, :n]
        return sqrt_weights(self.dt, n)[0]

    def at(self, h: np.ndarray, n: int) -> float:
        return float(np.dot(self.row(n), h[:n]))

    def all(self, h: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            out = self._dense @ h
        else:
            out = np.zeros_like(h, dtype=float)
            for n in range(1, self.M + 1):
                out[n] = self.row(n) @ h[:n]
        out[0] = np.nan
        return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
# for segments well before t the kernel is smooth
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def _sqrt_gap(a, b):
    """``sqrt(b) - sqrt(a)`` without cancellation."""
    return (b - a) / (np.sqrt(a) + np.sqrt(b))


def _lagrange3(z, x):
    """Quadratic Lagrange basis on nodes ``z[..., 3]`` at points ``x[..., q]``.

    Node differences are passed as ``z`` gaps so that nearby nodes keep
    their relative accuracy; returns shape ``(..., 3, q)``.
    """
    z0, z1, z2 = z[..., 0:1], z[..., 1:2], z[..., 2:3]
    d01, d02, d12 = z0 - z1, z0 - z2, z1 - z2
    l0 = (x - z1) * (x - z2) / (d01 * d02)
    l1 = (x - z0) * (x - z2) / (-d01 * d12)
    l2 = (x - z0) * (x - z1) / (d02 * d12)
    return np.stack([l0, l1, l2], axis=-2)


def _last_segment_integrals(n: int) -> tuple[float, float]:
    """``J1, J2`` for the segment ending at ``t = n`` (unit spacing).

    ``J_p = int_{n-1}^{n} (sqrt(u) - sqrt(n))^p (n - u)^(-3/2) du``.
    """
    t = float(n)
    J1 = -float(_sqrt_phi(1.0, t))
    if n == 1:
        return J1, 2.0 * math.pi - 6.0
    # s = r^2 makes the integrand smooth on [0, 1]
    r = 0.5 * (_GL_X + 1.0)
    J2 = float(np.sum(0.5 * _GL_W * 2.0 * r * r / (math.sqrt(t) + np.sqrt(t - r * r)) ** 2))
    return J1, J2


@njit(cache=True)
def _far_segments(n, c, gx, gw, gx_far, gw_far):
    # segments [k, k+1] for k < n - 1, quadratic through nodes w0..w0+2
    t = float(n)
    for k in range(n - 1):
        w0 = max(k - 1, 0)
        a = math.sqrt(k)
        b = math.sqrt(k + 1.0)
        half = 0.5 / (a + b)
        mid = 0.5 * (a + b)
        z0 = math.sqrt(w0)
        z1 = math.sqrt(w0 + 1.0)
        z2 = math.sqrt(w0 + 2.0)
        d01, d02, d12 = z0 - z1, z0 - z2, z1 - z2
        # few nodes suffice once sqrt(t) is 8 half-widths from the midpoint
        far = math.sqrt(t) - mid >= 8.0 * half
        xs, ws = (gx_far, gw_far) if far else (gx, gw)
        o0 = o1 = o2 = 0.0
        for q in range(xs.size):
            x = mid + half * xs[q]
            w = t - x * x
            kern = 2.0 * x * half * ws[q] / (w * math.sqrt(w))
            o0 += (x - z1) * (x - z2) * kern
            o1 += (x - z0) * (x - z2) * kern
            o2 += (x - z0) * (x - z1) * kern
        o0 /= d01 * d02
        o1 /= -d01 * d12
        o2 /= d02 * d12
        c[w0] += o0
        c[w0 + 1] += o1
        c[w0 + 2] += o2
        c[n] -= o0 + o1 + o2


def sqrt_quadratic_row(n: int) -> np.ndarray:
    """Row ``n`` for the interpolant quadratic in ``sqrt(t)``, unit spacing.

    Returns ``c`` with ``I_n = sum_i c[i] h_i``; it has ``n + 1`` entries,
    or 3 when ``n = 1`` because the first segment is interpolated through
    nodes 0, 1 and 2. Segment ``[k, k+1]`` uses nodes ``k-1, k, k+1`` (nodes
    0, 1, 2 for the first one). Segments away from ``t`` are integrated by
    Gauss-Legendre in ``v = sqrt(u)``; on the last one the basis is expanded
    about ``sqrt(t)``, which leaves the two integrals of
    :func:`_last_segment_integrals`.
    """
    width = 3 if n == 1 else n + 1
    c = np.zeros(width)
    t = float(n)
    if n >= 2:
        _far_segments(n, c, _GL_X, _GL_W, _GL8_X, _GL8_W)

    # last segment, expanded about v_n = sqrt(t)
    first = 0 if n == 1 else n - 2
    z = np.sqrt(first + np.arange(3.0))
    vn = math.sqrt(t)
    J1, J2 = _last_segment_integrals(n)
    for i in range(3):
        others = [z[j] for j in range(3) if j != i]
        denom = (z[i] - others[0]) * (z[i] - others[1])
        d1 = ((vn - others[0]) + (vn - others[1])) / denom
        d2 = 2.0 / denom
        c[first + i] += d1 * J1 + 0.5 * d2 * J2
    return c


def _sqrt_quadratic_row_plain(n: int) -> np.ndarray:
    # first row linear in sqrt(t), padded to the width of the look-ahead row
    if n == 1:
        c, S = sqrt_weights(1.0, 1)
        return np.array([c[0], -S, 0.0])
    return sqrt_quadratic_row(n)


class _SqrtQuadHistory:
    """Interpolant quadratic in ``sqrt(t)``.

    For a start on the boundary, row 1 reaches forward to ``h_2`` so that
    the ``1 - c sqrt(t) + b t`` onset is captured on the first segment, and
    nodes 1 and 2 are solved together (``lookahead = 1``). Away from the
    boundary ``h`` is flat at ``t = 0``; there a look-ahead row would push
    ``h_1`` below 0, so row 1 is the one linear in ``sqrt(t)``.
    """

    dense_limit = 4096
    cache_limit = 12_000

    def __init__(self, dt: float, M: int, boundary_start: bool = True) -> None:
        if M < 2:
            raise ValueError("the sqrt-quadratic scheme needs at least two steps")
        self.lookahead = 1 if boundary_start else 0
        self._row = sqrt_quadratic_row if boundary_start else _sqrt_quadratic_row_plain
        self.dt = dt
        self.M = M
        self.scale = 1.0 / math.sqrt(dt)
        self.S = np.full(M + 1, np.nan)
        self._dense: np.ndarray | None = None
        self._rows: list[np.ndarray] | None = None
        if M <= self.dense_limit:
            C = np.zeros((M + 1, M + 1))
            for n in range(1, M + 1):
                row = self._row(n) * self.scale
                self.S[n] = -row[n]
                row[n] = 0.0
                C[n, : row.size] = row
            self._dense = C
        elif M <= self.cache_limit:
            # lower triangle only, one array per row
            self._rows = [np.zeros(0)]
            for n in range(1, M + 1):
                row = self._row(n) * self.scale
                self.S[n] = -row[n]
                row[n] = 0.0
                self._rows.append(row[: max(n, 3 if n == 1 else n)])
        else:
            for n in range(1, M + 1):
                self.S[n] = -self._row(n)[n] * self.scale

    def row(self, n: int) -> np.ndarray:
        """Off-diagonal weights of row *n*."""
        if self._dense is not None:
            return self._dense[n, : max(n, 3 if n == 1 else n)]
        if self._rows is not None:
            return self._rows[n]
        row = self._row(n) * self.scale
        row[n] = 0.0
        return row[: max(n, 3 if n == 1 else n)]

    def at(self, h: np.ndarray, n: int) -> float:
        r = self.row(n)
        return float(np.dot(r, h[: r.size]))

    def all(self, h: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            out = self._dense @ h
        else:
            out = np.zeros_like(h, dtype=float)
            for n in range(1, self.M + 1):
                r = self.row(n)
                out[n] = r @ h[: r.size]
        out[0] = np.nan
        return out


_SCHEMES = {
    "sqrt-quadratic": _SqrtQuadHistory,
    "sqrt-linear": _SqrtHistory,
    "linear": _LinearHistory,
}
DEFAULT_SCHEME = "sqrt-quadratic"


# }}}


def gaussian_source(x: float, t):
    """Heat kernel ``exp(-x^2/(2t)) / sqrt(2 pi t)`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("the heat kernel needs t > 0")
    with np.errstate(under="ignore"):
        out = np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SolveOptions:
    dt: float = 1e-3
    root_tol: float = 1e-12
    picard_tol: float = 1e-10
    max_picard: int = 200
    psi_source: np.ndarray | None = None
    damping: float = 0.5
    scheme: str = DEFAULT_SCHEME

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.root_tol > 0 and self.picard_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_picard < 1:
            raise ValueError("max_picard must be at least 1")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; use one of {sorted(_SCHEMES)}")


class _Problem:
    """Per-grid coefficients shared by marching, sweeps and residuals."""

    def __init__(
        self, m: ModelSpec, dt: float, M: int, psi=None, scheme: str = DEFAULT_SCHEME
    ) -> None:
        self.m = m
        self.dt = dt
        self.M = M
        t = np.arange(M + 1) * dt
        self.t = t
        self.alpha = np.broadcast_to(np.asarray(m.alpha(t), dtype=float), t.shape)
        self.h0 = 1.0 if m.x == 0 else 0.0
        self.hist = _SCHEMES[scheme](dt, M, boundary_start=self.h0 == 1.0)
        self.g = np.full(M + 1, np.nan)
        self.g[1:] = gaussian_source(m.x, t[1:])
        self.inv_sqrt = np.full(M + 1, np.nan)
        self.inv_sqrt[1:] = 1.0 / (SQRT_2PI * np.sqrt(t[1:]))
        # coefficient of h_n outside the rho term
        self.D = KERNEL_SCALE * self.hist.S + self.inv_sqrt
        if psi is None:
            self.psi = np.zeros(M + 1)
        else:
            psi = np.asarray(psi, dtype=float)
            if psi.shape != (M + 1,):
                raise ValueError(f"psi source must have {M + 1} entries, got {psi.shape}")
            self.psi = psi

    def rho(self, u):
        return self.m.rho(u)

    def rhs_known(self, H: np.ndarray | float, n) -> np.ndarray | float:
        """Everything in the node equation that does not involve ``h_n``."""
        return self.g[n] + KERNEL_SCALE * H - self.psi[n]

    def residuals(self, h: np.ndarray, rho_arg: np.ndarray) -> np.ndarray:
        """Node residuals of one table, or of each column of a 2-d array."""
        col = (slice(None), None) if h.ndim == 2 else slice(None)
        H = self.hist.all(h)
        r = np.asarray(self.rho(rho_arg), dtype=float)
        if h.ndim == 2 and r.ndim == 1:
            r = r[:, None]
        lhs = (1.0 - self.alpha[col]) * h / r
        known = self.g[col] + KERNEL_SCALE * H - self.psi[col]
        out = lhs + self.D[col] * h - known
        out[0] = 0.0
        return out


def _root(f, f0: float, f1: float) -> float:
    # f is increasing with f(0) <= 0 <= f(1)
    if f0 == 0.0:
        return 0.0
    if f1 == 0.0:
        return 1.0
    return brentq(f, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)


def _damped_fixed_point(a: float, rho, D: float, K: float, damping: float, tol: float):
    # h = K / ((1 - alpha)/rho(h) + D), clipped to [0, 1]
    h = 0.5
    for _ in range(10_000):
        new = min(1.0, max(0.0, K / (a / rho(h) + D)))
        nxt = (1.0 - damping) * h + damping * new
        if abs(nxt - h) < tol:
            return nxt
        h = nxt
    return h


def _solve_node(p: _Problem, h: np.ndarray, n: int, opts: SolveOptions) -> tuple[float, bool]:
    """Root of the node-*n* equation in ``h_n``; other entries of *h* fixed."""
    rho = p.rho
    a = 1.0 - p.alpha[n]
    D = p.D[n]
    K = p.rhs_known(p.hist.at(h, n), n)

    def f(v):
        return a * v / rho(v) + D * v - K

    f0, f1 = f(0.0), f(1.0)
    if f0 <= 0.0 <= f1:
        return _root(f, f0, f1), False
    # a sign violation at rounding level means the root sits on the boundary
    if 0.0 < f0 <= opts.root_tol:
        return 0.0, False
    if -opts.root_tol <= f1 < 0.0:
        return 1.0, False
    return _damped_fixed_point(a, rho, D, K, opts.damping, opts.root_tol), True


def _start_block(p: _Problem, h: np.ndarray, rho_at) -> np.ndarray:
    """Solve the coupled equations of nodes 1 and 2 with ``rho`` fixed.

    *rho_at* gives ``rho`` at the two nodes; returns flags for the nodes
    whose solution had to be clipped to ``[0, 1]``.
    """
    r1, r2 = p.hist.row(1), p.hist.row(2)
    coef1 = (1.0 - p.alpha[1]) / rho_at[0] + p.D[1]
    coef2 = (1.0 - p.alpha[2]) / rho_at[1] + p.D[2]
    A = np.array([[coef1, -KERNEL_SCALE * r1[2]], [-KERNEL_SCALE * r2[1], coef2]])
    b = np.array([p.rhs_known(r1[0] * h[0], 1), p.rhs_known(r2[0] * h[0], 2)])
    h[1:3] = np.linalg.solve(A, b)
    flags = np.zeros(2, dtype=bool)
    for i in (0, 1):
        v = h[1 + i]
        if not 0.0 <= v <= 1.0:
            flags[i] = not (-1e-14 <= v <= 1.0 + 1e-14)
            h[1 + i] = min(1.0, max(0.0, v))
    return flags


def _march(p: _Problem, opts: SolveOptions) -> tuple[np.ndarray, np.ndarray]:
    """Solve node by node; ``h_n`` enters through rho as well.

    When row 1 of the scheme looks ahead to ``h_2``, nodes 1 and 2 are
    solved together: the pair is linear once ``rho`` is fixed, so ``rho``
    is lagged and the 2 x 2 system re-solved until the pair settles.
    """
    h = np.zeros(p.M + 1)
    h[0] = p.h0
    flags = np.zeros(p.M + 1, dtype=bool)
    start = 1
    if p.hist.lookahead:
        h[1:3] = p.h0
        for _ in range(200):
            old = h[1:3].copy()
            flags[1:3] = _start_block(p, h, np.asarray(p.rho(old), dtype=float) * np.ones(2))
            if np.max(np.abs(h[1:3] - old)) <= 1e-15:
                break
        else:
            flags[1:3] = True
        start = 3
    for n in range(start, p.M + 1):
        h[n], flags[n] = _solve_node(p, h, n, opts)
    return h, flags


def _sweep(p: _Problem, h_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One Picard sweep: march with rho frozen at the previous table.

    With ``rho(h_prev)`` fixed each node equation is linear in ``h_n``
    (and the starting block is a 2 x 2 linear system).
    """
    r = np.broadcast_to(np.asarray(p.rho(h_prev), dtype=float), h_prev.shape)
    coef = (1.0 - p.alpha) / r + p.D
    h = np.zeros(p.M + 1)
    h[0] = p.h0
    flags = np.zeros(p.M + 1, dtype=bool)
    start = 1
    if p.hist.lookahead:
        flags[1:3] = _start_block(p, h, r[1:3])
        start = 3
    for n in range(start, p.M + 1):
        v = p.rhs_known(p.hist.at(h, n), n) / coef[n]
        if not 0.0 <= v <= 1.0:
            # clipping at rounding level is not a failure
            flags[n] = not (-1e-14 <= v <= 1.0 + 1e-14)
            v = min(1.0, max(0.0, v))
        h[n] = v
    return h, flags


def _grid_size(T: float, dt: float) -> int:
    M = int(round(T / dt))
    if M < 1 or abs(M * dt - T) > 1e-9 * T:
        raise ValueError(f"dt={dt} does not divide the horizon T={T}")
    return M


def solve_h(m: ModelSpec, opts: SolveOptions | None = None, init=None) -> HTable:
    """Solve for ``h`` on ``t_n = n dt``, ``0 <= n <= T/dt``.

    Without *init* the grid is first marched node by node (Brent root on
    ``[0, 1]`` for each ``h_n``), then refined by Picard sweeps until two
    successive tables agree to ``picard_tol``. With *init* (a constant or an
    array on the grid) only Picard sweeps are used, starting from *init*;
    this is how independent starting points are compared.

    Nodes where no sign change exists on ``[0, 1]`` are solved by damped
    fixed-point iteration instead, clipped to ``[0, 1]`` and flagged.
    """
    opts = opts or SolveOptions()
    M = _grid_size(m.T, opts.dt)
    p = _Problem(m, opts.dt, M, opts.psi_source, opts.scheme)

    if init is None:
        h, flags = _march(p, opts)
    else:
        h = np.broadcast_to(np.asarray(init, dtype=float), (M + 1,)).copy()
        h[0] = p.h0
        flags = np.zeros(M + 1, dtype=bool)

    log = []
    for sweep in range(1, opts.max_picard + 1):
        new, flags_new = _sweep(p, h)
        change = float(np.max(np.abs(new - h)))
        log.append(change)
        h = new
        if change < opts.picard_tol:
            flags = flags | flags_new
            break
    else:
        raise NonConvergenceError(
            f"Picard sweeps did not settle below {opts.picard_tol:g} after "
            f"{opts.max_picard} sweeps (last change {log[-1]:.3g})"
        )

    if flags.any():
        warnings.warn(
            f"{int(flags.sum())} node(s) had no sign change on [0, 1]; "
            "solved by damped fixed-point iteration",
            NoBracketWarning,
            stacklevel=2,
        )

    res = p.residuals(h, h)
    meta = {"picard_changes": log, "sweeps": len(log), "scheme": opts.scheme}
    return HTable(
        dt=opts.dt,
        values=h,
        residuals=res,
        origin=Origin.SOLVER,
        flags=flags,
        meta=meta,
    )


def residuals(
    m: ModelSpec, h: HTable, psi=None, rho_arg=None, scheme: str = DEFAULT_SCHEME
) -> np.ndarray:
    """Signed ``LHS - RHS`` of the discretized equation at every node.

    Entry 0 is zero (the initial node is fixed, not solved for). *rho_arg*
    replaces the argument of ``rho``, which otherwise is *h* itself; it is
    used when a table is checked against another table's ``rho(h_t)``.
    """
    r = h.values if rho_arg is None else _values(rho_arg)
    return batch_residuals(m, h.dt, h.values, rho_arg=r, psi=psi, scheme=scheme)


def batch_residuals(
    m: ModelSpec, dt: float, values, rho_arg=None, psi=None, scheme: str = DEFAULT_SCHEME
) -> np.ndarray:
    """Residuals of raw tables; *values* is ``(M+1,)`` or ``(M+1, batch)``."""
    values = np.asarray(values, dtype=float)
    p = _Problem(m, dt, values.shape[0] - 1, psi, scheme)
    r = values if rho_arg is None else _values(rho_arg)
    return p.residuals(values, r)


def _values(table) -> np.ndarray:
    return table.values if isinstance(table, HTable) else np.asarray(table, dtype=float)


def residual(m: ModelSpec, h: HTable, n: int, psi=None, scheme: str = DEFAULT_SCHEME) -> float:
    if not 1 <= n <= h.M:
        raise IndexError(f"node {n} outside 1..{h.M}")
    return float(residuals(m, h, psi, scheme=scheme)[n])


def char_fn(m: ModelSpec, h: HTable, lam: float, t: float) -> complex:
    """``E_x[exp(i lam X_t) 1{X_t != 0}]`` from the tabulated ``h``.

    Evaluated as ``exp(-lam^2 t/2 + i lam x) + int_0^t exp(-lam^2 (t-s)/2)
    h(s) (i lam alpha(s)/rho(h_s) + lam^2/2) ds - h(t)`` by the trapezoid
    rule on the table grid; this form never exponentiates a positive number.
    """
    n = h.index_of(t)
    s = h.times[: n + 1]
    hv = h.values[: n + 1]
    a = np.broadcast_to(np.asarray(m.alpha(s), dtype=float), s.shape)
    r = np.broadcast_to(np.asarray(m.rho(hv), dtype=float), s.shape)
    lam2 = 0.5 * lam * lam
    integrand = np.exp(-lam2 * (s[n] - s)) * hv * (1j * lam * a / r + lam2)
    integral = np.trapezoid(integrand, dx=h.dt) if n > 0 else 0.0
    return complex(np.exp(-lam2 * s[n] + 1j * lam * m.x) + integral - hv[n])


def occupation_functional(m: ModelSpec, h: HTable, t: float) -> float:
    """``int_0^t (1 - alpha(s)) h(s) / rho(h_s) ds`` by the trapezoid rule."""
    n = h.index_of(t)
    if n == 0:
        return 0.0
    s = h.times[: n + 1]
    hv = h.values[: n + 1]
    a = np.broadcast_to(np.asarray(m.alpha(s), dtype=float), s.shape)
    r = np.broadcast_to(np.asarray(m.rho(hv), dtype=float), s.shape)
    return float(np.trapezoid((1.0 - a) * hv / r, dx=h.dt))
