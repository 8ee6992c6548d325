"""Particle ensembles of the sticky skew walk and their summaries."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from stickylab.lattice import kernels
from stickylab.lattice.rng import stream_keys
from stickylab.lattice.walk import (
    GridMismatchError,
    WalkParams,
    exit_up_prob,
    frozen_coefficients,
    lattice_site,
)
from stickylab.model import HTable, ModelSpec, Origin
from stickylab.volterra import batch_residuals

__all__ = [
    "INTERACTING",
    "HIST_HALF_WIDTH",
    "SampleSizeWarning",
    "ToleranceBelowNoiseError",
    "FixedPointError",
    "Ensemble",
    "simulate_ensemble",
    "boundary_density",
    "empirical_char_fn",
    "mckean_vlasov_iterate",
    "batch_bounds",
    "atom_estimate",
    "constant_table",
]

INTERACTING = "interacting"
HIST_HALF_WIDTH = 8
DEFAULT_BATCHES = 32
DEFAULT_BAND_SITES = 4
TANH_RANGE = 20.0


class SampleSizeWarning(UserWarning):
    pass


class ToleranceBelowNoiseError(ValueError):
    pass


class FixedPointError(RuntimeError):
    pass


def batch_bounds(N: int, batches: int = DEFAULT_BATCHES) -> np.ndarray:
    nb = max(1, min(batches, N))
    return (np.arange(nb + 1, dtype=np.int64) * N) // nb


def atom_estimate(hist, N: int, K: int = HIST_HALF_WIDTH):
    """Estimate of ``P(X = 0)`` and its standard error from site counts.

    Site 0 of the walk also collects the continuous part of the law lying
    within half a cell of 0. Half the mass of sites ``+-1`` estimates that
    part and is subtracted; per particle the estimator is
    ``1{X=0} - 1{|X|=eps}/2``.
    """
    hist = np.asarray(hist)
    p0 = hist[..., K] / N
    p1 = (hist[..., K + 1] + hist[..., K - 1]) / N
    est = p0 - 0.5 * p1
    var = np.maximum(p0 + 0.25 * p1 - est * est, 0.0)
    return est, np.sqrt(var / max(N - 1, 1))


def _tanh_tables(eps: float):
    c = int(np.ceil(TANH_RANGE / eps))
    x = np.arange(-c, c + 1) * eps
    f = np.tanh(x)
    fpp = -2.0 * f * (1.0 - f * f)
    return f, fpp


def _mean_se(s1, s2, N):
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0)
    return mean, np.sqrt(var / max(N - 1, 1))


@dataclass(frozen=True)
class Ensemble:
    """Summaries of ``N`` independent (or interacting) walkers.

    Everything is recorded at the nodes ``t_n = n * dt``; ``hist`` counts the
    sites ``-K..K`` and ``snapshots`` keeps every position at a few nodes.
    ``h_drive`` is the value of ``h`` that set the holding probability at
    each node.
    """

    model: ModelSpec
    params: WalkParams
    N: int
    seed: int
    mode: str
    dt: float
    K: int
    batch_hist: np.ndarray
    imom: np.ndarray
    batch_fmom: np.ndarray
    h_drive: np.ndarray
    snapshots: dict = field(default_factory=dict)
    start_site: int = 0

    @property
    def M(self) -> int:
        return self.batch_hist.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    @property
    def batches(self) -> int:
        return self.batch_hist.shape[0]

    def index_of(self, t: float) -> int:
        n = int(round(t / self.dt))
        if not 0 <= n <= self.M or abs(n * self.dt - t) > 1e-9 * max(1.0, t):
            raise GridMismatchError(f"t={t} is not a recording time (dt={self.dt})")
        return n

    @property
    def hist(self) -> np.ndarray:
        return self.batch_hist.sum(axis=0)

    @property
    def fmom(self) -> np.ndarray:
        out = np.zeros(self.batch_fmom.shape[1:])
        for b in range(self.batches):
            out += self.batch_fmom[b]
        return out

    @property
    def occ_zero(self) -> np.ndarray:
        """Raw fraction of walkers at site 0."""
        return self.hist[:, self.K] / self.N

    @property
    def h_hat(self) -> np.ndarray:
        return atom_estimate(self.hist, self.N, self.K)[0]

    @property
    def se(self) -> np.ndarray:
        return atom_estimate(self.hist, self.N, self.K)[1]

    def batch_h_hat(self) -> np.ndarray:
        """``h_hat`` per particle batch, shape ``(batches, M + 1)``."""
        sizes = np.diff(batch_bounds(self.N, self.batches))
        return np.stack(
            [atom_estimate(self.batch_hist[b], sizes[b], self.K)[0] for b in range(self.batches)]
        )

    @property
    def mean_L0(self) -> np.ndarray:
        return 2.0 * self.params.eps * self.imom[:, 0] / self.N

    @property
    def mean_L0_minus(self) -> np.ndarray:
        return 2.0 * self.params.eps * self.imom[:, 1] / self.N

    def local_time_ratio(self):
        """``mean L0_minus / mean L0`` and its delta-method standard error."""
        N = self.N
        mu = self.imom[:, 0] / N
        md = self.imom[:, 1] / N
        vu = self.imom[:, 2] / N - mu * mu
        vd = self.imom[:, 3] / N - md * md
        cov = self.imom[:, 4] / N - mu * md
        with np.errstate(divide="ignore", invalid="ignore"):
            r = md / mu
            var = (vd - 2.0 * r * cov + r * r * vu) / (mu * mu * max(N - 1, 1))
        return r, np.sqrt(np.maximum(var, 0.0))

    @property
    def mean_held_time(self) -> np.ndarray:
        """Mean time spent held at 0 (``eps^2`` per stay)."""
        return self.params.step_time * self.imom[:, 5] / self.N

    @property
    def mean_time_above(self) -> np.ndarray:
        return self.params.step_time * self.imom[:, 6] / self.N

    def time_above_fraction(self):
        """Fraction of ``[0, T]`` spent above 0, averaged, with its SE."""
        scale = self.params.step_time / self.params.T
        frac = scale * self.imom[-1, 6] / self.N
        var = scale * scale * self.imom[-1, 7] / self.N - frac * frac
        return frac, np.sqrt(max(var, 0.0) / max(self.N - 1, 1))

    def martingale(self):
        """Mean and SE of ``tanh(X_t) - tanh(x) - compensator``."""
        fm = self.fmom
        return _mean_se(fm[:, 0], fm[:, 1], self.N)

    def sojourn_balance(self):
        """Mean and SE of held time minus ``int rho(h) dL``."""
        fm = self.fmom
        return _mean_se(fm[:, 2], fm[:, 3], self.N)

    def density_at_zero(self, band_sites: int = DEFAULT_BAND_SITES):
        eps = self.params.eps
        band = band_sites * eps
        if band_sites > self.K:
            raise ValueError(f"band of {band_sites} sites exceeds the recorded {self.K}")
        h = self.hist
        plus = h[:, self.K + 1 : self.K + band_sites + 1].sum(axis=1)
        minus = h[:, self.K - band_sites : self.K].sum(axis=1)
        return plus / (self.N * band), minus / (self.N * band)

    def to_htable(self) -> HTable:
        values = np.clip(self.h_hat, 0.0, 1.0)
        res = batch_residuals(self.model, self.dt, values)
        return HTable(
            dt=self.dt,
            values=values,
            residuals=res,
            origin=Origin.MONTE_CARLO,
            meta={"se": self.se.copy(), "N": self.N, "seed": self.seed, "eps": self.params.eps},
        )

    def summary_csv(self, path: str | Path | None = None) -> str:
        p_plus, p_minus = self.density_at_zero()
        cols = (
            self.times,
            self.h_hat,
            self.se,
            self.mean_L0,
            self.mean_L0_minus,
            self.occ_zero,
            p_plus,
            p_minus,
        )
        buf = io.StringIO()
        buf.write("t,h_hat,se,mean_L0,mean_L0_minus,occ_zero,p_plus,p_minus\n")
        for row in zip(*cols):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def simulate_ensemble(
    m: ModelSpec,
    h: HTable | str,
    N: int,
    p: WalkParams,
    seed: int,
    *,
    dt: float | None = None,
    snapshot_times: Sequence[float] = (),
    batches: int = DEFAULT_BATCHES,
    first_stream: int = 0,
) -> Ensemble:
    """Run ``N`` walkers from ``m.x`` over ``p.steps`` steps.

    With an :class:`HTable` the holding probability follows the table,
    interpolated linearly between its nodes. With ``h = INTERACTING`` the value used
    at each step is the atom estimate of the current empirical law (see
    :func:`atom_estimate`), so the walkers interact through it; summaries are
    then recorded every *dt* (default ``1e-3``).

    Walker ``i`` uses random stream ``first_stream + i`` of *seed*.
    """
    if N < 1:
        raise ValueError(f"need at least one particle, got {N}")
    if abs(p.T - m.T) > 1e-9 * m.T:
        raise GridMismatchError(f"walk horizon {p.T:g} differs from model horizon {m.T:g}")
    eps = p.eps
    j0 = lattice_site(m.x, eps)
    interacting = isinstance(h, str)
    if interacting and h != INTERACTING:
        raise ValueError(f"unknown mode {h!r}")

    if interacting:
        dt = 1e-3 if dt is None else dt
        S = p.steps_per_cell(dt)
        alpha = np.broadcast_to(np.asarray(m.alpha(p.step_times()), float), (p.steps,))
        up = np.ascontiguousarray(exit_up_prob(alpha))
        stay = np.empty(p.steps)
        thr = np.empty(p.steps)
        rho = np.empty(p.steps)
        alpha = np.ascontiguousarray(alpha)
    else:
        if dt is not None and abs(dt - h.dt) > 1e-12 * h.dt:
            raise GridMismatchError("dt must match the h table in frozen mode")
        dt = h.dt
        S = p.steps_per_cell(dt)
        stay, thr, rho, alpha = frozen_coefficients(m, p, h)
    M = p.steps // S

    bounds = batch_bounds(N, batches)
    nb = bounds.size - 1
    K = HIST_HALF_WIDTH
    keys = stream_keys(seed, first_stream, N)
    state = np.zeros((N, 5), dtype=np.int64)
    state[:, 0] = j0
    cum = np.zeros((N, 2))
    f, fpp = _tanh_tables(eps)

    batch_hist = np.zeros((nb, M + 1, 2 * K + 1), dtype=np.int64)
    batch_fmom = np.zeros((nb, M + 1, 4))
    imom = np.zeros((M + 1, 8), dtype=np.int64)
    hist_b = np.zeros((nb, 2 * K + 1), dtype=np.int64)
    imom_b = np.zeros((nb, 8), dtype=np.int64)
    fmom_b = np.zeros((nb, 4))
    snap_idx = {int(round(t / dt)): float(t) for t in snapshot_times}
    for n, t in snap_idx.items():
        if not 0 <= n <= M or abs(n * dt - t) > 1e-9 * max(1.0, t):
            raise GridMismatchError(f"snapshot time {t} is not a recording time")
    snapshots = {}
    h_drive = np.empty(M + 1)

    def rec(n):
        kernels.record(state, cum, bounds, j0, K, f, hist_b, imom_b, fmom_b)
        batch_hist[:, n] = hist_b
        batch_fmom[:, n] = fmom_b
        imom[n] = imom_b.sum(axis=0)
        if n in snap_idx:
            snapshots[snap_idx[n]] = state[:, 0].copy()

    rec(0)
    if not interacting:
        h_drive[:] = h.values
        for n in range(M):
            kernels.advance(
                state, cum, keys, bounds, n * S, (n + 1) * S, stay, thr, rho, alpha, eps, fpp
            )
            rec(n + 1)
    else:
        # the atom estimate only takes the values level / (2N)
        rho_tab = np.ascontiguousarray(
            np.broadcast_to(np.asarray(m.rho(np.arange(2 * N + 1) / (2 * N)), float), (2 * N + 1,))
        )
        level = 2 * N if j0 == 0 else 0
        for n in range(M):
            h_drive[n] = level / (2 * N)
            level = kernels.advance_interacting(
                state, cum, keys, bounds, n * S, (n + 1) * S, alpha, up, rho_tab, eps, fpp,
                level, stay, thr, rho,
            )  # fmt: skip
            rec(n + 1)
        h_drive[M] = level / (2 * N)

    return Ensemble(
        model=m,
        params=p,
        N=N,
        seed=seed,
        mode=INTERACTING if interacting else "frozen",
        dt=dt,
        K=K,
        batch_hist=batch_hist,
        imom=imom,
        batch_fmom=batch_fmom,
        h_drive=h_drive,
        snapshots=snapshots,
        start_site=j0,
    )


def boundary_density(ens: Ensemble, t: float, band: float):
    """Histogram estimates of the density just above and just below 0.

    Counts walkers in ``(0, band]`` and ``[-band, 0)`` and divides by
    ``band * N``. *band* must be a whole number of lattice cells; bands wider
    than the recorded histogram need a snapshot at *t*.
    """
    eps = ens.params.eps
    k = int(round(band / eps))
    if k < 1 or abs(k * eps - band) > 1e-9 * band:
        raise GridMismatchError(f"band {band!r} is not a whole number of cells eps={eps!r}")
    if k <= ens.K:
        h = ens.hist[ens.index_of(t)]
        plus = int(h[ens.K + 1 : ens.K + k + 1].sum())
        minus = int(h[ens.K - k : ens.K].sum())
    elif t in ens.snapshots:
        pos = ens.snapshots[t]
        plus = int(np.count_nonzero((pos > 0) & (pos <= k)))
        minus = int(np.count_nonzero((pos < 0) & (pos >= -k)))
    else:
        raise ValueError(f"band of {k} cells needs a snapshot at t={t}")
    if min(plus, minus) < 100:
        warnings.warn(
            f"only {min(plus, minus)} walkers in the band at t={t}; density estimate is rough",
            SampleSizeWarning,
            stacklevel=2,
        )
    return plus / (band * ens.N), minus / (band * ens.N)


def empirical_char_fn(ens: Ensemble, lam: float, t: float):
    """Estimate ``E[exp(i lam X_t) 1{X_t != 0}]`` from the snapshot at *t*.

    The half-cell correction of :func:`atom_estimate` moves half the mass of
    sites ``+-1`` back into the continuous part, where ``exp(i lam X)`` is
    taken as 1. Returns the estimate and the standard errors of its real
    and imaginary parts.
    """
    if t not in ens.snapshots:
        raise ValueError(f"no snapshot recorded at t={t}")
    pos = ens.snapshots[t]
    x = pos * ens.params.eps
    off = pos != 0
    re = np.where(off, np.cos(lam * x), 0.0) + 0.5 * (np.abs(pos) == 1)
    im = np.where(off, np.sin(lam * x), 0.0)
    n = pos.size
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else 0.0  # noqa: E731
    return complex(re.mean(), im.mean()), se(re), se(im)


def constant_table(value: float, dt: float, M: int) -> HTable:
    return HTable(
        dt=dt, values=np.full(M + 1, value), residuals=np.zeros(M + 1), origin=Origin.EXTERNAL
    )


def mckean_vlasov_iterate(
    m: ModelSpec,
    N: int,
    p: WalkParams,
    seed: int,
    tol: float,
    max_iter: int = 50,
    *,
    init: float | HTable = 0.0,
    dt: float = 1e-3,
) -> HTable:
    """Particle fixed point ``h <- h_hat(walk driven by h)``.

    Every iteration reuses *seed*, so the map is deterministic and the
    iteration can settle exactly. Stops when successive tables are within
    *tol* in sup norm; *tol* has to exceed three standard errors of
    ``h_hat``, or the stopping rule would be chasing noise.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    M = p.steps // p.steps_per_cell(dt)
    h = init if isinstance(init, HTable) else constant_table(float(init), dt, M)
    log = []
    for it in range(1, max_iter + 1):
        ens = simulate_ensemble(m, h, N, p, seed)
        if it == 1:
            noise = 3.0 * float(ens.se.max())
            if tol <= noise:
                raise ToleranceBelowNoiseError(
                    f"tol={tol:g} is below three standard errors of h_hat ({noise:.3g}); "
                    "raise tol or N"
                )
        new = ens.to_htable()
        change = float(np.max(np.abs(new.values - h.values)))
        log.append(change)
        h = new
        if change < tol:
            meta = dict(new.meta, iterations=it, changes=log, tol=tol)
            return HTable(
                dt=new.dt,
                values=new.values,
                residuals=new.residuals,
                origin=Origin.MONTE_CARLO,
                meta=meta,
            )
    raise FixedPointError(
        f"particle fixed point did not settle within {max_iter} iterations "
        f"(last change {log[-1]:.3g}, tol {tol:g})"
    )
