"""Pairs of walkers driven by the same draws.

``X1`` follows one ``h`` table and ``X2`` another. Off 0 the two walkers
make the same move, so ``X1 - X2`` can only change when one of them sits at
0. All pathwise statistics (running distance, local times from the
discrete Tanaka formula, the sojourn balance of the maximum) are
accumulated as the walk runs, so no paths are stored.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stickylab.lattice import kernels
from stickylab.lattice.ensemble import (
    DEFAULT_BATCHES,
    HIST_HALF_WIDTH,
    atom_estimate,
    batch_bounds,
)
from stickylab.lattice.rng import stream_keys
from stickylab.lattice.walk import (
    GridMismatchError,
    WalkParams,
    frozen_coefficients,
    lattice_site,
)
from stickylab.model import HTable, ModelSpec

__all__ = ["CoupledRun", "MaxMinSummary", "couple_solutions", "max_min_process"]

# histogram slots
X1, X2, MAX, MIN = range(4)


@dataclass(frozen=True)
class CoupledRun:
    """Summaries of ``N`` coupled pairs at the nodes of the common grid.

    ``imom`` columns (sums over pairs, lattice units): running max of
    ``|X1 - X2|``, local time of ``X1 - X2`` at 0 and its square, squared
    increment of that local time over the last cell, local times of the
    max and of the min, up exits of ``X1`` and of ``X2``.
    """

    model: ModelSpec
    params: WalkParams
    N: int
    seed: int
    dt: float
    K: int
    batch_hist: np.ndarray
    imom: np.ndarray
    batch_fmom: np.ndarray
    h_a: np.ndarray
    h_b: np.ndarray

    @property
    def M(self) -> int:
        return self.batch_hist.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    @property
    def batches(self) -> int:
        return self.batch_hist.shape[0]

    @property
    def sup_dist_mean(self) -> np.ndarray:
        """Mean of ``sup_{s<=t} |X1_s - X2_s|``."""
        return self.params.eps * self.imom[:, 0] / self.N

    @property
    def L0_delta_mean(self) -> np.ndarray:
        """Mean local time of ``X1 - X2`` at 0."""
        return self.params.eps * self.imom[:, 1] / self.N

    @property
    def sup_distance(self) -> float:
        return float(self.sup_dist_mean[-1])

    @property
    def L0_delta(self) -> float:
        return float(self.L0_delta_mean[-1])

    def psi_prime(self):
        """Backward difference of ``psi = -L0(X1 - X2)/2`` and its SE.

        Entry ``n`` is the slope over ``[t_{n-1}, t_n]``; entry 0 is NaN.
        """
        eps, N = self.params.eps, self.N
        inc = np.diff(self.imom[:, 1]) / N
        sq = self.imom[1:, 3] / N
        scale = 0.5 * eps / self.dt
        est = np.full(self.M + 1, np.nan)
        se = np.full(self.M + 1, np.nan)
        est[1:] = 0.0 - scale * inc
        se[1:] = scale * np.sqrt(np.maximum(sq - inc * inc, 0.0) / max(N - 1, 1))
        return est, se

    def atom(self, which: int):
        """Atom estimate and SE for ``X1``, ``X2``, the max or the min."""
        return atom_estimate(self.batch_hist[:, :, which].sum(axis=0), self.N, self.K)

    def batch_atom(self, which: int) -> np.ndarray:
        """Atom estimate per batch, shape ``(batches, M + 1)``."""
        sizes = np.diff(batch_bounds(self.N, self.batches))
        return np.stack(
            [
                atom_estimate(self.batch_hist[b, :, which], sizes[b], self.K)[0]
                for b in range(self.batches)
            ]
        )

    def stats_csv(self, path: str | Path | None = None) -> str:
        psi, _ = self.psi_prime()
        buf = io.StringIO()
        buf.write("t,sup_dist_mean,L0_delta_mean,psi_prime\n")
        for row in zip(self.times, self.sup_dist_mean, self.L0_delta_mean, psi):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def couple_solutions(
    m: ModelSpec,
    h_a: HTable,
    h_b: HTable,
    N: int,
    p: WalkParams,
    seed: int,
    *,
    batches: int = DEFAULT_BATCHES,
    first_stream: int = 0,
) -> CoupledRun:
    """Run ``N`` pairs from ``m.x``; ``X1`` uses *h_a*, ``X2`` uses *h_b*.

    Both walkers of pair ``i`` read the same uniform at every step, from
    stream ``first_stream + i`` of *seed*.
    """
    if N < 1:
        raise ValueError(f"need at least one pair, got {N}")
    if h_a.M != h_b.M or abs(h_a.dt - h_b.dt) > 1e-12 * h_a.dt:
        raise GridMismatchError("the two h tables are on different grids")
    dt = h_a.dt
    S = p.steps_per_cell(dt)
    stay_a, thr_a, rho_a, _ = frozen_coefficients(m, p, h_a)
    stay_b, thr_b, rho_b, _ = frozen_coefficients(m, p, h_b)
    M = p.steps // S
    j0 = lattice_site(m.x, p.eps)

    bounds = batch_bounds(N, batches)
    nb = bounds.size - 1
    K = HIST_HALF_WIDTH
    keys = stream_keys(seed, first_stream, N)
    state = np.zeros((N, 9), dtype=np.int64)
    state[:, 0] = j0
    state[:, 1] = j0
    bal = np.zeros(N)

    batch_hist = np.zeros((nb, M + 1, 4, 2 * K + 1), dtype=np.int64)
    batch_fmom = np.zeros((nb, M + 1, 2))
    imom = np.zeros((M + 1, 8), dtype=np.int64)
    hist_b = np.zeros((nb, 4, 2 * K + 1), dtype=np.int64)
    imom_b = np.zeros((nb, 8), dtype=np.int64)
    fmom_b = np.zeros((nb, 2))

    def rec(n):
        kernels.record_pair(state, bal, bounds, K, hist_b, imom_b, fmom_b)
        batch_hist[:, n] = hist_b
        batch_fmom[:, n] = fmom_b
        imom[n] = imom_b.sum(axis=0)

    rec(0)
    for n in range(M):
        kernels.advance_pair(
            state, bal, keys, bounds, n * S, (n + 1) * S,
            stay_a, thr_a, rho_a, stay_b, thr_b, rho_b, p.eps,
        )  # fmt: skip
        rec(n + 1)

    return CoupledRun(
        model=m,
        params=p,
        N=N,
        seed=seed,
        dt=dt,
        K=K,
        batch_hist=batch_hist,
        imom=imom,
        batch_fmom=batch_fmom,
        h_a=h_a.values,
        h_b=h_b.values,
    )


@dataclass(frozen=True)
class MaxMinSummary:
    """Atoms and local times of ``X1 v X2`` and ``X1 ^ X2``.

    ``balance`` is the mean of the held time of the maximum at 0 minus
    ``int rho(h_a) 1{X2<0} dL(X1) + int rho(h_b) 1{X1<=0} dL(X2)``.
    """

    times: np.ndarray
    h_max: np.ndarray
    se_max: np.ndarray
    h_min: np.ndarray
    se_min: np.ndarray
    batch_h_max: np.ndarray
    batch_h_min: np.ndarray
    L0_max_mean: np.ndarray
    L0_min_mean: np.ndarray
    balance: np.ndarray
    balance_se: np.ndarray


def max_min_process(run: CoupledRun) -> MaxMinSummary:
    eps, N = run.params.eps, run.N
    h_max, se_max = run.atom(MAX)
    h_min, se_min = run.atom(MIN)
    fm = np.zeros(run.batch_fmom.shape[1:])
    for b in range(run.batches):
        fm += run.batch_fmom[b]
    mean = fm[:, 0] / N
    se = np.sqrt(np.maximum(fm[:, 1] / N - mean * mean, 0.0) / max(N - 1, 1))
    return MaxMinSummary(
        times=run.times,
        h_max=h_max,
        se_max=se_max,
        h_min=h_min,
        se_min=se_min,
        batch_h_max=run.batch_atom(MAX),
        batch_h_min=run.batch_atom(MIN),
        L0_max_mean=eps * run.imom[:, 4] / N,
        L0_min_mean=eps * run.imom[:, 5] / N,
        balance=mean,
        balance_se=se,
    )
