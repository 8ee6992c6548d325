"""Full walk paths and local times read off them.

Paths are kept as integer lattice coordinates. A path of ``T / eps^2``
steps is long, so :func:`simulate_paths` hands them out in chunks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from stickylab.lattice import kernels
from stickylab.lattice.rng import stream_keys
from stickylab.lattice.walk import WalkParams, frozen_coefficients, lattice_site
from stickylab.model import HTable, ModelSpec

__all__ = [
    "TanakaError",
    "PathRecord",
    "PathChunk",
    "simulate_paths",
    "simulate_pair_paths",
    "tanaka_local_time",
    "tanaka_residuals",
    "max_min_paths",
]


class TanakaError(AssertionError):
    """A path broke one of the discrete Tanaka identities."""


@dataclass(frozen=True)
class PathRecord:
    positions: np.ndarray
    n_up_exits: int
    n_down_exits: int
    n_stays: int
    eps: float
    rng_stream: int

    @property
    def L0(self) -> float:
        return 2.0 * self.eps * self.n_up_exits

    @property
    def L0_minus(self) -> float:
        return 2.0 * self.eps * self.n_down_exits


@dataclass(frozen=True)
class PathChunk:
    """Paths of streams ``first_stream .. first_stream + n - 1``.

    ``events`` columns: stays, up exits, down exits.
    """

    positions: np.ndarray
    events: np.ndarray
    eps: float
    first_stream: int

    def __len__(self) -> int:
        return self.positions.shape[0]

    def record(self, i: int) -> PathRecord:
        st, up, down = (int(v) for v in self.events[i])
        return PathRecord(self.positions[i], up, down, st, self.eps, self.first_stream + i)

    def __iter__(self) -> Iterator[PathRecord]:
        return (self.record(i) for i in range(len(self)))


def simulate_paths(
    m: ModelSpec, h: HTable, N: int, p: WalkParams, seed: int, *, chunk: int = 128
) -> Iterator[PathChunk]:
    """Walk ``N`` frozen-``h`` paths, yielding at most *chunk* at a time.

    Path ``i`` uses stream ``i`` of *seed*, the same one it would use in
    :func:`~stickylab.lattice.ensemble.simulate_ensemble`.
    """
    stay, thr, _, _ = frozen_coefficients(m, p, h)
    j0 = lattice_site(m.x, p.eps)
    for first in range(0, N, chunk):
        n = min(chunk, N - first)
        keys = stream_keys(seed, first, n)
        out = np.empty((n, p.steps + 1), dtype=np.int32)
        events = np.empty((n, 3), dtype=np.int64)
        kernels.walk_paths(j0, keys, stay, thr, out, events)
        yield PathChunk(out, events, p.eps, first)


def simulate_pair_paths(
    m: ModelSpec, h_a: HTable, h_b: HTable, N: int, p: WalkParams, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Full coupled paths; the draws match :func:`couple_solutions`."""
    sa, ta, _, _ = frozen_coefficients(m, p, h_a)
    sb, tb, _, _ = frozen_coefficients(m, p, h_b)
    j0 = lattice_site(m.x, p.eps)
    keys = stream_keys(seed, 0, N)
    x1 = np.empty((N, p.steps + 1), dtype=np.int32)
    x2 = np.empty_like(x1)
    kernels.walk_pair_paths(j0, keys, sa, ta, sb, tb, x1, x2)
    return x1, x2


def _tanaka_parts(pos: np.ndarray):
    x = pos.astype(np.int64)
    dx = np.diff(x, axis=-1)
    at0 = x[..., :-1] == 0
    up = np.cumsum(at0 & (dx == 1), axis=-1)
    down = np.cumsum(at0 & (dx == -1), axis=-1)
    plus = np.maximum(x, 0)
    minus = np.maximum(-x, 0)
    right = plus[..., 1:] - plus[..., :1] - np.cumsum((x[..., :-1] > 0) * dx, axis=-1)
    left = minus[..., 1:] - minus[..., :1] + np.cumsum((x[..., :-1] < 0) * dx, axis=-1)
    return up, down, right, left


def tanaka_residuals(pos: np.ndarray) -> np.ndarray:
    """Largest Tanaka mismatch per path, in lattice units (0 when exact).

    Right: ``X_k^+ - X_0^+ - sum 1{X>0} dX`` against the up exits so far.
    Left: ``X_k^- - X_0^- + sum 1{X<0} dX`` against the down exits so far.
    """
    up, down, right, left = _tanaka_parts(pos)
    return np.maximum(np.abs(right - up).max(axis=-1), np.abs(left - down).max(axis=-1))


def tanaka_local_time(path: PathRecord):
    """Cumulative ``L0`` and ``L0_minus`` after each step of *path*.

    Both are counted from the exits at 0 and checked against the
    reconstruction from the positions; any mismatch raises
    :class:`TanakaError`.
    """
    up, down, right, left = _tanaka_parts(path.positions)
    bad = np.flatnonzero((right != up) | (left != down))
    if bad.size:
        raise TanakaError(f"stream {path.rng_stream}: Tanaka identity fails at step {bad[0] + 1}")
    if up.size and (up[-1] != path.n_up_exits or down[-1] != path.n_down_exits):
        raise TanakaError(f"stream {path.rng_stream}: exit counters disagree with the path")
    zero = np.zeros(1)
    L0 = np.concatenate([zero, 2.0 * path.eps * up])
    L0_minus = np.concatenate([zero, 2.0 * path.eps * down])
    return L0, L0_minus


def max_min_paths(x1: np.ndarray, x2: np.ndarray):
    """Pointwise max and min paths with their right local times at 0.

    Local times come from the Tanaka reconstruction and are given in units
    of ``eps``; for these paths they need not be a count of up exits.
    """
    hi = np.maximum(x1, x2)
    lo = np.minimum(x1, x2)

    def local(pos):
        x = pos.astype(np.int64)
        plus = np.maximum(x, 0)
        dx = np.diff(x, axis=-1)
        right = plus[..., 1:] - plus[..., :1] - np.cumsum((x[..., :-1] > 0) * dx, axis=-1)
        return np.concatenate([np.zeros(x.shape[:-1] + (1,), np.int64), 2 * right], axis=-1)

    return hi, lo, local(hi), local(lo)
