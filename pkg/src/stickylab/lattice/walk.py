"""Transition probabilities of the sticky skew walk on ``eps * Z``.

Off 0 the walk is a simple symmetric random walk with time step ``eps^2``.
At 0 it is held with probability ``q = rho / (rho + (1 - alpha) eps)`` and
otherwise leaves upward with probability ``u = 1 / (2 (1 - alpha))``.

With ``L = 2 eps * #(up exits)`` one visit to 0 contributes on average
``eps (2u - 1) = alpha * 2 eps u`` to the displacement, which is the drift
``alpha dL``, and ``eps^2 q / (1 - q) = rho * 2 eps u`` to the held time,
which is the sojourn identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stickylab.lattice.kernels import EXIT_DOWN, EXIT_UP, MOVE, STAY, walk_step
from stickylab.model import HTable, ModelSpec

__all__ = [
    "GridMismatchError",
    "WalkParams",
    "StepResult",
    "exit_up_prob",
    "stay_prob",
    "step",
    "lattice_site",
]

EVENT_NAMES = {MOVE: "move", STAY: "stay", EXIT_UP: "exit_up", EXIT_DOWN: "exit_down"}


class GridMismatchError(ValueError):
    """A time or space grid is not commensurate with the lattice."""


def exit_up_prob(alpha):
    """``u = 1 / (2 (1 - alpha))``; ``1/2`` at ``alpha = 0`` and ``1`` at ``1/2``."""
    return 0.5 / (1.0 - np.asarray(alpha, dtype=float))


def stay_prob(rho, alpha, eps: float):
    return np.asarray(rho, dtype=float) / (
        np.asarray(rho, dtype=float) + (1.0 - np.asarray(alpha, dtype=float)) * eps
    )


def _ratio(a: float, b: float, what: str) -> int:
    n = int(round(a / b))
    if n < 1 or abs(n * b - a) > 1e-9 * max(abs(a), 1.0):
        raise GridMismatchError(f"{what}: {a!r} is not an integer multiple of {b!r}")
    return n


def lattice_site(x: float, eps: float) -> int:
    """Lattice coordinate of the start point *x*, which must lie on ``eps * Z``."""
    j = int(round(x / eps))
    if abs(j * eps - x) > 1e-9 * max(abs(x), eps):
        raise GridMismatchError(f"start point {x!r} is not on the lattice eps={eps!r}")
    return j


@dataclass(frozen=True)
class WalkParams:
    """Lattice spacing and number of steps; one step lasts ``eps^2``."""

    eps: float
    steps: int

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps}")

    @classmethod
    def for_model(cls, m: ModelSpec, eps: float) -> WalkParams:
        return cls(eps=float(eps), steps=_ratio(m.T, eps * eps, "horizon T over eps^2"))

    @property
    def step_time(self) -> float:
        return self.eps * self.eps

    @property
    def T(self) -> float:
        return self.steps * self.step_time

    def step_times(self) -> np.ndarray:
        """Left endpoints of all steps."""
        return np.arange(self.steps) * self.step_time

    def steps_per_cell(self, dt: float) -> int:
        """Walk steps per cell of a time grid of spacing *dt*."""
        S = _ratio(dt, self.step_time, "grid spacing dt over eps^2")
        if self.steps % S:
            raise GridMismatchError(f"dt={dt!r} does not divide the horizon of the walk")
        return S

    def exit_up_prob(self, alpha):
        return exit_up_prob(alpha)

    def stay_prob(self, rho, alpha):
        return stay_prob(rho, alpha, self.eps)


@dataclass(frozen=True)
class StepResult:
    site: int
    event: str

    def position(self, eps: float) -> float:
        return self.site * eps


def step(site: int, k: int, h_now: float, m: ModelSpec, p: WalkParams, draw: float) -> StepResult:
    """Advance one walker at lattice site *site* by step number *k*.

    ``alpha`` is taken at the left endpoint ``k eps^2`` and ``rho`` at
    *h_now*. This is the same transition the compiled ensembles use.
    """
    if not 0.0 <= h_now <= 1.0:
        raise ValueError(f"h_now must lie in [0, 1], got {h_now}")
    a = float(m.alpha(k * p.step_time))
    q = float(p.stay_prob(m.rho(h_now), a))
    thr = q + (1.0 - q) * float(exit_up_prob(a))
    j, ev = walk_step(int(site), float(draw), q, thr)
    return StepResult(int(j), EVENT_NAMES[int(ev)])


def step_coefficients(m: ModelSpec, p: WalkParams, h_steps, rho_values=None):
    """Per-step ``(stay, up threshold, rho, alpha)`` arrays.

    *h_steps* is the value of ``h`` driving each step; *rho_values* may pass
    ``rho(h_steps)`` when it is already known.
    """
    alpha = np.broadcast_to(np.asarray(m.alpha(p.step_times()), dtype=float), (p.steps,))
    rho = m.rho(h_steps) if rho_values is None else rho_values
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (p.steps,))
    stay = p.stay_prob(rho, alpha)
    thr = stay + (1.0 - stay) * exit_up_prob(alpha)
    return (
        np.ascontiguousarray(stay),
        np.ascontiguousarray(thr),
        np.ascontiguousarray(rho),
        np.ascontiguousarray(alpha),
    )


def frozen_coefficients(m: ModelSpec, p: WalkParams, h: HTable):
    """Per-step coefficients for a walk driven by a fixed table.

    ``h`` is interpolated linearly between table nodes at the start of each
    step. Holding it at the left end of a cell instead lags ``rho`` behind
    the steep initial drop of ``h`` and biases the atom low.
    """
    S = p.steps_per_cell(h.dt)
    if h.M * S != p.steps:
        raise GridMismatchError(
            f"h table covers {h.T:g} but the walk runs to {p.T:g}"
        )
    h_steps = np.interp(p.step_times(), h.times, h.values)
    return step_coefficients(m, p, h_steps)
