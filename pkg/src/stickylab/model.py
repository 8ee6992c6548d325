"""Problem instances and the tabulated boundary probability ``h``."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from stickylab.funcspec import DomainError, FuncExpr, parse

__all__ = [
    "HypothesisError",
    "SingularTransformError",
    "ModelSpec",
    "HTable",
    "Origin",
    "NegatedCoefficients",
    "build_model",
    "negate_coefficients",
    "negate_transform",
    "read_htable_csv",
    "write_htable_csv",
]

ALPHA_SAMPLES = 10_000
RHO_SAMPLES = 1001
DEFAULT_DELTA = 1e-6


class HypothesisError(ValueError):
    """A model coefficient violates ``0 <= alpha <= 1/2`` or ``rho > 0``."""


class SingularTransformError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Start point, horizon and the two coefficient functions.

    ``alpha_cap`` and ``rho_floor`` are the max of ``alpha`` and the min of
    ``rho`` over the sampling grids used to validate them; ``rho_lipschitz``
    is the largest difference quotient of ``rho`` on its grid.
    """

    x: float
    T: float
    alpha: FuncExpr
    rho: FuncExpr
    alpha_cap: float
    rho_floor: float
    rho_lipschitz: float
    delta: float = DEFAULT_DELTA

    def alpha_at(self, t):
        return self.alpha(t)

    def rho_at(self, u):
        return self.rho(u)

    def digest(self) -> str:
        """Short stable hash of the instance, for run provenance."""
        key = f"x={self.x!r};T={self.T!r};alpha={self.alpha.text};rho={self.rho.text}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def _as_expr(value: str | FuncExpr, variable: str) -> FuncExpr:
    if isinstance(value, FuncExpr):
        if value.variable != variable:
            raise ValueError(
                f"expected an expression in {variable!r}, got one in {value.variable!r}"
            )
        return value
    return parse(str(value), variable)


def build_model(config: Mapping[str, Any]) -> ModelSpec:
    """Validate a problem instance.

    *config* needs ``x``, ``T``, ``alpha`` (text or :class:`FuncExpr` in
    ``t``) and ``rho`` (in ``u``); ``delta`` is optional. ``alpha`` is sampled
    at 10^4 points of ``[0, T]`` and ``rho`` at 1001 points of ``[0, 1]``;
    the first offending sample is named in the error.
    """
    missing = [k for k in ("x", "T", "alpha", "rho") if k not in config]
    if missing:
        raise KeyError(f"model is missing {', '.join(missing)}")

    x = float(config["x"])
    T = float(config["T"])
    delta = float(config.get("delta", DEFAULT_DELTA))
    if not np.isfinite(x):
        raise ValueError(f"start point must be finite, got {x}")
    if not (np.isfinite(T) and T > 0):
        raise ValueError(f"horizon T must be positive, got {T}")
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")

    alpha = _as_expr(config["alpha"], "t")
    rho = _as_expr(config["rho"], "u")

    ts = np.linspace(0.0, T, ALPHA_SAMPLES)
    try:
        a = alpha(ts)
    except DomainError as exc:
        raise HypothesisError(f"alpha(t) = {alpha.text} is undefined on [0, T]") from exc
    bad = np.flatnonzero((a < 0) | (a > 0.5))
    if bad.size:
        i = bad[0]
        which = "exceeds 1/2" if a[i] > 0.5 else "is negative"
        raise HypothesisError(
            f"alpha {which} at t={ts[i]:.6g} (alpha={a[i]:.6g}); "
            "the model requires 0 <= alpha(t) <= 1/2"
        )

    us = np.linspace(0.0, 1.0, RHO_SAMPLES)
    try:
        r = rho(us)
    except DomainError as exc:
        raise HypothesisError(f"rho(u) = {rho.text} is undefined on [0, 1]") from exc
    bad = np.flatnonzero(r <= 0)
    if bad.size:
        i = bad[0]
        raise HypothesisError(
            f"rho is not strictly positive at u={us[i]:.6g} (rho={r[i]:.6g}); "
            "the model requires rho > 0 on [0, 1]"
        )
    lip = float(np.max(np.abs(np.diff(r)) / np.diff(us)))
    if not np.isfinite(lip):
        raise HypothesisError("rho has no finite Lipschitz bound on [0, 1]")

    return ModelSpec(
        x=x,
        T=T,
        alpha=alpha,
        rho=rho,
        alpha_cap=float(a.max()),
        rho_floor=float(r.min()),
        rho_lipschitz=lip,
        delta=delta,
    )


# {{{ h tables


class Origin(str, Enum):
    SOLVER = "solver"
    MONTE_CARLO = "monte_carlo"
    EXTERNAL = "external"


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HTable:
    """``h(t) = P(X_t = 0)`` on the uniform grid ``t_n = n * dt``.

    ``flags`` marks nodes where the solver fell back from the bracketed root;
    ``meta`` carries provenance such as the iteration log of a particle
    fixed point.
    """

    dt: float
    values: np.ndarray
    residuals: np.ndarray
    origin: Origin = Origin.SOLVER
    flags: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        values = _frozen(self.values)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("an h table needs at least two nodes")
        if np.any((values < 0) | (values > 1)) or not np.all(np.isfinite(values)):
            raise ValueError("h values must lie in [0, 1]")
        residuals = _frozen(self.residuals)
        if residuals.shape != values.shape:
            raise ValueError("residuals and values differ in length")
        flags = np.zeros(values.shape, dtype=bool) if self.flags is None else self.flags
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "residuals", residuals)
        object.__setattr__(self, "flags", _frozen(flags, bool))
        object.__setattr__(self, "origin", Origin(self.origin))

    @property
    def M(self) -> int:
        """Index of the last node."""
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dt

    @property
    def T(self) -> float:
        return self.M * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of time *t*; *t* must be a node."""
        n = int(round(t / self.dt))
        if not 0 <= n <= self.M or abs(n * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a node of the grid dt={self.dt}")
        return n

    def check_initial(self, x: float) -> None:
        expected = 1.0 if x == 0 else 0.0
        if self.values[0] != expected:
            raise ValueError(
                f"h(0) must be {expected} for start point x={x}, got {self.values[0]}"
            )

    def same_grid(self, other: HTable) -> bool:
        return self.M == other.M and abs(self.dt - other.dt) <= 1e-12 * self.dt


def write_htable_csv(table: HTable, path: str | Path | None = None) -> str:
    """Write ``t,h,residual`` rows with 17 significant digits.

    Returns the CSV text; also writes it to *path* when given.
    """
    buf = io.StringIO()
    buf.write("t,h,residual\n")
    for t, h, r in zip(table.times, table.values, table.residuals):
        buf.write(f"{t:.17g},{h:.17g},{r:.17g}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_htable_csv(path: str | Path, origin: Origin = Origin.EXTERNAL) -> HTable:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != ["t", "h", "residual"]:
        raise ValueError(f"{path}: expected header 't,h,residual'")
    data = np.array([[float(c) for c in row] for row in rows[1:] if row], dtype=float)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows")
    t = data[:, 0]
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-15) or abs(t[0]) > 1e-15:
        raise ValueError(f"{path}: times must form a uniform grid starting at 0")
    return HTable(dt=float(dt), values=data[:, 1], residuals=data[:, 2], origin=origin)


# }}}


# {{{ negation transform


@dataclass(frozen=True)
class NegatedCoefficients:
    """Coefficients of ``Y = -X`` on the grid of an h table."""

    times: np.ndarray
    alpha: np.ndarray
    varrho: np.ndarray


def negate_coefficients(alpha, varrho, delta: float = 0.0):
    """Map ``(alpha, varrho)`` to ``(-alpha/(1-2alpha), varrho/(1-2alpha))``.

    The map is its own inverse wherever it is defined.
    """
    alpha = np.asarray(alpha, dtype=float)
    varrho = np.asarray(varrho, dtype=float)
    gap = 1.0 - 2.0 * alpha
    bad = np.flatnonzero(~(gap >= delta) | (gap <= 0))
    if bad.size:
        i = bad[0]
        raise SingularTransformError(
            f"1 - 2*alpha = {gap.flat[i]:.3g} is below delta={delta:g} at sample {i}"
        )
    return -alpha / gap, varrho / gap


def negate_transform(m: ModelSpec, h: HTable) -> NegatedCoefficients:
    t = h.times
    a = np.broadcast_to(np.asarray(m.alpha(t), dtype=float), t.shape)
    r = np.broadcast_to(np.asarray(m.rho(h.values), dtype=float), t.shape)
    at, vr = negate_coefficients(a, r, delta=m.delta)
    return NegatedCoefficients(times=t, alpha=at, varrho=vr)


# }}}
