"""Discretized weighted path space with exponentially decaying memory.

A path segment is a history window on [-T_mem, 0] sampled on a uniform grid
of step h.  The norm discounts the past through the weight e^{tau*s}, so the
tail beyond T_mem contributes at most e^{-tau*T_mem} * sup|xi| and can be
truncated; every consumer of these norms reports that bound alongside its
results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidCloudError, InvalidSegmentError

__all__ = [
    "PathSpaceConfig",
    "PathSegment",
    "ParticleCloud",
    "SegmentBatch",
    "advance",
    "check_history_inequality",
    "flat_extension",
    "segment_from_csv",
    "segment_to_csv",
    "truncated_norm",
    "truncation_bound",
    "weighted_norm",
]


@dataclass(frozen=True)
class PathSpaceConfig:
    """Grid description of the weighted history space.

    d      state dimension
    tau    decay rate of the norm weight e^{tau*s}, tau > 0
    h      grid step
    T_mem  memory horizon; histories are truncated at s = -T_mem
    """

    d: int
    tau: float
    h: float
    T_mem: float

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {self.d}")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ConfigurationError(f"h must be positive, got {self.h}")
        n = self.T_mem / self.h
        if not np.isclose(n, round(n), atol=1e-9) or round(n) < 1:
            raise ConfigurationError(
                f"T_mem={self.T_mem} must be a positive multiple of h={self.h}"
            )

    @property
    def n_steps(self) -> int:
        """Number of grid intervals in the window."""
        return int(round(self.T_mem / self.h))

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def s_grid(self) -> np.ndarray:
        """Grid points -T_mem, -T_mem + h, ..., 0."""
        return -self.T_mem + self.h * np.arange(self.n_points)

    @property
    def weights(self) -> np.ndarray:
        """Norm weights e^{tau*s} on the grid, oldest first."""
        return np.exp(self.tau * self.s_grid)

    def grid_index(self, N: float) -> int:
        """Number of grid steps in a truncation horizon N (must sit on the grid)."""
        m = N / self.h
        if not np.isclose(m, round(m), atol=1e-9):
            raise ConfigurationError(f"N={N} is not a multiple of h={self.h}")
        return int(round(m))


def truncation_bound(config: PathSpaceConfig, sup_value: float = 1.0) -> float:
    """Upper bound e^{-tau*T_mem} * sup|xi| on the neglected tail of the norm."""
    return float(np.exp(-config.tau * config.T_mem) * sup_value)


def _as_values(config: PathSpaceConfig, values) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape != (config.n_points, config.d):
        raise InvalidSegmentError(
            f"expected values of shape {(config.n_points, config.d)}, got {vals.shape}"
        )
    if not np.all(np.isfinite(vals)):
        raise InvalidSegmentError("segment contains non-finite entries")
    return vals


@dataclass(frozen=True)
class PathSegment:
    """History window: values[i] = xi(-T_mem + i*h); the last entry is xi(0)."""

    config: PathSpaceConfig
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _as_values(self.config, self.values)
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, config: PathSpaceConfig) -> "PathSegment":
        return cls(config, np.zeros((config.n_points, config.d)))

    @classmethod
    def constant(cls, config: PathSpaceConfig, x) -> "PathSegment":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(config, np.tile(x, (config.n_points, 1)))

    @classmethod
    def from_function(cls, config: PathSpaceConfig, f) -> "PathSegment":
        vals = np.stack([np.atleast_1d(f(s)) for s in config.s_grid])
        return cls(config, vals)

    def endpoint(self) -> np.ndarray:
        return self.values[-1]

    def exp_weighted_integral(self, rate: float) -> np.ndarray:
        """h * sum_i e^{rate*s_i} xi(s_i), a discounted history integral."""
        w = np.exp(rate * self.config.s_grid)
        return self.config.h * (w @ self.values)

    def __add__(self, other: "PathSegment") -> "PathSegment":
        if other.config != self.config:
            raise ConfigurationError("segments live on different grids")
        return PathSegment(self.config, self.values + other.values)

    def __sub__(self, other: "PathSegment") -> "PathSegment":
        if other.config != self.config:
            raise ConfigurationError("segments live on different grids")
        return PathSegment(self.config, self.values - other.values)

    def __mul__(self, c: float) -> "PathSegment":
        return PathSegment(self.config, self.values * float(c))

    __rmul__ = __mul__


def flat_extension(seg: PathSegment) -> PathSegment:
    """The segment xi^0 with xi^0(r) = xi(0) for all r."""
    return PathSegment.constant(seg.config, seg.endpoint())


def weighted_norm(seg: PathSegment) -> float:
    """max over the grid of e^{tau*s} |xi(s)| (Euclidean norm in R^d)."""
    if not np.all(np.isfinite(seg.values)):
        raise InvalidSegmentError("segment contains non-finite entries")
    mags = np.linalg.norm(seg.values, axis=-1)
    return float(np.max(seg.config.weights * mags))


def truncated_norm(seg: PathSegment, N: float) -> float:
    """max over s in [-N, 0] of e^{tau*s} |xi(s)|; equals weighted_norm at N = T_mem."""
    cfg = seg.config
    if not (0 < N <= cfg.T_mem + 1e-12):
        raise ConfigurationError(f"need 0 < N <= T_mem, got N={N}")
    m = cfg.grid_index(min(N, cfg.T_mem))
    mags = np.linalg.norm(seg.values[cfg.n_steps - m :], axis=-1)
    return float(np.max(cfg.weights[cfg.n_steps - m :] * mags))


def advance(seg: PathSegment, new_value) -> PathSegment:
    """Shift the window one grid step and append new_value at s = 0."""
    x = np.atleast_1d(np.asarray(new_value, dtype=float))
    if x.shape != (seg.config.d,):
        raise InvalidSegmentError(f"new value has shape {x.shape}, expected ({seg.config.d},)")
    if not np.all(np.isfinite(x)):
        raise InvalidSegmentError("new value is not finite")
    vals = np.concatenate([seg.values[1:], x[None, :]], axis=0)
    return PathSegment(seg.config, vals)


def check_history_inequality(
    seg0: PathSegment, future_values, p: float, rtol: float = 1e-12
) -> bool:
    """Check the sup-splitting bound for the weighted norm along a trajectory.

    For every grid time t in [0, len(future)*h] it verifies

        e^{p*tau*t} ||X_t||_tau^p <= ||X_0||_tau^p + max_{s in [0,t]} e^{p*tau*s} |X(s)|^p

    up to the truncation tolerance e^{-p*tau*T_mem} * max|X|^p.
    """
    if p <= 0:
        raise ConfigurationError(f"p must be positive, got {p}")
    cfg = seg0.config
    fut = np.asarray(future_values, dtype=float)
    if fut.size == 0:
        return True
    if fut.ndim == 1:
        fut = fut[:, None]
    # Full trajectory on the grid u in [-T_mem, t_max].
    full = np.concatenate([seg0.values, fut], axis=0)
    n_fut = fut.shape[0]
    u = -cfg.T_mem + cfg.h * np.arange(full.shape[0])
    g = np.exp(p * cfg.tau * u) * np.linalg.norm(full, axis=-1) ** p
    norm0_p = np.max(g[: cfg.n_points])
    tol = truncation_bound(cfg, np.max(np.linalg.norm(full, axis=-1)) ** p)
    # g restricted to u >= 0, cumulative max gives the second sup.
    run_max = np.maximum.accumulate(g[cfg.n_steps :])
    # Windowed max of g over [t - T_mem, t] gives e^{p tau t} ||X_t||^p.
    windows = np.lib.stride_tricks.sliding_window_view(g, cfg.n_points)
    lhs = windows.max(axis=-1)[1 : n_fut + 1]
    rhs = norm0_p + run_max[1:]
    return bool(np.all(lhs <= rhs + tol + rtol * (1.0 + rhs)))


# ---------------------------------------------------------------------------
# Ensembles


class ParticleCloud:
    """Weighted ensemble of path segments approximating a law on path space."""

    def __init__(self, config: PathSpaceConfig, values, weights=None):
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3 or vals.shape[1:] != (config.n_points, config.d):
            raise InvalidCloudError(
                f"cloud values must have shape (N, {config.n_points}, {config.d})"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidCloudError("cloud contains non-finite entries")
        n = vals.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,) or np.any(w < 0):
                raise InvalidCloudError("weights must be nonnegative with one entry per particle")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InvalidCloudError(f"weights sum to {w.sum()}, expected 1")
        self.config = config
        self.values = vals
        self.weights = w

    @classmethod
    def from_segments(cls, segments, weights=None) -> "ParticleCloud":
        if not segments:
            raise InvalidCloudError("empty cloud")
        cfg = segments[0].config
        if any(s.config != cfg for s in segments):
            raise InvalidCloudError("segments live on different grids")
        return cls(cfg, np.stack([s.values for s in segments]), weights)

    @classmethod
    def point_mass(cls, seg: PathSegment, n: int = 1) -> "ParticleCloud":
        return cls(seg.config, np.repeat(seg.values[None], n, axis=0))

    def __len__(self) -> int:
        return self.values.shape[0]

    def particle(self, i: int) -> PathSegment:
        return PathSegment(self.config, self.values[i])

    def endpoints(self) -> np.ndarray:
        return self.values[:, -1, :]

    def mean_endpoint(self) -> np.ndarray:
        return self.weights @ self.endpoints()

    def norms(self) -> np.ndarray:
        """Weighted path norm of every particle."""
        mags = np.linalg.norm(self.values, axis=-1)
        return np.max(self.config.weights[None, :] * mags, axis=-1)


class SegmentBatch:
    """Mutable ring-buffer batch of segments; the workhorse of the simulators.

    values has shape (R, n_points, d); `head` is the slot holding s = 0.
    Unlike PathSegment this type is mutated in place, so it is never shared
    across threads; snapshots are taken for anything that escapes a simulation.
    """

    def __init__(self, config: PathSpaceConfig, values):
        vals = np.array(values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3 or vals.shape[1:] != (config.n_points, config.d):
            raise InvalidSegmentError(
                f"batch values must have shape (R, {config.n_points}, {config.d})"
            )
        self.config = config
        self.values = vals
        self.head = config.n_steps  # ordered layout on construction

    @classmethod
    def from_segment(cls, seg: PathSegment, n: int) -> "SegmentBatch":
        return cls(seg.config, np.repeat(seg.values[None], n, axis=0))

    @classmethod
    def from_cloud(cls, cloud: ParticleCloud) -> "SegmentBatch":
        return cls(cloud.config, cloud.values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def _order(self) -> np.ndarray:
        n1 = self.config.n_points
        return (self.head + 1 + np.arange(n1)) % n1

    def ordered_values(self) -> np.ndarray:
        """Copy of the buffer with the oldest sample first."""
        return self.values[:, self._order(), :]

    def endpoint(self) -> np.ndarray:
        return self.values[:, self.head, :]

    def advance(self, new_values: np.ndarray) -> None:
        n1 = self.config.n_points
        self.head = (self.head + 1) % n1
        self.values[:, self.head, :] = new_values

    def weighted_norm(self) -> np.ndarray:
        w = self.config.weights[self._order().argsort()]
        # w above is the weight of each physical slot; equivalent to rolling.
        mags = np.linalg.norm(self.values, axis=-1)
        return np.max(w[None, :] * mags, axis=-1)

    def exp_weighted_integral(self, rate: float) -> np.ndarray:
        w = np.exp(rate * self.config.s_grid)[self._order().argsort()]
        return self.config.h * np.einsum("j,rjd->rd", w, self.values)

    def map_values(self, fn) -> "SegmentBatch":
        """New batch with fn applied to the flattened (M, d) value array."""
        flat = self.values.reshape(-1, self.config.d)
        out = fn(flat).reshape(self.values.shape)
        batch = SegmentBatch(self.config, out)
        batch.head = self.head
        return batch

    def to_cloud(self, weights=None) -> ParticleCloud:
        return ParticleCloud(self.config, self.ordered_values(), weights)

    def segment(self, i: int) -> PathSegment:
        return PathSegment(self.config, self.values[i][self._order()])


# ---------------------------------------------------------------------------
# Serialization


def segment_to_csv(seg: PathSegment, path) -> None:
    """Write a segment as CSV: header s,x1,...,xd; rows from s=-T_mem to s=0."""
    cfg = seg.config
    ndec = max(0, int(np.ceil(-np.log10(cfg.h))) + 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s"] + [f"x{j + 1}" for j in range(cfg.d)])
        for s, row in zip(cfg.s_grid, seg.values):
            writer.writerow([f"{s:.{ndec}f}"] + [repr(float(v)) for v in row])


def segment_from_csv(path, tau: float) -> PathSegment:
    """Read a segment written by segment_to_csv; tau is not stored in the file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 1
        s_vals, rows = [], []
        for rec in reader:
            s_vals.append(float(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    s_vals = np.asarray(s_vals)
    if len(s_vals) < 2:
        raise InvalidSegmentError("need at least two grid rows")
    h = float(-s_vals[0] / (len(s_vals) - 1))
    cfg = PathSpaceConfig(d=d, tau=tau, h=h, T_mem=float(-s_vals[0]))
    return PathSegment(cfg, np.asarray(rows))
