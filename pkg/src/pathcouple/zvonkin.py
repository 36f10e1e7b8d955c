"""Resolvent-equation transform removing a bounded Dini drift.

Solves (b0 . grad + 0.5 tr{a grad^2} - lambda) u = -b0 on a box with the
drift extended constantly outside, builds Theta(x) = x + u(x) together with
its inverse, and produces the transformed drift/diffusion pair.  The box must
contain the region the simulation visits; callers report the escaping mass.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import lil_matrix
from scipy.sparse.linalg import spsolve

from .coefficients import CoefficientSet
from .errors import (
    ConfigurationError,
    LambdaExhaustedError,
    OutOfDomainError,
    SolverFailureError,
)
from .pathspace import PathSegment, SegmentBatch

__all__ = [
    "EllipticGrid",
    "ZvonkinMap",
    "default_lambda_grid",
    "export_map_csv",
    "path_lipschitz_certificate",
    "select_lambda",
    "solve_resolvent",
    "theta",
    "theta_inv",
    "transformed_coeffs",
]

RESIDUAL_TOL = 1e-8  # relative to 1 + ||b0||_inf
PICARD_TOL = 1e-12


@dataclass(frozen=True)
class EllipticGrid:
    """Uniform box grid [-L, L]^dimension with mesh step dx."""

    dimension: int
    L: float
    dx: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigurationError("elliptic solves support dimension 1 or 2 only")
        m = self.L / self.dx
        if not np.isclose(m, round(m), atol=1e-9) or round(m) < 2:
            raise ConfigurationError(f"L={self.L} must be an integer multiple of dx={self.dx}")

    @property
    def axis(self) -> np.ndarray:
        n = int(round(2 * self.L / self.dx))
        return -self.L + self.dx * np.arange(n + 1)

    @property
    def n_axis(self) -> int:
        return len(self.axis)

    def nodes(self) -> np.ndarray:
        if self.dimension == 1:
            return self.axis[:, None]
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)


@dataclass
class ZvonkinMap:
    """Grid solution of the resolvent equation and the induced transform."""

    grid: EllipticGrid
    lam: float
    u: np.ndarray  # (n_nodes..., d)
    grad_u: np.ndarray  # (n_nodes..., d, dimension)
    u_inf: float
    grad_inf: float
    hess_inf: float
    residual: float
    sweep: list = field(default_factory=list)  # (lambda, ||u|| + ||grad u||) pairs
    eval_count: int = 0  # extended-evaluation bookkeeping: how much simulated
    escape_count: int = 0  # mass leaves the box (u is constant outside it)

    @property
    def smallness(self) -> float:
        return self.u_inf + self.grad_inf

    @property
    def escape_fraction(self) -> float:
        return self.escape_count / self.eval_count if self.eval_count else 0.0

    def _clip_counted(self, x: np.ndarray) -> np.ndarray:
        L = self.grid.L
        self.eval_count += max(x.size // max(x.shape[-1], 1), 1)
        self.escape_count += int(np.count_nonzero(np.any(np.abs(x) > L, axis=-1)))
        return np.clip(x, -L, L)

    def _interp_values(self, table: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of a per-node table at points x (..., dim)."""
        g = self.grid
        if g.dimension == 1:
            q = x[..., 0]
            flat = table.reshape(g.n_axis, -1)
            out = np.stack([np.interp(q, g.axis, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
            return out.reshape(x.shape[:-1] + table.shape[1:])
        from scipy.interpolate import RegularGridInterpolator

        tab = table.reshape(g.n_axis, g.n_axis, -1)
        itp = RegularGridInterpolator((g.axis, g.axis), tab, method="linear")
        out = itp(x.reshape(-1, 2))
        return out.reshape(x.shape[:-1] + table.shape[1:])

    def _require_in_box(self, x: np.ndarray) -> None:
        if np.any(np.abs(x) > self.grid.L + 1e-12):
            worst = float(np.max(np.abs(x)))
            raise OutOfDomainError(f"point with |coordinate| = {worst} outside box L = {self.grid.L}")

    def u_at(self, x: np.ndarray) -> np.ndarray:
        return self._interp_values(self.u, x)

    def grad_u_at(self, x: np.ndarray) -> np.ndarray:
        return self._interp_values(self.grad_u, x)


def default_lambda_grid(coeffs: CoefficientSet, n: int = 20) -> np.ndarray:
    """Geometric sweep from twice to a thousand times the drift bound."""
    base = max(coeffs.b0_bound, 1e-6)
    return np.geomspace(2 * base, 1e3 * base, n)


def _diffusion_on_axis(coeffs: CoefficientSet, points: np.ndarray) -> np.ndarray:
    sig = coeffs.eval_sigma(points)
    return sig @ np.swapaxes(sig, -1, -2)


def _solve_1d(coeffs: CoefficientSet, grid: EllipticGrid, lam: float):
    x = grid.axis[:, None]
    n = grid.n_axis
    dx = grid.dx
    b0 = coeffs.eval_b0(x)  # (n, d)
    a = _diffusion_on_axis(coeffs, x)[:, 0, 0]  # (n,)
    adv = b0[:, 0]  # advection coefficient; same scalar operator per component

    lower = a[1:-1] / (2 * dx**2) - adv[1:-1] / (2 * dx)
    diag = -a[1:-1] / dx**2 - lam
    upper = a[1:-1] / (2 * dx**2) + adv[1:-1] / (2 * dx)

    ab = np.zeros((3, n))
    ab[1, 0] = ab[1, -1] = 1.0
    ab[1, 1:-1] = diag
    ab[0, 2:] = upper  # superdiagonal
    ab[2, :-2] = lower  # subdiagonal

    rhs = np.empty((n, coeffs.d))
    rhs[1:-1] = -b0[1:-1]
    rhs[0] = b0[0] / lam  # Dirichlet far field of the constant-extension problem
    rhs[-1] = b0[-1] / lam

    u = solve_banded((1, 1), ab, rhs)

    # Residual of the discrete operator at interior nodes.
    op = (
        adv[1:-1, None] * (u[2:] - u[:-2]) / (2 * dx)
        + a[1:-1, None] * (u[2:] - 2 * u[1:-1] + u[:-2]) / (2 * dx**2)
        - lam * u[1:-1]
    )
    residual = float(np.max(np.abs(op + b0[1:-1])))

    grad = np.gradient(u, dx, axis=0)[..., None]  # (n, d, 1)
    hess = np.zeros_like(u)
    hess[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2
    hess_inf = float(np.max(np.abs(hess)))
    return u, grad, residual, hess_inf


def _solve_2d(coeffs: CoefficientSet, grid: EllipticGrid, lam: float):
    ax = grid.axis
    n = grid.n_axis
    dx = grid.dx
    pts = grid.nodes()
    b0 = coeffs.eval_b0(pts)  # (n*n, d)
    a = _diffusion_on_axis(coeffs, pts)  # (n*n, 2, 2)

    def idx(i, j):
        return i * n + j

    A = lil_matrix((n * n, n * n))
    rhs = np.zeros((n * n, coeffs.d))
    for i in range(n):
        for j in range(n):
            p = idx(i, j)
            if i in (0, n - 1) or j in (0, n - 1):
                A[p, p] = 1.0
                rhs[p] = b0[p] / lam
                continue
            a11, a12, a22 = a[p, 0, 0], a[p, 0, 1], a[p, 1, 1]
            bx, by = b0[p, 0], b0[p, 1] if coeffs.d > 1 else 0.0
            A[p, p] = -a11 / dx**2 - a22 / dx**2 - lam
            A[p, idx(i + 1, j)] = a11 / (2 * dx**2) + bx / (2 * dx)
            A[p, idx(i - 1, j)] = a11 / (2 * dx**2) - bx / (2 * dx)
            A[p, idx(i, j + 1)] = a22 / (2 * dx**2) + by / (2 * dx)
            A[p, idx(i, j - 1)] = a22 / (2 * dx**2) - by / (2 * dx)
            c = a12 / (4 * dx**2)
            A[p, idx(i + 1, j + 1)] = A[p, idx(i + 1, j + 1)] + c
            A[p, idx(i - 1, j - 1)] = A[p, idx(i - 1, j - 1)] + c
            A[p, idx(i + 1, j - 1)] = A[p, idx(i + 1, j - 1)] - c
            A[p, idx(i - 1, j + 1)] = A[p, idx(i - 1, j + 1)] - c
            rhs[p] = -b0[p]
    A = A.tocsr()
    u = np.column_stack([spsolve(A, rhs[:, k]) for k in range(coeffs.d)])

    interior = np.ones(n * n, dtype=bool)
    mask = np.zeros((n, n), dtype=bool)
    mask[1:-1, 1:-1] = True
    interior = mask.ravel()
    residual = float(np.max(np.abs((A @ u - rhs)[interior])))

    u_grid = u.reshape(n, n, coeffs.d)
    gx = np.gradient(u_grid, dx, axis=0)
    gy = np.gradient(u_grid, dx, axis=1)
    grad = np.stack([gx, gy], axis=-1).reshape(n * n, coeffs.d, 2)
    hxx = np.abs(np.diff(u_grid, 2, axis=0)).max() / dx**2
    hyy = np.abs(np.diff(u_grid, 2, axis=1)).max() / dx**2
    return u, grad, residual, float(max(hxx, hyy))


def solve_resolvent(coeffs: CoefficientSet, grid: EllipticGrid, lam: float) -> ZvonkinMap:
    """Solve the resolvent equation for u at a fixed lambda > 0."""
    if lam <= 0:
        raise ConfigurationError(f"lambda must be positive, got {lam}")
    if grid.dimension != coeffs.d:
        raise ConfigurationError(
            f"grid dimension {grid.dimension} != coefficient dimension {coeffs.d}"
        )
    if grid.dimension == 1:
        u, grad, residual, hess_inf = _solve_1d(coeffs, grid, lam)
    else:
        u, grad, residual, hess_inf = _solve_2d(coeffs, grid, lam)

    tol = RESIDUAL_TOL * (1.0 + coeffs.b0_bound)
    if residual > tol:
        raise SolverFailureError(
            f"resolvent residual {residual:.3e} above tolerance {tol:.3e}", residual=residual
        )
    u_inf = float(np.max(np.linalg.norm(u, axis=-1)))
    grad_inf = float(np.max(np.linalg.norm(grad, ord=2, axis=(-2, -1))))
    return ZvonkinMap(
        grid=grid,
        lam=float(lam),
        u=u,
        grad_u=grad,
        u_inf=u_inf,
        grad_inf=grad_inf,
        hess_inf=hess_inf,
        residual=residual,
    )


def select_lambda(coeffs: CoefficientSet, grid: EllipticGrid, lambda_grid) -> ZvonkinMap:
    """Smallest lambda in the sweep with ||u|| + ||grad u|| <= 1/2."""
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0:
        raise ConfigurationError("lambda_grid is empty")
    sweep = []
    chosen = None
    for lam in lambda_grid:
        zmap = solve_resolvent(coeffs, grid, lam)
        sweep.append((float(lam), zmap.smallness))
        if chosen is None and zmap.smallness <= 0.5:
            chosen = zmap
    if chosen is None:
        raise LambdaExhaustedError(
            f"no lambda in [{lambda_grid[0]:.3g}, {lambda_grid[-1]:.3g}] reaches "
            f"||u|| + ||grad u|| <= 1/2 (best {min(s for _, s in sweep):.3g})"
        )
    chosen.sweep = sweep
    return chosen


def theta(zmap: ZvonkinMap, x) -> np.ndarray:
    """Theta(x) = x + u(x) with multilinear interpolation of u."""
    x = np.asarray(x, dtype=float)
    zmap._require_in_box(x)
    return x + zmap.u_at(x)


def theta_inv(zmap: ZvonkinMap, y, max_iter: int = 200, extend: bool = False) -> np.ndarray:
    """Fixed point of x = y - u(x); contraction factor <= 1/2 by smallness.

    With ``extend=True`` points outside the box use the constant extension of
    u (flat far field) instead of raising, and the escaped mass is counted.
    """
    y = np.asarray(y, dtype=float)
    if extend:
        zmap._clip_counted(y)
    else:
        zmap._require_in_box(y)
    L = zmap.grid.L
    x = y.copy()
    for _ in range(max_iter):
        # Clip iterates to the box: u is constant outside by construction.
        x_new = y - zmap.u_at(np.clip(x, -L, L))
        delta = np.max(np.abs(x_new - x))
        x = x_new
        if delta < PICARD_TOL:
            break
    return x


def _apply_pointwise(seg, fn):
    if isinstance(seg, SegmentBatch):
        return seg.map_values(fn)
    if isinstance(seg, PathSegment):
        return PathSegment(seg.config, fn(seg.values))
    raise ConfigurationError(f"cannot transform object of type {type(seg)!r}")


def transformed_coeffs(zmap: ZvonkinMap, coeffs: CoefficientSet) -> CoefficientSet:
    """Drift/diffusion of the transformed equation solved by Theta(X)."""
    lam = zmap.lam
    eye = np.eye(coeffs.d)
    L = zmap.grid.L

    # The simulators evaluate drift and diffusion at the same endpoint array
    # within a step; memoize the Picard inverse on array identity (two slots:
    # the coupled integrator alternates between both copies).
    inv_cache = []

    def inv_extended(y):
        for key, val in inv_cache:
            if key is y:
                return val
        val = np.clip(theta_inv(zmap, y, extend=True), -L, L)
        inv_cache.append((y, val))
        del inv_cache[:-2]
        return val

    def b0_hat(y):
        return lam * zmap.u_at(inv_extended(y))

    def grad_theta_at(xinv):
        return eye + zmap.grad_u_at(xinv)

    b1_hat = None
    if coeffs.b1 is not None:
        def b1_hat(seg, law):
            x0 = inv_extended(seg.endpoint())
            seg_inv = _apply_pointwise(seg, inv_extended)
            base = coeffs.eval_b1(seg_inv, law)
            return np.einsum("...ij,...j->...i", grad_theta_at(x0), base)

    def sigma_hat(y):
        xinv = inv_extended(y)
        return grad_theta_at(xinv) @ coeffs.eval_sigma(xinv)

    return CoefficientSet(
        name=coeffs.name + "_hat",
        pathcfg=coeffs.pathcfg,
        K=coeffs.K,
        K1=coeffs.K1,
        alpha=coeffs.alpha,
        phi=coeffs.phi,
        b0=b0_hat,
        b0_bound=lam * zmap.u_inf,
        b1=b1_hat,
        sigma=sigma_hat,
        sigma_identity=False,
        meta={**coeffs.meta, "zvonkin_lambda": lam, "base": coeffs.name},
    )


def path_lipschitz_certificate(
    coeffs: CoefficientSet, n_samples: int = 200, seed: int = 0, box: float = 2.0
) -> float:
    """Sampled constant c0 in the transformed-drift regularity shape

        |b(xi) - b(eta)| <= c0 ||xi - eta||_tau + c0 ||eta||_tau^alpha |xi(0) - eta(0)|.
    """
    from .coefficients import _random_segment_values
    from .pathspace import weighted_norm

    rng = np.random.default_rng(seed)
    cfg = coeffs.pathcfg
    worst = 0.0
    for _ in range(n_samples):
        vals = np.clip(_random_segment_values(rng, cfg, 2, scale=box / 2), -box, box)
        xi, eta = PathSegment(cfg, vals[0]), PathSegment(cfg, vals[1])
        bx = coeffs.eval_b0(xi.endpoint()) + coeffs.eval_b1(xi, None)
        by = coeffs.eval_b0(eta.endpoint()) + coeffs.eval_b1(eta, None)
        denom = weighted_norm(xi - eta) + weighted_norm(eta) ** coeffs.alpha * float(
            np.linalg.norm(xi.endpoint() - eta.endpoint())
        )
        if denom > 1e-12:
            worst = max(worst, float(np.linalg.norm(bx - by)) / denom)
    return worst


def export_map_csv(zmap: ZvonkinMap, path) -> None:
    """CSV of (x grid, u, grad u) with a JSON metadata header line."""
    meta = {
        "lambda": zmap.lam,
        "u_inf": zmap.u_inf,
        "grad_inf": zmap.grad_inf,
        "hess_inf": zmap.hess_inf,
        "residual": zmap.residual,
        "L": zmap.grid.L,
        "dx": zmap.grid.dx,
        "dimension": zmap.grid.dimension,
    }
    nodes = zmap.grid.nodes()
    u = zmap.u.reshape(len(nodes), -1)
    g = zmap.grad_u.reshape(len(nodes), -1)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta) + "\n")
        writer = csv.writer(fh)
        dim = zmap.grid.dimension
        header = [f"x{i + 1}" for i in range(dim)]
        header += [f"u{i + 1}" for i in range(u.shape[1])]
        header += [f"du{i + 1}" for i in range(g.shape[1])]
        writer.writerow(header)
        for p, uu, gg in zip(nodes, u, g):
            writer.writerow([repr(float(v)) for v in (*p, *uu, *gg)])
