"""Coefficient model: bounded Dini part b0, regular path/law part b1, diffusion.

A CoefficientSet carries the declared constants (K, K1, alpha) and the Dini
modulus phi together with callables

    b0(x)        (..., d) -> (..., d)        bounded, Dini continuous
    b1(seg, law) segment batch -> (..., d)   Lipschitz in path norm and law
    sigma(x)     (..., d) -> (..., d, d)     Lipschitz, uniformly elliptic

The drift of the equation is b0(xi(0)) + b1(xi, mu).  The hypotheses tying
these pieces to the declared constants are checked statistically by
validate_H; the report records the sampled certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import ConfigurationError, InvalidCoefficientError, NotDiniError
from .pathspace import ParticleCloud, PathSegment, PathSpaceConfig, SegmentBatch, flat_extension

__all__ = [
    "CoefficientSet",
    "DiniModulus",
    "ValidationReport",
    "dini_integral",
    "eval_drift",
    "get_coefficients",
    "grid_decay_constant",
    "make_dini_log",
    "make_dini_sqrt",
    "make_linear",
    "make_sublinear",
    "make_zero",
    "validate_H",
]


# ---------------------------------------------------------------------------
# Dini moduli


@dataclass(frozen=True)
class DiniModulus:
    """Modulus of continuity phi from a closed-form family.

    family "power": phi(s) = C * s^beta with beta in (0, 1]
    family "log":   phi(s) = C * (log(e + 1/s))^{-q}, phi(0) = 0
    family "custom": phi_fn supplied directly (used for negative tests)

    Membership in the Dini class additionally requires the integral of
    phi(s)/s over (0, 1] to be finite; see dini_integral.
    """

    family: str
    C: float = 1.0
    beta: float = 0.5
    q: float = 2.0
    phi_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.family == "power" and not (0 < self.beta <= 1):
            raise ConfigurationError(f"power modulus needs beta in (0,1], got {self.beta}")
        if self.family == "custom" and self.phi_fn is None:
            raise ConfigurationError("custom modulus needs phi_fn")
        if self.family not in ("power", "log", "custom"):
            raise ConfigurationError(f"unknown modulus family {self.family!r}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "power":
            return self.C * s**self.beta
        if self.family == "log":
            with np.errstate(divide="ignore", over="ignore"):
                out = self.C * np.log(math.e + 1.0 / np.where(s > 0, s, 1.0)) ** (-self.q)
            return np.where(s > 0, out, 0.0)
        return self.phi_fn(s)

    def at_exp_neg(self, u):
        """phi(e^{-u}) evaluated stably for large u (e^{-u} may underflow)."""
        u = np.asarray(u, dtype=float)
        if self.family == "power":
            return self.C * np.exp(-self.beta * u)
        if self.family == "log":
            return self.C * np.logaddexp(1.0, u) ** (-self.q)
        return self.phi_fn(np.exp(-u))

    def check_shape(self, n_grid: int = 400) -> None:
        """Sampled check: phi(0)=0, nondecreasing and midpoint-concave."""
        if self(0.0) != 0.0:
            raise NotDiniError("phi(0) != 0")
        s = np.geomspace(1e-9, 1.0, n_grid)
        v = self(s)
        if np.any(np.diff(v) < -1e-12):
            raise NotDiniError("phi is not nondecreasing on the sampled grid")
        mid = self((s[:-1] + s[1:]) / 2)
        if np.any(mid + 1e-12 < (v[:-1] + v[1:]) / 2):
            raise NotDiniError("phi is not midpoint-concave on the sampled grid")


def dini_integral(phi: DiniModulus, rel_tol: float = 1e-9, cap: float = 1e6) -> float:
    """Value of the Dini integral of phi(s)/s over (0, 1].

    Uses the substitution u = log(1/s), so the integrand phi(e^{-u}) is
    integrated over [0, inf); partial integrals over a doubling sequence of
    horizons must settle down or a NotDiniError is raised.
    """
    phi.check_shape()

    def integrand(u):
        return phi.at_exp_neg(u)

    # Quadrupling windows in u; the tail beyond the last window is estimated
    # by geometric extrapolation of the window integrals.  A ratio that does
    # not drop below 1 signals a divergent (non-Dini) integral.
    total = 0.0
    lo = 0.0
    prev_part = None
    prev_est = None
    for k in range(18):
        hi = 10.0 * 4.0**k
        part, _ = quad(integrand, lo, hi, limit=400)
        total += part
        lo = hi
        if total > cap:
            raise NotDiniError(f"partial Dini integrals exceed {cap}; phi is not Dini")
        if part <= 1e-13 * max(total, 1.0):
            return float(total)
        if prev_part is not None:
            r = part / prev_part
            if r < 0.98:
                est = total + part * r / (1.0 - r)
                if prev_est is not None and abs(est - prev_est) <= rel_tol * max(abs(est), 1.0):
                    return float(est)
                prev_est = est
        prev_part = part
    raise NotDiniError("Dini integral did not converge over the probed horizons")


# ---------------------------------------------------------------------------
# Coefficient sets


@dataclass(frozen=True)
class CoefficientSet:
    """Drift/diffusion triple with declared hypothesis constants."""

    name: str
    pathcfg: PathSpaceConfig
    K: float
    K1: float
    alpha: float
    phi: DiniModulus
    b0_bound: float = 0.0
    b0: Optional[Callable] = None
    b1: Optional[Callable] = None
    sigma: Optional[Callable] = None
    sigma_identity: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.pathcfg.d

    def eval_b0(self, x: np.ndarray) -> np.ndarray:
        if self.b0 is None:
            return np.zeros_like(x)
        out = self.b0(x)
        if not np.all(np.isfinite(out)):
            raise InvalidCoefficientError(f"b0 returned non-finite value at x={x!r}")
        return out

    def eval_b1(self, seg, law) -> np.ndarray:
        if self.b1 is None:
            shape = seg.endpoint().shape
            return np.zeros(shape)
        out = self.b1(seg, law)
        if not np.all(np.isfinite(out)):
            raise InvalidCoefficientError("b1 returned a non-finite value")
        return out

    def eval_sigma(self, x: np.ndarray) -> np.ndarray:
        if self.sigma_identity:
            eye = np.eye(self.d)
            return np.broadcast_to(eye, x.shape + (self.d,)).copy()
        out = self.sigma(x)
        if not np.all(np.isfinite(out)):
            raise InvalidCoefficientError(f"sigma returned non-finite value at x={x!r}")
        return out


def eval_drift(coeffs: CoefficientSet, seg, law=None) -> np.ndarray:
    """Full drift b0(xi(0)) + b1(xi, mu) for a segment or segment batch."""
    if seg.config.d != coeffs.d:
        raise ConfigurationError(
            f"segment dimension {seg.config.d} != coefficient dimension {coeffs.d}"
        )
    if law is not None and law.config != seg.config:
        raise ConfigurationError("segment and law use different path-space configs")
    return coeffs.eval_b0(seg.endpoint()) + coeffs.eval_b1(seg, law)


# ---------------------------------------------------------------------------
# Builtin gallery


def grid_decay_constant(pathcfg: PathSpaceConfig, rate: float) -> float:
    """h * sum_i e^{rate * s_i}: the grid bound replacing 1/rate."""
    return float(pathcfg.h * np.exp(rate * pathcfg.s_grid).sum())


def _mean_endpoint(law) -> np.ndarray:
    return law.mean_endpoint() if law is not None else 0.0


def make_linear(pathcfg: PathSpaceConfig, B: float = 0.5, K1: float = 0.25) -> CoefficientSet:
    """Linear-Gaussian baseline: b0 = 0, b1 linear in an exponentially
    weighted history integral and in the law's mean endpoint, sigma = I."""
    gc1 = grid_decay_constant(pathcfg, pathcfg.tau)
    gc2 = grid_decay_constant(pathcfg, 2 * pathcfg.tau)

    def b1(seg, law):
        return B * seg.exp_weighted_integral(2 * pathcfg.tau) + K1 * _mean_endpoint(law)

    return CoefficientSet(
        name="linear",
        pathcfg=pathcfg,
        K=max(2.0, abs(B) * (gc1 + gc2)),
        K1=K1,
        alpha=1.0,
        phi=DiniModulus("power", C=1.0, beta=1.0),
        b1=b1,
        meta={"B": B},
    )


def _soft_sqrt(x: np.ndarray) -> np.ndarray:
    """x / sqrt(1 + |x|): 1-Lipschitz, |g(x)| <= sqrt(|x|)."""
    return x / np.sqrt(1.0 + np.abs(x))


def make_sublinear(pathcfg: PathSpaceConfig, B: float = 0.5, K1: float = 0.0) -> CoefficientSet:
    """Half-power growth in the history integral (alpha = 1/2 configuration)."""
    gc1 = grid_decay_constant(pathcfg, pathcfg.tau)
    d = pathcfg.d

    def b1(seg, law):
        return B * _soft_sqrt(seg.exp_weighted_integral(2 * pathcfg.tau)) + K1 * _mean_endpoint(law)

    return CoefficientSet(
        name="sublinear",
        pathcfg=pathcfg,
        K=max(2.0, abs(B) * gc1, 2 * abs(B) * math.sqrt(d * gc1)),
        K1=K1,
        alpha=0.5,
        phi=DiniModulus("power", C=1.0, beta=1.0),
        b1=b1,
        meta={"B": B},
    )


def _unit_first_axis(d: int) -> np.ndarray:
    e1 = np.zeros(d)
    e1[0] = 1.0
    return e1


def make_dini_sqrt(pathcfg: PathSpaceConfig, amp: float = 1.0) -> CoefficientSet:
    """Dini-but-not-Lipschitz drift b0(x) = amp * min(sqrt(|x|), 1) e1."""
    e1 = _unit_first_axis(pathcfg.d)

    def b0(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return amp * np.minimum(np.sqrt(r), 1.0) * e1

    return CoefficientSet(
        name="dini_sqrt",
        pathcfg=pathcfg,
        K=2.0,
        K1=0.0,
        alpha=0.0,
        phi=DiniModulus("power", C=amp, beta=0.5),
        b0=b0,
        b0_bound=amp,
    )


def make_dini_log(pathcfg: PathSpaceConfig, amp: float = 1.0) -> CoefficientSet:
    """Log-modulus drift: Dini continuous but not Hoelder of any order."""
    e1 = _unit_first_axis(pathcfg.d)
    psi = DiniModulus("log", C=1.0, q=2.0)

    def b0(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return amp * psi(r) * e1

    return CoefficientSet(
        name="dini_log",
        pathcfg=pathcfg,
        K=2.0,
        K1=0.0,
        alpha=0.0,
        phi=DiniModulus("log", C=amp, q=2.0),
        b0=b0,
        b0_bound=amp,
    )


def make_zero(pathcfg: PathSpaceConfig) -> CoefficientSet:
    """Zero drift, identity diffusion: the closed-form coupling reference."""
    return CoefficientSet(
        name="zero",
        pathcfg=pathcfg,
        K=2.0,
        K1=0.0,
        alpha=0.0,
        phi=DiniModulus("power", C=1.0, beta=1.0),
    )


_GALLERY = {
    "linear": make_linear,
    "sublinear": make_sublinear,
    "dini_sqrt": make_dini_sqrt,
    "dini_log": make_dini_log,
    "zero": make_zero,
}


def get_coefficients(name: str, pathcfg: PathSpaceConfig, **kwargs) -> CoefficientSet:
    if name not in _GALLERY:
        raise ConfigurationError(f"unknown coefficient set {name!r}; have {sorted(_GALLERY)}")
    return _GALLERY[name](pathcfg, **kwargs)


# ---------------------------------------------------------------------------
# Hypothesis validation


@dataclass
class ValidationReport:
    """Sampled certificate for the standing hypotheses.

    ratios maps a check name to the worst observed/allowed ratio; anything
    above 1 (beyond rounding slack) is a violation.
    """

    name: str
    sample_budget: int
    rng_seed: int
    ratios: dict
    notes: dict
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(r <= 1.0 + self.tol for r in self.ratios.values())

    def failures(self) -> dict:
        return {k: v for k, v in self.ratios.items() if v > 1.0 + self.tol}


def _random_segment_values(rng, pathcfg: PathSpaceConfig, n: int, scale: float = 1.0):
    """Smooth random histories: discrete OU paths on the grid."""
    n1 = pathcfg.n_points
    out = np.empty((n, n1, pathcfg.d))
    out[:, 0] = rng.standard_normal((n, pathcfg.d))
    decay = 1.0 - pathcfg.h
    amp = math.sqrt(2 * pathcfg.h)
    noise = rng.standard_normal((n, n1 - 1, pathcfg.d))
    for i in range(1, n1):
        out[:, i] = decay * out[:, i - 1] + amp * noise[:, i - 1]
    return scale * out


def _opnorm(mats: np.ndarray) -> np.ndarray:
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def validate_H(coeffs: CoefficientSet, sample_budget: int, rng_seed: int) -> ValidationReport:
    """Draw random points/segments/clouds and check every hypothesis inequality.

    The check is statistical, not symbolic: the worst observed/allowed ratio
    per hypothesis is reported, with pass meaning ratio <= 1 + 1e-9.
    """
    from .wasserstein import cloud_moment, wk_full

    if sample_budget < 1:
        raise ConfigurationError("sample_budget must be >= 1")
    rng = np.random.default_rng(rng_seed)
    cfg = coeffs.pathcfg
    d = cfg.d
    ratios: dict = {}
    notes: dict = {}

    # (H1): ellipticity and boundedness of a = sigma sigma^T.
    x = rng.normal(scale=2.0, size=(sample_budget, d))
    sig = coeffs.eval_sigma(x)
    a = sig @ np.swapaxes(sig, -1, -2)
    dets = np.linalg.det(a)
    if np.any(np.abs(dets) < 1e-14):
        ratios["H1_ellipticity"] = math.inf
        notes["H1_ellipticity"] = "a not invertible at a sampled point"
    else:
        ratios["H1_ellipticity"] = float(np.max(_opnorm(a) + _opnorm(np.linalg.inv(a))) / coeffs.K)

    # (H3): bounded Dini b0 and Lipschitz sigma.
    y = rng.normal(scale=2.0, size=(sample_budget, d))
    if coeffs.b0 is not None:
        bx, by = coeffs.eval_b0(x), coeffs.eval_b0(y)
        ratios["H3_b0_bound"] = float(np.linalg.norm(bx, axis=-1).max() / coeffs.b0_bound)
        dist = np.linalg.norm(x - y, axis=-1)
        keep = dist > 1e-12
        allowed = coeffs.phi(dist[keep])
        ratios["H3_b0_dini"] = float(
            np.max(np.linalg.norm(bx[keep] - by[keep], axis=-1) / np.maximum(allowed, 1e-300))
        )
    if not coeffs.sigma_identity:
        ds = np.linalg.norm(coeffs.eval_sigma(x) - coeffs.eval_sigma(y), axis=(-2, -1))
        dist = np.linalg.norm(x - y, axis=-1)
        keep = dist > 1e-12
        ratios["H3_sigma_lip"] = float(np.max(ds[keep] / (coeffs.K * dist[keep])))
    else:
        ratios["H3_sigma_lip"] = 0.0

    # (H2): path/law Lipschitz and growth of b1.
    if coeffs.b1 is not None:
        n_pairs = min(sample_budget, 48)
        cloud_n = 16
        worst_lip = 0.0
        worst_flat = 0.0
        for _ in range(n_pairs):
            xi = PathSegment(cfg, _random_segment_values(rng, cfg, 1)[0])
            eta = PathSegment(cfg, _random_segment_values(rng, cfg, 1)[0])
            mu = ParticleCloud(cfg, _random_segment_values(rng, cfg, cloud_n))
            nu = ParticleCloud(cfg, _random_segment_values(rng, cfg, cloud_n))
            w2 = wk_full(mu, nu, k=2) if coeffs.K1 > 0 else 0.0
            from .pathspace import weighted_norm

            diff = np.linalg.norm(coeffs.eval_b1(xi, mu) - coeffs.eval_b1(eta, nu))
            allowed = coeffs.K * weighted_norm(xi - eta) + coeffs.K1 * w2
            worst_lip = max(worst_lip, diff / max(allowed, 1e-300))

            flat = flat_extension(xi)
            diff0 = np.linalg.norm(coeffs.eval_b1(xi, mu) - coeffs.eval_b1(flat, mu))
            allowed0 = coeffs.K * (1 + weighted_norm(xi) ** coeffs.alpha) + coeffs.K1 * (
                cloud_moment(mu, 2) if coeffs.K1 > 0 else 0.0
            )
            worst_flat = max(worst_flat, diff0 / max(allowed0, 1e-300))
        ratios["H2_lipschitz"] = float(worst_lip)
        ratios["H2_flat_growth"] = float(worst_flat)

    return ValidationReport(
        name=coeffs.name,
        sample_budget=sample_budget,
        rng_seed=rng_seed,
        ratios=ratios,
        notes=notes,
    )
