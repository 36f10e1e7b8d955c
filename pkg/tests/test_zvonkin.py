import math

import numpy as np
import pytest

from pathcouple.coefficients import (
    CoefficientSet,
    DiniModulus,
    get_coefficients,
)
from pathcouple.errors import (
    ConfigurationError,
    LambdaExhaustedError,
    OutOfDomainError,
)
from pathcouple.pathspace import PathSegment, PathSpaceConfig, SegmentBatch
from pathcouple.zvonkin import (
    EllipticGrid,
    ZvonkinMap,
    default_lambda_grid,
    export_map_csv,
    path_lipschitz_certificate,
    select_lambda,
    solve_resolvent,
    theta,
    theta_inv,
    transformed_coeffs,
)

CFG = PathSpaceConfig(d=1, tau=1.0, h=0.05, T_mem=2.0)
GRID = EllipticGrid(1, 5.0, 0.01)


def constant_drift_coeffs(c, cfg=CFG):
    d = cfg.d
    vec = np.full(d, float(c))
    return CoefficientSet(
        name="const",
        pathcfg=cfg,
        K=2.0,
        K1=0.0,
        alpha=0.0,
        phi=DiniModulus("power"),
        b0=lambda x: np.broadcast_to(vec, x.shape).copy(),
        b0_bound=abs(c) * math.sqrt(d),
    )


class TestSolve:
    def test_zero_drift_gives_zero(self):
        zmap = solve_resolvent(get_coefficients("zero", CFG), GRID, 4.0)
        assert zmap.u_inf == pytest.approx(0.0, abs=1e-12)

    def test_constant_drift_gives_constant(self):
        # all derivative terms vanish: u = c / lambda
        zmap = solve_resolvent(constant_drift_coeffs(0.8), GRID, 4.0)
        np.testing.assert_allclose(zmap.u, 0.2, atol=1e-10)
        assert zmap.grad_inf == pytest.approx(0.0, abs=1e-8)

    def test_maximum_principle(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        zmap = solve_resolvent(coeffs, GRID, 10.0)
        assert zmap.u_inf <= coeffs.b0_bound / 10.0 + 10 * GRID.dx**2

    def test_residual_small(self):
        coeffs = get_coefficients("dini_log", CFG)
        zmap = solve_resolvent(coeffs, GRID, 8.0)
        assert zmap.residual <= 1e-8 * (1 + coeffs.b0_bound)

    def test_2d_solve(self):
        cfg2 = PathSpaceConfig(d=2, tau=1.0, h=0.05, T_mem=2.0)
        coeffs = get_coefficients("dini_sqrt", cfg2)
        zmap = solve_resolvent(coeffs, EllipticGrid(2, 3.0, 0.1), 4.0)
        assert zmap.u_inf <= coeffs.b0_bound / 4.0 + 10 * 0.1**2
        x = np.random.default_rng(0).uniform(-2, 2, (50, 2))
        np.testing.assert_allclose(theta_inv(zmap, theta(zmap, x)), x, atol=1e-10)

    def test_bad_lambda(self):
        with pytest.raises(ConfigurationError):
            solve_resolvent(get_coefficients("zero", CFG), GRID, -1.0)

    def test_d3_rejected(self):
        with pytest.raises(ConfigurationError):
            EllipticGrid(3, 5.0, 0.1)


class TestSelectLambda:
    def test_constant_closed_form(self):
        # smallness reduces to c/lambda <= 1/2: smallest grid value >= 2c
        coeffs = constant_drift_coeffs(1.0)
        lams = np.array([0.5, 1.0, 1.9, 2.5, 4.0])
        zmap = select_lambda(coeffs, GRID, lams)
        assert zmap.lam == pytest.approx(2.5)
        assert len(zmap.sweep) == len(lams)

    def test_zero_drift_takes_smallest(self):
        zmap = select_lambda(get_coefficients("zero", CFG), GRID, [0.5, 1.0])
        assert zmap.lam == pytest.approx(0.5)

    def test_exhausted(self):
        with pytest.raises(LambdaExhaustedError):
            select_lambda(constant_drift_coeffs(100.0), GRID, [1.0, 2.0])

    def test_sweep_norm_monotone(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        sweeps = [solve_resolvent(coeffs, GRID, lam).u_inf for lam in (2.0, 4.0, 8.0, 16.0)]
        assert all(a >= b - 1e-12 for a, b in zip(sweeps, sweeps[1:]))

    def test_mesh_refinement_stable(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        lams = default_lambda_grid(coeffs)
        coarse = select_lambda(coeffs, EllipticGrid(1, 5.0, 0.02), lams)
        fine = select_lambda(coeffs, EllipticGrid(1, 5.0, 0.01), lams)
        assert coarse.lam == fine.lam
        assert coarse.u_inf == pytest.approx(fine.u_inf, rel=0.02)
        assert coarse.grad_inf == pytest.approx(fine.grad_inf, rel=0.02)


class TestTheta:
    def test_identity_when_u_zero(self):
        zmap = solve_resolvent(get_coefficients("zero", CFG), GRID, 4.0)
        x = np.linspace(-4, 4, 11)[:, None]
        np.testing.assert_allclose(theta(zmap, x), x, atol=1e-12)

    def test_constant_shift(self):
        zmap = solve_resolvent(constant_drift_coeffs(1.2), GRID, 4.0)
        y = np.array([[0.7]])
        np.testing.assert_allclose(theta_inv(zmap, y), y - 0.3, atol=1e-9)

    def test_round_trip(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        zmap = select_lambda(coeffs, GRID, default_lambda_grid(coeffs))
        x = np.random.default_rng(1).uniform(-4, 4, (1000, 1))
        err = np.abs(theta(zmap, theta_inv(zmap, theta(zmap, x))) - theta(zmap, x))
        assert err.max() <= 1e-10

    def test_out_of_domain(self):
        zmap = solve_resolvent(get_coefficients("zero", CFG), GRID, 4.0)
        with pytest.raises(OutOfDomainError):
            theta(zmap, np.array([[6.0]]))
        with pytest.raises(OutOfDomainError):
            theta_inv(zmap, np.array([[-5.5]]))


class TestTransformedCoeffs:
    def test_identity_transform(self):
        coeffs = get_coefficients("linear", CFG)
        zmap = solve_resolvent(get_coefficients("zero", CFG), GRID, 4.0)
        hat = transformed_coeffs(zmap, coeffs)
        seg = PathSegment.constant(CFG, [0.5])
        batch = SegmentBatch.from_segment(seg, 3)
        np.testing.assert_allclose(hat.eval_b1(batch, None), coeffs.eval_b1(batch, None), atol=1e-10)
        np.testing.assert_allclose(hat.eval_b0(batch.endpoint()), 0.0, atol=1e-12)

    def test_constant_drift_reproduced(self):
        # u = c/lambda constant: transformed drift equals the original b0
        coeffs = constant_drift_coeffs(0.9)
        zmap = solve_resolvent(coeffs, GRID, 3.0)
        hat = transformed_coeffs(zmap, coeffs)
        y = np.array([[0.3], [-1.2]])
        np.testing.assert_allclose(hat.eval_b0(y), 0.9, atol=1e-8)
        np.testing.assert_allclose(
            hat.eval_sigma(y), np.broadcast_to(np.eye(1), (2, 1, 1)), atol=1e-7
        )

    def test_path_lipschitz_certificate(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        zmap = select_lambda(coeffs, GRID, default_lambda_grid(coeffs))
        hat = transformed_coeffs(zmap, coeffs)
        c0 = path_lipschitz_certificate(hat, n_samples=150, seed=0)
        # the transform removes the Dini singularity: finite constant, and
        # small enough that kappa = 4 leaves room below tau0 = 0.5
        assert 0.0 < c0 < 3.5

    def test_escape_counting(self):
        coeffs = get_coefficients("dini_sqrt", CFG)
        zmap = select_lambda(coeffs, GRID, default_lambda_grid(coeffs))
        hat = transformed_coeffs(zmap, coeffs)
        hat.eval_b0(np.array([[4.0], [7.0]]))  # one point outside the box
        assert zmap.escape_count >= 1
        assert 0.0 < zmap.escape_fraction <= 1.0


def test_export_csv(tmp_path):
    coeffs = get_coefficients("dini_sqrt", CFG)
    zmap = solve_resolvent(coeffs, EllipticGrid(1, 5.0, 0.1), 8.0)
    path = tmp_path / "map.csv"
    export_map_csv(zmap, path)
    text = path.read_text().splitlines()
    assert text[0].startswith("# {")
    assert "lambda" in text[0]
    assert text[1] == "x1,u1,du1"
    assert len(text) == 2 + zmap.grid.n_axis
