import itertools
import math

import numpy as np
import pytest

from pathcouple.errors import ConfigurationError, InvalidCloudError
from pathcouple.pathspace import ParticleCloud, PathSegment, PathSpaceConfig
from pathcouple.wasserstein import (
    cloud_moment,
    ot_plan,
    pairwise_truncated_norm,
    sinkhorn,
    wk_full,
    wk_truncated,
)

CFG = PathSpaceConfig(d=1, tau=1.0, h=0.1, T_mem=1.0)


def random_cloud(rng, n, cfg=CFG, scale=1.0):
    vals = np.cumsum(rng.standard_normal((n, cfg.n_points, cfg.d)), axis=1)
    return ParticleCloud(cfg, scale * vals / math.sqrt(cfg.n_points))


def brute_force_wk(a, b, k, N):
    """Permutation minimum for uniform clouds of equal size (oracle)."""
    cost = pairwise_truncated_norm(a, b, N) ** max(k, 1.0)
    n = len(a)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(cost[i, p] for i, p in enumerate(perm)) / n)
    return best ** (1.0 / max(k, 1.0))


class TestOracle:
    def test_permutation_minimum(self):
        rng = np.random.default_rng(0)
        for trial in range(25):
            n = int(rng.integers(2, 7))
            a, b = random_cloud(rng, n), random_cloud(rng, n)
            k = float(rng.choice([1.0, 2.0, 3.0]))
            got = wk_truncated(a, b, k, CFG.T_mem)
            want = brute_force_wk(a, b, k, CFG.T_mem)
            assert got == pytest.approx(want, abs=1e-10), trial

    def test_full_scan_equals_top_level(self):
        # cost monotone in the truncation level => sup over levels at T_mem
        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b = random_cloud(rng, 6), random_cloud(rng, 6)
            assert wk_full(a, b, k=2) == pytest.approx(
                wk_full(a, b, k=2, full_scan=True), abs=1e-10
            )


class TestMetricAxioms:
    def test_identity(self):
        rng = np.random.default_rng(2)
        a = random_cloud(rng, 5)
        assert wk_full(a, a, k=2) == pytest.approx(0.0, abs=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = random_cloud(rng, 5), random_cloud(rng, 5)
        assert wk_full(a, b, k=2) == pytest.approx(wk_full(b, a, k=2), abs=1e-10)

    def test_triangle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c = (random_cloud(rng, 4) for _ in range(3))
            ab, bc, ac = (wk_full(x, y, k=2) for x, y in ((a, b), (b, c), (a, c)))
            assert ac <= ab + bc + 1e-9

    def test_holder_ordering(self):
        # W_k nondecreasing in k on uniform clouds (power-mean inequality)
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = random_cloud(rng, 5), random_cloud(rng, 5)
            vals = [wk_full(a, b, k=k) for k in (1.0, 2.0, 3.0)]
            assert vals[0] <= vals[1] + 1e-9 <= vals[2] + 2e-9


class TestPlans:
    def test_plan_marginals(self):
        rng = np.random.default_rng(6)
        a, b = random_cloud(rng, 6), random_cloud(rng, 9)
        plan = ot_plan(a, b, k=2, N=CFG.T_mem)
        assert plan.marginal_error(a.weights, b.weights) < 1e-8

    def test_k_below_one_rejected(self):
        rng = np.random.default_rng(7)
        a, b = random_cloud(rng, 3), random_cloud(rng, 3)
        with pytest.raises(ConfigurationError):
            ot_plan(a, b, k=0.5, N=CFG.T_mem)

    def test_point_mass_distance(self):
        # distance between point masses is the truncated seminorm itself
        rng = np.random.default_rng(8)
        x = PathSegment(CFG, rng.standard_normal((CFG.n_points, 1)))
        y = PathSegment(CFG, rng.standard_normal((CFG.n_points, 1)))
        a = ParticleCloud.point_mass(x, 3)
        b = ParticleCloud.point_mass(y, 3)
        from pathcouple.pathspace import weighted_norm

        assert wk_full(a, b, k=2) == pytest.approx(weighted_norm(x - y), abs=1e-10)

    def test_config_mismatch(self):
        rng = np.random.default_rng(9)
        other = PathSpaceConfig(d=1, tau=1.0, h=0.1, T_mem=2.0)
        a = random_cloud(rng, 3)
        b = random_cloud(rng, 3, cfg=other)
        with pytest.raises(InvalidCloudError):
            wk_full(a, b, k=2)


class TestSinkhorn:
    def test_upper_bound_and_gap(self):
        rng = np.random.default_rng(10)
        a, b = random_cloud(rng, 8), random_cloud(rng, 8)
        cost = pairwise_truncated_norm(a, b, CFG.T_mem) ** 2
        exact = ot_plan(a, b, k=2, N=CFG.T_mem).objective
        plan = sinkhorn(cost, a.weights, b.weights, reg=1e-3)
        assert plan.objective >= exact - 1e-9
        assert plan.duality_gap >= -1e-9

    def test_gap_shrinks_with_reg(self):
        rng = np.random.default_rng(11)
        a, b = random_cloud(rng, 8), random_cloud(rng, 8)
        cost = pairwise_truncated_norm(a, b, CFG.T_mem) ** 2
        exact = ot_plan(a, b, k=2, N=CFG.T_mem).objective
        errs = [
            sinkhorn(cost, a.weights, b.weights, reg=reg).objective - exact
            for reg in (1e-1, 1e-3)
        ]
        assert errs[1] <= errs[0] + 1e-12


def test_cloud_moment():
    rng = np.random.default_rng(12)
    a = random_cloud(rng, 16)
    norms = a.norms()
    assert cloud_moment(a, 2) == pytest.approx(math.sqrt((norms**2).mean()))
