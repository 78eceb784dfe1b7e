import numpy as np
import pytest

from kklobs.injectivity import injectivity_modulus
from kklobs.inversion import (check_uniform_continuity, gauss_newton_invert,
                              invert, invert_batch)
from kklobs.model import DomainSpec


class TestInvert:
    def test_grid_node_exact_hit(self, harmonic_table, harmonic_sat,
                                 harmonic_design):
        idx = 37
        q = invert(harmonic_table, harmonic_sat, harmonic_design,
                   harmonic_table.values[idx], tol=1e-10)
        assert np.linalg.norm(q.x_hat - harmonic_table.nodes[idx]) <= 1e-6
        assert q.residual <= 1e-8

    def test_linear_oracle_point(self, harmonic_table, harmonic_sat,
                                 harmonic_design):
        # rows (0.5,-0.5) and (0.4,-0.2) applied to (1,1) give (0.0, 0.2)
        z = np.array([[0.0], [0.2]], dtype=complex)
        q = invert(harmonic_table, harmonic_sat, harmonic_design, z, tol=1e-10)
        np.testing.assert_allclose(q.x_hat, [1.0, 1.0], atol=1e-6)

    def test_far_query_lands_on_boundary(self, harmonic_table, harmonic_sat,
                                         harmonic_design):
        z = 1e3 * np.ones((2, 1), dtype=complex)
        q = invert(harmonic_table, harmonic_sat, harmonic_design, z, tol=1e-8)
        dom = harmonic_sat.domain
        assert dom.distance(q.x_hat) == 0.0
        on_face = np.any(np.isclose(np.abs(q.x_hat), 1.2))
        assert on_face

    def test_fingerprint_mismatch_rejected(self, harmonic_table, harmonic_sat,
                                           harmonic_design):
        bad = harmonic_table.__class__(
            axes=harmonic_table.axes, nodes=harmonic_table.nodes,
            values=harmonic_table.values, horizon=harmonic_table.horizon,
            quad_tol=harmonic_table.quad_tol,
            fingerprint=harmonic_table.fingerprint ^ 1)
        with pytest.raises(ValueError):
            invert(bad, harmonic_sat, harmonic_design,
                   harmonic_table.values[0])

    def test_residual_never_exceeds_seed(self, harmonic_table, harmonic_sat,
                                         harmonic_design):
        rng = np.random.default_rng(2)
        zs = (rng.normal(size=(5, 2, 1)) * 0.3).astype(complex)
        queries = invert_batch(harmonic_table, harmonic_sat, harmonic_design,
                               zs, tol=1e-8)
        vals = harmonic_table.values.reshape(len(harmonic_table.nodes), -1)
        for q in queries:
            seed_res = np.min(np.linalg.norm(vals - q.z.ravel()[None], axis=1))
            assert q.residual <= seed_res + 1e-12


class TestGaussNewton:
    def test_quadratic_map(self):
        dom = DomainSpec.box([-2.0, -2.0], [2.0, 2.0], margins=(0.1, 0.2, 0.4))

        def fn(X):
            X = np.atleast_2d(X)
            out = np.stack([X[:, 0] + X[:, 1], X[:, 0] * X[:, 1]], axis=1)
            return out[:, :, None].astype(complex)

        target = fn(np.array([[0.5, -0.7]]))
        x, res, iters = gauss_newton_invert(fn, dom, np.array([[0.4, -0.5]]),
                                            target, tol=1e-12)
        np.testing.assert_allclose(sorted(x[0]), sorted([0.5, -0.7]), atol=1e-8)
        assert res[0] <= 1e-8

    def test_projection_constrains_iterates(self):
        dom = DomainSpec.box([-1.0], [1.0], margins=(0.1, 0.2, 0.4))

        def fn(X):
            return np.atleast_2d(X)[:, :, None].astype(complex)

        x, res, _ = gauss_newton_invert(fn, dom, np.array([[0.0]]),
                                        np.array([[[5.0 + 0j]]]))
        assert x[0, 0] == 1.0
        assert res[0] == pytest.approx(4.0)


@pytest.fixture(scope="module")
def report(harmonic_table):
    return injectivity_modulus(harmonic_table)


class TestUniformContinuity:
    def test_no_violations_small_perturbation(self, harmonic_table,
                                              harmonic_sat, harmonic_design,
                                              report):
        stats = check_uniform_continuity(harmonic_table, harmonic_sat,
                                         harmonic_design, report,
                                         samples=15, seed=1,
                                         perturbation=0.02, tol=1e-9)
        assert stats.violations == 0
        assert stats.worst_margin >= 0.0

    def test_zero_perturbation_left_inverse(self, harmonic_table, harmonic_sat,
                                            harmonic_design, report):
        stats = check_uniform_continuity(harmonic_table, harmonic_sat,
                                         harmonic_design, report,
                                         samples=10, seed=3,
                                         perturbation=1e-9, tol=1e-10)
        assert stats.violation_fraction == 0.0

    def test_huge_perturbation_stays_in_region(self, harmonic_table,
                                               harmonic_sat, harmonic_design):
        z = harmonic_table.values[0] + 100.0
        q = invert(harmonic_table, harmonic_sat, harmonic_design, z)
        assert harmonic_sat.domain.distance(q.x_hat) == 0.0
