import numpy as np
import pytest

from degenpde.degeneracy import (
    continuity_diagnostic,
    counterexample_run,
    kernel_basis,
    projection_paths,
)
from degenpde.errors import ContractViolationError, DecompositionError
from degenpde.families import constant_drift, constant_sigma, swirl_drift, zero_drift
from degenpde.montecarlo import simulate


class TestKernelBasis:
    def test_single_noisy_coordinate(self):
        decomp = kernel_basis(np.array([[0.0], [1.0]]))
        assert decomp.m == 1
        np.testing.assert_allclose(decomp.basis, [[1.0, 0.0]], atol=1e-14)
        assert decomp.condition_number == pytest.approx(1.0, abs=1e-12)
        # M^T e_1 recovers the kernel vector
        np.testing.assert_allclose(decomp.matrix.T @ np.array([1.0, 0.0]), [1.0, 0.0], atol=1e-14)

    def test_full_rank_kernel_is_empty(self):
        decomp = kernel_basis(np.eye(2))
        assert decomp.m == 0
        assert decomp.rank == 2

    def test_three_dims_one_noise(self):
        decomp = kernel_basis(np.array([[0.0], [0.0], [1.0]]))
        assert decomp.m == 2
        span = decomp.basis.T @ decomp.basis
        expected = np.diag([1.0, 1.0, 0.0])
        np.testing.assert_allclose(span, expected, atol=1e-12)

    def test_basis_annihilated_by_sigma_transpose(self):
        rng = np.random.default_rng(6)
        col = rng.normal(size=(3, 1))
        decomp = kernel_basis(col)
        assert decomp.m == 2
        assert np.abs(col.T @ decomp.basis.T).max() <= 1e-12


class TestProjectionPaths:
    def test_degenerate_coordinate_is_frozen(self):
        sigma = constant_sigma([[0.0], [1.0]])
        decomp = kernel_basis(sigma.matrix)
        ens = simulate(sigma, zero_drift(2), [0.0, 0.0], 0.0, 1.0, 100, 400, seed=2)
        pp = projection_paths(ens, decomp, zero_drift(2), horizon=1.0)
        assert np.abs(pp.pi).max() == 0.0
        assert pp.quadratic_variation.max() <= 1e-20

    def test_constant_drift_moves_projection_linearly(self):
        sigma = constant_sigma([[0.0], [1.0]])
        decomp = kernel_basis(sigma.matrix)
        c = np.array([0.8, -0.3])
        ens = simulate(sigma, constant_drift(2, c), [0.0, 0.0], 0.0, 1.0, 250, 300, seed=3)
        pp = projection_paths(ens, decomp, constant_drift(2, c), horizon=1.0)
        expected = np.broadcast_to(ens.times * float(c @ decomp.basis[0]), pp.pi[..., 0].shape)
        np.testing.assert_allclose(pp.pi[..., 0], expected, atol=1e-12)

    def test_full_rank_projection_is_empty(self):
        sigma = constant_sigma(np.eye(2))
        decomp = kernel_basis(sigma.matrix)
        ens = simulate(sigma, zero_drift(2), [0.0, 0.0], 0.0, 1.0, 50, 100, seed=4)
        pp = projection_paths(ens, decomp, zero_drift(2), horizon=1.0)
        assert pp.m == 0

    def test_inconsistent_basis_detected(self):
        sigma = constant_sigma([[0.0], [1.0]])
        decomp = kernel_basis(sigma.matrix)
        # tamper: rotate the basis into the noisy direction
        decomp.basis[0] = np.array([np.sqrt(0.5), np.sqrt(0.5)])
        ens = simulate(sigma, zero_drift(2), [0.0, 0.0], 0.0, 1.0, 100, 200, seed=5)
        with pytest.raises(DecompositionError):
            projection_paths(ens, decomp, zero_drift(2), horizon=1.0)


class TestContinuityDiagnostic:
    def test_atomic_law_scores_one(self):
        samples = np.zeros(5000)
        rep = continuity_diagnostic(samples)
        assert rep["atom_score"] == 1.0
        assert rep["verdict"] == "atomic"
        assert rep["heuristic"] is True

    def test_diffuse_law_near_uniform_baseline(self):
        rng = np.random.default_rng(9)
        samples = rng.normal(size=20_000)
        rep = continuity_diagnostic(samples)
        assert rep["verdict"] == "diffuse"
        assert rep["atom_score"] <= 10.0 * rep["uniform_baseline"]

    def test_swirl_drift_gives_continuous_projection(self):
        # mu = (x2, 0): the frozen coordinate integrates the Brownian one
        sigma = constant_sigma([[0.0], [1.0]])
        decomp = kernel_basis(sigma.matrix)
        mu = swirl_drift(2, 1.0)
        ens = simulate(sigma, mu, [0.0, 0.0], 0.0, 1.0, 200, 4000, seed=10)
        pp = projection_paths(ens, decomp, mu, horizon=1.0)
        rep = continuity_diagnostic(pp.pi[:, -1, :], seed=10)
        assert rep["verdict"] == "diffuse"
        assert "component_0" in rep["density"]

    def test_needs_enough_samples(self):
        with pytest.raises(ContractViolationError):
            continuity_diagnostic(np.zeros(10))

    def test_empty_projection(self):
        rep = continuity_diagnostic(np.zeros((5000, 0)))
        assert rep["empty"] is True


class TestCounterexample:
    def test_occupation_converges_to_half_horizon(self):
        rep = counterexample_run(horizon=1.0, n_paths=20_000, n_steps=400, seed=1)
        assert abs(rep.estimate - 0.5) <= 3.0 * rep.se
        assert rep.expected == 0.5

    def test_empty_window_gives_zero(self):
        rep = counterexample_run(horizon=1.0, n_paths=2_000, n_steps=50, seed=2, time_window=(0.4, 0.4))
        assert rep.estimate == 0.0

    def test_seed_determinism(self):
        r1 = counterexample_run(horizon=1.0, n_paths=3_000, n_steps=100, seed=3)
        r2 = counterexample_run(horizon=1.0, n_paths=3_000, n_steps=100, seed=3)
        assert r1.estimate == r2.estimate and r1.se == r2.se
