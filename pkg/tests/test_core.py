import numpy as np
import pytest

from instances import random_spd
from retrofit import (
    FunctionClassParams,
    LtiSystem,
    PartitionedLtiSystem,
    QuadraticObjectiveO,
    SaddleProblem,
    Stability,
    Trajectory,
    fixed_point,
    spectrum,
    stability_verdict,
)
from retrofit.core import eigen_clusters, matrix_from_json, matrix_to_json, null_space, spectral_radius
from retrofit.errors import Degenerate
from retrofit.tolerances import ENV_VAR, Tolerances, get_tolerances


class TestLtiSystem:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            LtiSystem(np.eye(2), np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            LtiSystem(np.eye(2), np.eye(2), np.zeros(3))
        with pytest.raises(ValueError):
            LtiSystem(np.ones((2, 3)), np.eye(2), np.zeros(2))

    def test_rejects_nonfinite(self):
        A = np.eye(2)
        A[0, 1] = np.nan
        with pytest.raises(ValueError):
            LtiSystem(A, np.eye(2), np.zeros(2))

    def test_affine_and_step(self):
        sys = LtiSystem.affine(0.5 * np.eye(2), [0.5, 1.0])
        assert sys.n == 2 and sys.p == 2
        np.testing.assert_allclose(sys.step(np.array([1.0, 2.0])), [1.0, 2.0])

    def test_event_changes_w(self):
        sys = LtiSystem.affine(0.5 * np.eye(1), [1.0])
        inputs = sys.apply_event(sys.initial_inputs(), {"w": [3.0]})
        assert sys.step(np.zeros(1), inputs)[0] == 3.0
        with pytest.raises(Exception):
            sys.apply_event(sys.initial_inputs(), {"capacities": [1.0]})

    def test_dict_round_trip(self, rng):
        sys = LtiSystem(rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2))
        back = LtiSystem.from_dict(sys.to_dict())
        np.testing.assert_array_equal(back.A, sys.A)
        np.testing.assert_array_equal(back.C, sys.C)
        np.testing.assert_array_equal(back.w, sys.w)

    def test_matrix_json(self, rng):
        M = rng.standard_normal((2, 5))
        np.testing.assert_array_equal(matrix_from_json(matrix_to_json(M)), M)


class TestPartition:
    def test_blocks_tile(self, rng):
        A = rng.standard_normal((5, 5))
        p = PartitionedLtiSystem(LtiSystem.affine(A, np.zeros(5)), 2)
        np.testing.assert_array_equal(np.block([[p.A11, p.A12], [p.A21, p.A22]]), A)
        assert (p.n1, p.n2) == (2, 3)

    @pytest.mark.parametrize("n1", [0, 5])
    def test_bad_split(self, n1):
        with pytest.raises(ValueError):
            PartitionedLtiSystem(LtiSystem.affine(np.eye(5), np.zeros(5)), n1)


class TestFixedPoint:
    def test_diagonal(self):
        fp = fixed_point(LtiSystem.affine(0.5 * np.eye(2), [0.5, 1.0]))
        np.testing.assert_allclose(fp.x, [1.0, 2.0])
        assert fp.unique

    def test_identity_non_unique(self):
        fp = fixed_point(LtiSystem.affine(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(fp.x, [0.0, 0.0])
        assert not fp.unique

    def test_inconsistent(self):
        with pytest.raises(Degenerate):
            fixed_point(LtiSystem.affine(np.eye(2), [1.0, 0.0]))

    def test_random_residual(self, rng):
        for _ in range(20):
            A = rng.standard_normal((5, 5))
            A *= 0.9 / spectral_radius(A)
            C, w = rng.standard_normal((5, 3)), rng.standard_normal(3)
            fp = fixed_point(LtiSystem(A, C, w))
            cw = C @ w
            assert np.linalg.norm((np.eye(5) - A) @ fp.x - cw) <= 1e-10 * (1 + np.linalg.norm(cw))


class TestSpectrum:
    def test_diagonal(self):
        rep = spectrum(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(np.sort(rep.eigenvalues.real), [1, 2])
        assert rep.diagonalizable and rep.real
        np.testing.assert_allclose(np.abs(rep.J), np.eye(2), atol=1e-12)

    def test_rotation_scaling(self):
        rep = spectrum(np.array([[0.9, -0.3], [0.3, 0.9]]))
        np.testing.assert_allclose(np.sort_complex(rep.eigenvalues), [0.9 - 0.3j, 0.9 + 0.3j])
        assert not rep.real

    def test_jordan_block(self):
        assert not spectrum(np.array([[1.0, 1.0], [0.0, 1.0]])).diagonalizable

    def test_reconstruction(self, rng):
        for n in range(2, 21, 3):
            M = rng.standard_normal((n, n))
            rep = spectrum(M)
            if rep.diagonalizable:
                assert np.linalg.norm(rep.reconstruct() - M) <= 1e-8 * np.linalg.norm(M)

    def test_repeated_eigenvalue_is_diagonalizable(self, rng):
        T = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        M = T @ np.diag([0.5, 0.5, 0.2, 0.9]) @ np.linalg.inv(T)
        rep = spectrum(M)
        assert rep.diagonalizable and rep.real

    def test_clusters(self):
        cl = eigen_clusters(np.array([1.0, 1.0 + 1e-9, 2.0]), 2.0, Tolerances())
        assert sorted(len(c) for c in cl) == [1, 2]


class TestStability:
    @pytest.mark.parametrize("A, verdict", [
        (0.5 * np.eye(2), Stability.ASYMPTOTIC),
        (np.eye(2), Stability.MARGINAL),
        (np.diag([1.5, 0.5]), Stability.UNSTABLE),
        (np.array([[1.0, 1.0], [0.0, 1.0]]), Stability.UNSTABLE),
    ])
    def test_examples(self, A, verdict):
        assert stability_verdict(LtiSystem.affine(A, np.zeros(2))) is verdict

    def test_matches_power_iteration(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 6))
            A = rng.standard_normal((n, n))
            A *= rng.uniform(0.5, 1.5) / spectral_radius(A)
            rho = spectral_radius(A)
            if abs(rho - 1) < 0.02:
                continue
            v = rng.standard_normal(n)
            for _ in range(200):
                v = A @ v
                nv = np.linalg.norm(v)
                if nv > 1e100 or nv < 1e-100:
                    break
                v /= nv
            grows = rho > 1
            verdict = stability_verdict(LtiSystem.affine(A, np.zeros(n)))
            assert (verdict is Stability.UNSTABLE) == grows


class TestProblems:
    def test_quadratic_objective(self, rng):
        Q = random_spd(3, 1, 4, rng)
        obj = QuadraticObjectiveO(Q, np.ones(3), np.eye(3), 0.2)
        sys = obj.to_system()
        np.testing.assert_allclose(sys.A, np.eye(3) - 0.2 * Q)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(obj.gradient(x), Q @ x + 1)

    def test_quadratic_objective_validation(self):
        with pytest.raises(ValueError):
            QuadraticObjectiveO(np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            QuadraticObjectiveO(np.eye(2), np.zeros(2), np.diag([1.0, 0.0]))

    def test_saddle_kkt(self, rng):
        prob = SaddleProblem(random_spd(3, 1, 3, rng), rng.standard_normal(3),
                             rng.standard_normal((2, 3)), rng.standard_normal(2))
        x, lam = prob.kkt_solution()
        np.testing.assert_allclose(prob.Q22 @ x + prob.r + prob.B.T @ lam, 0, atol=1e-12)
        np.testing.assert_allclose(prob.B @ x, prob.b, atol=1e-12)
        np.testing.assert_allclose(prob.conjugate_argmin(lam), x, atol=1e-12)

    def test_saddle_system_layout(self):
        prob = SaddleProblem(np.diag([1.0, 2.0]), np.zeros(2), np.array([[1.0, 1.0]]), [1.0], 0.1, 0.2)
        psys = prob.to_system()
        np.testing.assert_array_equal(psys.A11, [[1.0]])
        np.testing.assert_allclose(psys.A12, 0.2 * prob.B)
        np.testing.assert_allclose(psys.A21, -0.1 * prob.B.T)
        np.testing.assert_allclose(psys.A22, np.eye(2) - 0.1 * prob.Q22)

    def test_params(self):
        assert FunctionClassParams(1, 9).kappa == 9
        assert FunctionClassParams(0, 4).kappa == np.inf
        with pytest.raises(ValueError):
            FunctionClassParams(2, 1)

    def test_trajectory_shape_check(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros(3))


def test_null_space(rng):
    B = rng.standard_normal((2, 5))
    Z = null_space(B)
    assert Z.shape == (5, 3)
    np.testing.assert_allclose(B @ Z, 0, atol=1e-12)


class TestTolerances:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv(ENV_VAR, '{"recon": 1e-6}')
        assert get_tolerances().recon == 1e-6
        assert get_tolerances().psd == Tolerances().psd

    def test_env_rejects_unknown(self, monkeypatch):
        monkeypatch.setenv(ENV_VAR, '{"bogus": 1}')
        with pytest.raises(ValueError):
            get_tolerances()

    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv(ENV_VAR, '{"recon": 1e-6}')
        assert get_tolerances(Tolerances()).recon == 1e-8
