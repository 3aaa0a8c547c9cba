"""VAR(1) generator and risk oracles against independent linear algebra.

The stationary covariance check uses the vectorized fixed point
vec(S) = (I - A kron A)^{-1} vec(Q), a different algorithm from the
package's iterated recursion.
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable_spec
from ucast.errors import ParameterError, ShapeError
from ucast.varlab import (DEFAULT_TARGET_RADIUS, VarProcessSpec,
                          bayes_risk_ci_cd, bayes_risk_sequence,
                          make_var_spec, monte_carlo_risks, simulate,
                          spectral_radius, stationary_covariance)


def kron_stationary(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    vec_s = np.linalg.solve(np.eye(n * n) - np.kron(a, a), q.reshape(-1))
    return vec_s.reshape(n, n)


class TestSpectralRadius:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_eigvals_dense(self, seed):
        # arbitrary dense matrices usually have an equal-modulus complex
        # dominant pair; the growth ratio then oscillates forever and the
        # tail geometric mean is only O(1/iters) accurate.  0.5% is the
        # estimator's contract for that case and is ample for rescaling.
        a = np.random.default_rng(seed).normal(size=(9, 9))
        ref = float(np.abs(np.linalg.eigvals(a)).max())
        assert spectral_radius(a) == pytest.approx(ref, rel=5e-3)

    def test_real_dominant_eigenvalue_is_precise(self):
        # the lab's own generators have real dominant eigenvalues, where the
        # per-step ratio converges and the early exit fires
        a = np.abs(np.random.default_rng(0).normal(size=(9, 9)))
        ref = float(np.abs(np.linalg.eigvals(a)).max())
        assert spectral_radius(a) == pytest.approx(ref, rel=1e-6)

    def test_rotation_dominant_complex_pair(self):
        theta = 0.7
        rot = 1.3 * np.array([[np.cos(theta), -np.sin(theta)],
                              [np.sin(theta), np.cos(theta)]])
        assert spectral_radius(rot) == pytest.approx(1.3, rel=1e-6)

    def test_diagonal(self):
        assert spectral_radius(np.diag([0.2, -0.9, 0.5])) == pytest.approx(0.9)

    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((4, 4))) == 0.0

    def test_nonsquare_rejected(self):
        with pytest.raises(ShapeError):
            spectral_radius(np.zeros((2, 3)))


class TestMakeVarSpec:
    def test_independent_is_diagonal_at_target(self):
        spec = make_var_spec("independent", 12, seed=1)
        off = spec.A - np.diag(np.diag(spec.A))
        assert np.all(off == 0)
        # drawn diagonals sit in [0.8, 1.0], always above the default target
        assert spectral_radius(spec.A) == pytest.approx(DEFAULT_TARGET_RADIUS,
                                                        rel=1e-6)
        assert np.all(np.diag(spec.A) > 0)

    def test_anti_self_zero_diagonal(self):
        spec = make_var_spec("anti_self", 10, seed=2)
        assert np.all(np.diag(spec.A) == 0)
        assert np.all(spec.A[~np.eye(10, dtype=bool)] > 0)
        assert spectral_radius(spec.A) == pytest.approx(DEFAULT_TARGET_RADIUS,
                                                        rel=1e-5)

    def test_unit_noise(self):
        spec = make_var_spec("anti_self", 5)
        assert np.array_equal(spec.noise_diag, np.ones(5))

    def test_deterministic_in_seed(self):
        a1 = make_var_spec("anti_self", 7, seed=42).A
        a2 = make_var_spec("anti_self", 7, seed=42).A
        a3 = make_var_spec("anti_self", 7, seed=43).A
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, a3)

    def test_explosive_target_allowed(self):
        spec = make_var_spec("anti_self", 6, seed=0, target_radius=1.05)
        assert spectral_radius(spec.A) == pytest.approx(1.05, rel=1e-5)

    def test_validation(self):
        with pytest.raises(ParameterError):
            make_var_spec("anti_self", 1)
        with pytest.raises(ParameterError):
            make_var_spec("anti_self", 4, target_radius=0.0)
        with pytest.raises(ParameterError):
            make_var_spec("anti_self", 4, target_radius=2.5)
        with pytest.raises(ParameterError):
            make_var_spec("unknown", 4)


class TestSpecValidation:
    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            VarProcessSpec(structure="custom", C=3, A=np.zeros((2, 2)),
                           noise_diag=np.ones(3))

    def test_noise_length_checked(self):
        with pytest.raises(ShapeError):
            VarProcessSpec(structure="custom", C=2, A=np.zeros((2, 2)),
                           noise_diag=np.ones(3))

    def test_noise_positivity(self):
        with pytest.raises(ParameterError):
            VarProcessSpec(structure="custom", C=2, A=np.zeros((2, 2)),
                           noise_diag=np.array([1.0, 0.0]))

    def test_dict_round_trip(self):
        spec = make_var_spec("anti_self", 4, seed=9)
        back = VarProcessSpec.from_dict(spec.to_dict())
        assert np.array_equal(back.A, spec.A)
        assert back.structure == spec.structure and back.seed == spec.seed


class TestSimulate:
    def test_shape_and_burn_in(self):
        spec = make_var_spec("independent", 3, seed=0)
        out = simulate(spec, steps=50, burn_in=10)
        assert out.shape == (3, 40)

    def test_burn_in_drops_prefix(self):
        spec = make_var_spec("anti_self", 3, seed=1)
        full = simulate(spec, steps=50, burn_in=0)
        tail = simulate(spec, steps=50, burn_in=10)
        assert np.array_equal(tail, full[:, 10:])

    def test_deterministic_and_seed_override(self):
        spec = make_var_spec("anti_self", 4, seed=5)
        assert np.array_equal(simulate(spec, 30), simulate(spec, 30))
        assert not np.array_equal(simulate(spec, 30),
                                  simulate(spec, 30, seed=6))

    def test_validation(self):
        spec = make_var_spec("anti_self", 3)
        with pytest.raises(ParameterError):
            simulate(spec, steps=0)
        with pytest.raises(ParameterError):
            simulate(spec, steps=10, burn_in=10)

    def test_follows_recursion(self):
        """Replaying the recursion from the same draws reproduces the output."""
        spec = make_var_spec("independent", 2, seed=3)
        out = simulate(spec, steps=5)
        # one-step consistency: residuals out[:, t+1] - A out[:, t] should be
        # standard-normal sized, never exploding
        resid = out[:, 1:] - spec.A @ out[:, :-1]
        assert np.all(np.abs(resid) < 6.0)


class TestStationaryCovariance:
    @pytest.mark.parametrize("c,seed", [(2, 0), (3, 1), (5, 2), (8, 3)])
    def test_matches_kronecker_solve(self, c, seed):
        spec = random_stable_spec(c, seed)
        s = stationary_covariance(spec)
        ref = kron_stationary(spec.A, spec.noise_cov)
        assert np.allclose(s, ref, rtol=1e-8, atol=1e-10)

    def test_symmetric_positive_definite(self):
        spec = random_stable_spec(6, 11)
        s = stationary_covariance(spec)
        assert np.allclose(s, s.T)
        assert np.all(np.linalg.eigvalsh(s) > 0)

    def test_diagonal_closed_form(self):
        # private AR(1) channels: S_ii = q_i / (1 - a_ii^2)
        a = np.diag([0.5, -0.8])
        spec = VarProcessSpec(structure="custom", C=2, A=a,
                              noise_diag=np.array([1.0, 2.0]))
        s = stationary_covariance(spec)
        assert s[0, 0] == pytest.approx(1.0 / (1 - 0.25), rel=1e-9)
        assert s[1, 1] == pytest.approx(2.0 / (1 - 0.64), rel=1e-9)
        assert abs(s[0, 1]) < 1e-12

    def test_explosive_rejected(self):
        spec = make_var_spec("anti_self", 4, target_radius=1.05)
        with pytest.raises(ParameterError):
            stationary_covariance(spec)


class TestTwoChannelRisks:
    def test_gap_identity_exact(self):
        for seed in range(10):
            spec = random_stable_spec(2, seed)
            pair = bayes_risk_ci_cd(spec)
            assert pair.gap == pytest.approx(
                pair.cross_coefficient ** 2 * pair.var_conditional, abs=1e-12)

    def test_matches_sequence_endpoints(self):
        spec = random_stable_spec(2, 21)
        pair = bayes_risk_ci_cd(spec, target=0)
        seq = bayes_risk_sequence(spec, target=0)
        assert pair.r_ci == pytest.approx(seq.risks[0], abs=1e-10)
        assert pair.r_cd == pytest.approx(seq.risks[1], abs=1e-10)

    def test_target_one_mirrors_swapped_spec(self):
        spec = random_stable_spec(2, 22)
        swapped = VarProcessSpec(
            structure="custom", C=2, A=spec.A[::-1, ::-1].copy(),
            noise_diag=spec.noise_diag[::-1].copy())
        pair = bayes_risk_ci_cd(spec, target=1)
        mirror = bayes_risk_ci_cd(swapped, target=0)
        assert pair.r_ci == pytest.approx(mirror.r_ci, rel=1e-9)
        assert pair.r_cd == pytest.approx(mirror.r_cd, rel=1e-9)

    def test_no_cross_coefficient_no_gap(self):
        a = np.array([[0.6, 0.0], [0.3, 0.2]])
        spec = VarProcessSpec(structure="custom", C=2, A=a,
                              noise_diag=np.ones(2))
        assert bayes_risk_ci_cd(spec, target=0).gap == pytest.approx(0.0)

    def test_validation(self):
        with pytest.raises(ParameterError):
            bayes_risk_ci_cd(random_stable_spec(3, 0))
        with pytest.raises(ParameterError):
            bayes_risk_ci_cd(random_stable_spec(2, 0), target=2)


class TestRiskSequence:
    @given(seed=st.integers(0, 10_000), c=st.integers(2, 8))
    @settings(max_examples=50, deadline=None)
    def test_monotone_to_noise_floor(self, seed, c):
        spec = random_stable_spec(c, seed)
        report = bayes_risk_sequence(spec, target=0)
        risks = report.risks
        assert np.all(np.diff(risks) <= 1e-9)
        assert risks[-1] == pytest.approx(spec.noise_diag[0], abs=1e-9)
        gaps = report.gaps
        assert np.all(np.diff(gaps) >= -1e-9)
        s = stationary_covariance(spec)
        var_y = float(spec.A[0] @ s @ spec.A[0] + spec.noise_diag[0])
        assert report.var_y == pytest.approx(var_y, rel=1e-9)
        assert risks[0] <= var_y + 1e-9

    def test_zero_coefficient_channel_is_inert(self):
        spec = random_stable_spec(4, 33)
        padded_a = np.zeros((5, 5))
        padded_a[:4, :4] = spec.A
        padded = VarProcessSpec(
            structure="custom", C=5, A=padded_a,
            noise_diag=np.concatenate([spec.noise_diag, [1.0]]))
        base = bayes_risk_sequence(spec, target=0).risks
        ext = bayes_risk_sequence(padded, target=0).risks
        assert np.allclose(ext[:4], base, atol=1e-9)
        assert ext[4] == pytest.approx(base[-1], abs=1e-9)

    def test_target_validated(self):
        with pytest.raises(ParameterError):
            bayes_risk_sequence(random_stable_spec(3, 0), target=3)


class TestMonteCarlo:
    def test_matches_closed_form(self):
        spec = random_stable_spec(3, 7)
        closed = bayes_risk_sequence(spec, target=0).risks
        mc = monte_carlo_risks(spec, n_samples=400_000, target=0)
        for p in range(1, 4):
            assert mc[p] == pytest.approx(closed[p - 1], rel=0.02)

    def test_subset_selection(self):
        spec = random_stable_spec(4, 8)
        mc = monte_carlo_risks(spec, n_samples=1000, subset_sizes=[2, 4])
        assert set(mc) == {2, 4}

    def test_validation(self):
        spec = random_stable_spec(2, 0)
        with pytest.raises(ParameterError):
            monte_carlo_risks(spec, n_samples=0)
        with pytest.raises(ParameterError):
            monte_carlo_risks(spec, n_samples=10, subset_sizes=[3])
