import math

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from freqctl.errors import DetectabilityError, DimensionError, RiccatiError
from freqctl.mipc import build_linear_model
from freqctl.netmodel import BusSets, ReducedNetwork, dc_partition
from freqctl.observer import (
    AugmentedModel,
    CommMask,
    DisturbanceObserver,
    ObserverConfig,
    ObserverState,
    build_augmented,
    compute_gain,
    error_dynamics,
    predict,
    riccati_doubling,
    spectral_radius,
    unobservable_directions,
    update,
)
from freqctl.plant import MachineParams


def scalar_aug(a=0.5):
    return AugmentedModel(np.array([[a]]), np.zeros((1, 1)), np.array([[1.0]]), 1, 0)


def single_machine_model():
    net = ReducedNetwork(np.zeros((1, 1)), np.zeros((1, 1)), np.ones(1), BusSets((0,), ()))
    params = MachineParams(m=[2.0], d=[1.0], droop=[0.05], tau_g=[1.0])
    return build_linear_model(dc_partition(net), params, 0.05)


def run_linear(model, obs, d_true, steps, noise=0.0, rng=None):
    """Open-loop linear plant with a constant disturbance, observed through ``obs``."""
    x = np.zeros(model.nx)
    u = np.zeros(model.nu)
    obs.reset(x)
    d_hist, innov_hist = [], []
    for k in range(steps):
        x = model.step(x, u, d_true)
        y = x + (noise * rng.standard_normal(model.nx) if noise else 0.0)
        obs.predict(u)
        innov_hist.append(np.abs(obs.update(y)).max())
        d_hist.append(obs.d_hat_full.copy())
    return np.array(d_hist), np.array(innov_hist)


class TestRiccati:
    def test_scalar_closed_form(self):
        # P satisfies P^2 - 0.25 P - 1 = 0 for a = 0.5, q = r = 1
        P_ref = (0.25 + math.sqrt(0.0625 + 4.0)) / 2
        aug = scalar_aug()
        K = compute_gain(aug, np.eye(1), np.eye(1))
        assert K[0, 0] == pytest.approx(P_ref / (P_ref + 1.0), rel=1e-12)
        P = riccati_doubling(aug.A, aug.C, np.eye(1), np.eye(1))
        assert P[0, 0] == pytest.approx(P_ref, rel=1e-12)

    def test_doubling_matches_scipy(self, rng):
        for _ in range(5):
            n = 4
            A = rng.standard_normal((n, n)) * 0.6
            C = rng.standard_normal((2, n))
            Q = np.eye(n) * 0.1
            R = np.eye(2) * 0.5
            ref = solve_discrete_are(A.T, C.T, Q, R)
            assert np.allclose(riccati_doubling(A, C, Q, R), ref, rtol=1e-9, atol=1e-12)

    def test_gain_shrinks_with_noise(self):
        A = np.array([[1.0, 0.05], [0.0, 1.0]])
        aug = AugmentedModel(A, np.zeros((2, 1)), np.array([[1.0, 0.0]]), 2, 0)
        norms = [np.linalg.norm(compute_gain(aug, 1e-3 * np.eye(2), r * np.eye(1))) for r in (1e-3, 1e-1, 1e1)]
        assert norms[0] > norms[1] > norms[2]

    def test_stable_error_dynamics(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        obs = DisturbanceObserver(model)
        assert spectral_radius(obs.aug, obs.K) < 1.0

    def test_bad_covariances(self):
        aug = scalar_aug()
        with pytest.raises(DimensionError):
            compute_gain(aug, np.eye(2), np.eye(1))
        with pytest.raises(ValueError):
            compute_gain(aug, np.eye(1), np.zeros((1, 1)))

    def test_undetectable_pair_fails(self):
        # an unmeasured unstable mode has no stabilizing solution
        aug = AugmentedModel(np.diag([1.2, 0.5]), np.zeros((2, 1)), np.array([[0.0, 1.0]]), 2, 0)
        with pytest.raises((RiccatiError, np.linalg.LinAlgError, ValueError)):
            compute_gain(aug, np.eye(2), np.eye(1))


class TestAugmentation:
    def test_no_disturbance_keeps_model(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        aug = build_augmented(model, np.zeros((model.nx, 0)))
        assert np.array_equal(aug.A, model.A) and np.array_equal(aug.B, model.Bu)

    def test_structure(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        aug = build_augmented(model, model.Bd, C=np.eye(6))
        assert np.array_equal(aug.A[:6, 6:], model.Bd)
        assert np.array_equal(aug.A[6:, 6:], np.eye(3)) and np.all(aug.A[6:, :6] == 0)

    def test_duplicate_disturbance_columns(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        col = model.Bd[:, :1]
        with pytest.raises(DetectabilityError) as err:
            build_augmented(model, np.hstack([col, col]))
        assert err.value.directions.shape[1] >= 1

    def test_speed_only_single_machine(self):
        # no network coupling: the angle is an unobserved integrator
        model = single_machine_model()
        mask = CommMask.full(1, "omega")
        with pytest.raises(DetectabilityError):
            build_augmented(model, model.Bd, C=mask.output_matrix(2))

    def test_single_machine_both_channels(self):
        model = single_machine_model()
        aug = build_augmented(model, model.Bd, C=np.eye(2))
        assert aug.nz == 3

    def test_pbh_directions(self):
        A = np.diag([1.0, 0.5])
        C = np.array([[0.0, 1.0]])
        dirs = unobservable_directions(A, C)
        assert dirs.shape == (2, 1) and abs(abs(dirs[0, 0]) - 1.0) < 1e-12


class TestFilterSteps:
    def test_predict_carries_disturbance(self):
        aug = AugmentedModel(np.array([[0.9, 0.1], [0.0, 1.0]]), np.array([[1.0], [0.0]]),
                             np.array([[1.0, 0.0]]), 1, 1)
        s = ObserverState(np.array([1.0]), np.array([2.0]), np.array([[0.5], [0.1]]))
        out = predict(s, aug, [0.3])
        assert out.x_hat[0] == pytest.approx(0.9 + 0.2 + 0.3) and out.d_hat[0] == 2.0
        assert not out.posterior

    def test_update_example(self):
        aug = AugmentedModel(np.eye(2), np.zeros((2, 1)), np.array([[1.0, 0.0]]), 1, 1)
        s = ObserverState(np.array([1.0]), np.array([0.0]), np.array([[0.5], [0.25]]))
        post, innov = update(s, [3.0], aug)
        assert innov.tolist() == [2.0]
        assert post.x_hat[0] == 2.0 and post.d_hat[0] == 0.5

    def test_zero_innovation_keeps_prior(self):
        aug = AugmentedModel(np.eye(2), np.zeros((2, 1)), np.array([[1.0, 0.0]]), 1, 1)
        s = ObserverState(np.array([1.5]), np.array([0.2]), np.array([[0.5], [0.25]]))
        post, innov = update(s, [1.5], aug)
        assert np.array_equal(post.z, s.z) and innov[0] == 0.0

    def test_wrong_measurement_length(self):
        aug = scalar_aug()
        with pytest.raises(DimensionError):
            update(ObserverState(np.zeros(1), np.zeros(0), np.ones((1, 1))), [1.0, 2.0], aug)

    def test_error_follows_error_dynamics(self, toy, toy_part, rng):
        model = build_linear_model(toy_part, toy.params, 0.05)
        obs = DisturbanceObserver(model, mask=CommMask((True, True, False)))
        d = np.array([0.0, 0.1, 0.0])
        x = rng.standard_normal(6) * 1e-3
        z_true = np.concatenate([x, d[obs.dist_machines]])
        obs.reset(np.zeros(6))
        e = obs.z - z_true
        Phi = error_dynamics(obs.aug, obs.K)
        for _ in range(5):
            x = model.step(x, np.zeros(1), d)
            obs.predict(np.zeros(1))
            obs.update(x)
            z_true = np.concatenate([x, d[obs.dist_machines]])
            e = Phi @ e
            assert np.abs((obs.z - z_true) - e).max() < 1e-12


class TestMask:
    def test_validation(self):
        with pytest.raises(ValueError):
            CommMask((False, False))
        with pytest.raises(ValueError):
            CommMask((True,), channels="delta")

    def test_output_matrix(self):
        C = CommMask((True, False, True)).output_matrix()
        assert C.shape == (4, 6)
        assert C @ np.arange(6.0) == pytest.approx([0.0, 2.0, 3.0, 5.0])
        assert CommMask((True, False), "omega").output_matrix().shape == (1, 4)

    def test_dimension_mismatch(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        with pytest.raises(DimensionError):
            DisturbanceObserver(model, mask=(True, False))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ObserverConfig(disturbance="some")
        with pytest.raises(ValueError):
            ObserverConfig(q_dist=0.0)


class TestConvergence:
    @pytest.mark.parametrize("mask", [None, (True, True, False)])
    def test_noiseless_step(self, toy, toy_part, mask):
        model = build_linear_model(toy_part, toy.params, 0.05)
        obs = DisturbanceObserver(model, mask=mask)
        d = np.array([0.0, 0.1, 0.0])
        d_hist, innov = run_linear(model, obs, d, 300)
        assert np.abs(d_hist[-1] - d).max() < 1e-6
        assert innov[-1] < 1e-9

    def test_reset_uses_measured_entries_only(self, toy, toy_part):
        model = build_linear_model(toy_part, toy.params, 0.05)
        obs = DisturbanceObserver(model, mask=(True, False, True))
        obs.reset(np.arange(1.0, 7.0))
        assert obs.state.x_hat.tolist() == [1.0, 0.0, 3.0, 4.0, 0.0, 6.0]
        assert np.all(obs.state.d_hat == 0)

    def test_noisy_average_is_unbiased(self, toy, toy_part):
        rng = np.random.default_rng(3)
        model = build_linear_model(toy_part, toy.params, 0.05)
        obs = DisturbanceObserver(model, mask=(True, True, False), noise=(1e-3, 1e-3))
        d = np.array([0.0, 0.1, 0.0])
        d_hist, _ = run_linear(model, obs, d, 800, noise=1e-3, rng=rng)
        mean = d_hist[400:, 1].mean()
        assert abs(mean - 0.1) / 0.1 < 0.05
