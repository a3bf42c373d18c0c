import math

import numpy as np
import numpy.testing as npt
import pytest

from pigrn.dynamics import (
    GRAVITY,
    AnthroConfig,
    ArmModel,
    SingularInertiaError,
    arm_model_from_dict,
    arm_model_to_dict,
    build_arm_model,
    coriolis_vector,
    default_arm_model,
    dynamics_jacobians,
    forward_dynamics,
    gravity_vector,
    inertia_matrix,
    inverse_dynamics,
    kinetic_energy,
    load_anthro,
    load_arm_model,
    potential_energy,
    save_anthro,
    save_arm_model,
    total_energy,
)

MODEL = default_arm_model()


def random_states(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-math.pi, math.pi, (n, 2))
    qd = rng.uniform(-8.0, 8.0, (n, 2))
    qdd = rng.uniform(-40.0, 40.0, (n, 2))
    load = rng.uniform(0.0, 4.0, n)
    return q, qd, qdd, load


def test_inertia_symmetric_positive_definite():
    q, _, _, load = random_states(1000, seed=3)
    for i in range(1000):
        M = inertia_matrix(MODEL, q[i], load[i])
        assert M.shape == (2, 2)
        assert M[0, 1] == M[1, 0]
        eigs = np.linalg.eigvalsh(M)
        assert np.all(eigs > 0)


def test_inertia_elbow_entry_grows_with_load():
    q = np.array([0.7, 1.1])
    entries = [inertia_matrix(MODEL, q, m)[1, 1] for m in (0.0, 2.0, 4.0)]
    assert entries[0] < entries[1] < entries[2]


def test_coriolis_zero_at_rest():
    npt.assert_array_equal(coriolis_vector(MODEL, [0.3, 1.2], [0.0, 0.0], 2.0),
                           np.zeros(2))


def test_coriolis_quadratic_in_velocity():
    q = np.array([0.4, 0.9])
    qd = np.array([1.3, -2.1])
    base = coriolis_vector(MODEL, q, qd, 1.5)
    for s in (0.5, 2.0, -3.0):
        npt.assert_allclose(coriolis_vector(MODEL, q, s * qd, 1.5),
                            s * s * base, rtol=1e-12)


def test_coriolis_matches_christoffel_construction():
    # c_ijk = (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i) / 2, assembled from
    # finite differences of the inertia matrix only.
    q, qd, _, load = random_states(50, seed=11)
    h = 1e-6
    for t in range(50):
        dM = np.zeros((2, 2, 2))
        for k in range(2):
            qp, qm = q[t].copy(), q[t].copy()
            qp[k] += h
            qm[k] -= h
            dM[:, :, k] = (inertia_matrix(MODEL, qp, load[t])
                           - inertia_matrix(MODEL, qm, load[t])) / (2 * h)
        c = np.zeros(2)
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    gamma = 0.5 * (dM[i, j, k] + dM[i, k, j] - dM[j, k, i])
                    c[i] += gamma * qd[t, j] * qd[t, k]
        ref = coriolis_vector(MODEL, q[t], qd[t], load[t])
        npt.assert_allclose(c, ref, rtol=1e-6, atol=1e-9)


def test_gravity_zero_hanging_down():
    for m in (0.0, 2.0, 4.0):
        npt.assert_allclose(gravity_vector(MODEL, [0.0, 0.0], m),
                            np.zeros(2), atol=1e-15)


def test_gravity_horizontal_upper_arm():
    g = MODEL.g
    G = gravity_vector(MODEL, [math.pi / 2, 0.0], 0.0)
    npt.assert_allclose(G[1], MODEL.m2 * MODEL.lc2 * g, rtol=1e-12)
    npt.assert_allclose(
        G[0], (MODEL.m1 * MODEL.lc1 + MODEL.m2 * (MODEL.l1 + MODEL.lc2)) * g,
        rtol=1e-12)


def test_gravity_load_superposition():
    q = np.array([0.8, 0.5])
    g = MODEL.g
    diff = gravity_vector(MODEL, q, 4.0) - gravity_vector(MODEL, q, 0.0)
    hand = MODEL.l1 * math.sin(q[0]) + MODEL.l2 * math.sin(q[0] + q[1])
    expected = 4.0 * g * np.array([hand, MODEL.l2 * math.sin(q[0] + q[1])])
    npt.assert_allclose(diff, expected, rtol=1e-12)


def test_inverse_dynamics_rest_equilibrium():
    for m in (0.0, 4.0):
        npt.assert_allclose(
            inverse_dynamics(MODEL, [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], m),
            np.zeros(2), atol=1e-15)


def test_inverse_dynamics_static_equals_gravity():
    q = [math.pi / 2, 0.0]
    npt.assert_array_equal(
        inverse_dynamics(MODEL, q, [0.0, 0.0], [0.0, 0.0], 0.0),
        gravity_vector(MODEL, q, 0.0))


def test_round_trip_forward_inverse():
    q, qd, qdd, load = random_states(1000, seed=7)
    tau = inverse_dynamics(MODEL, q, qd, qdd, load)
    back = forward_dynamics(MODEL, q, qd, tau, load)
    assert np.max(np.abs(back - qdd)) < 1e-9


def test_forward_dynamics_gravity_compensation():
    q = np.array([0.9, 0.7])
    tau = gravity_vector(MODEL, q, 2.0)
    npt.assert_allclose(forward_dynamics(MODEL, q, [0.0, 0.0], tau, 2.0),
                        np.zeros(2), atol=1e-12)


def test_forward_dynamics_arm_falls():
    qdd = forward_dynamics(MODEL, [math.pi / 2, 0.0], [0.0, 0.0], [0.0, 0.0])
    assert qdd[0] < 0


def test_forward_dynamics_condition_limit():
    with pytest.raises(SingularInertiaError):
        forward_dynamics(MODEL, [0.1, 0.2], [0.0, 0.0], [0.0, 0.0],
                         cond_limit=1.0)


def test_jacobian_qdd_is_inertia_matrix():
    q, qd, qdd, load = random_states(10, seed=5)
    for t in range(10):
        _, _, d_qdd, _ = dynamics_jacobians(MODEL, q[t], qd[t], qdd[t], load[t])
        npt.assert_array_equal(d_qdd, inertia_matrix(MODEL, q[t], load[t]))


def test_jacobian_load_static_moment_arms():
    q = np.array([0.6, 1.0])
    zero = np.zeros(2)
    _, _, _, d_m = dynamics_jacobians(MODEL, q, zero, zero, 1.0)
    g = MODEL.g
    hand = MODEL.l1 * math.sin(q[0]) + MODEL.l2 * math.sin(q[0] + q[1])
    npt.assert_allclose(d_m, g * np.array([hand, MODEL.l2 * math.sin(q[0] + q[1])]),
                        rtol=1e-12)


def test_jacobians_match_finite_differences():
    q, qd, qdd, load = random_states(100, seed=13)
    h = 1e-6
    for t in range(100):
        d_q, d_qd, d_qdd, d_m = dynamics_jacobians(MODEL, q[t], qd[t], qdd[t],
                                                   load[t])
        for k in range(2):
            for idx, jac in ((0, d_q), (1, d_qd), (2, d_qdd)):
                arr = (q, qd, qdd)[idx]
                xp, xm = arr[t].copy(), arr[t].copy()
                xp[k] += h
                xm[k] -= h
                args_p = [q[t], qd[t], qdd[t]]
                args_m = [q[t], qd[t], qdd[t]]
                args_p[idx] = xp
                args_m[idx] = xm
                fd = (inverse_dynamics(MODEL, *args_p, load[t])
                      - inverse_dynamics(MODEL, *args_m, load[t])) / (2 * h)
                npt.assert_allclose(jac[:, k], fd, rtol=1e-5, atol=1e-5)
        fd_m = (inverse_dynamics(MODEL, q[t], qd[t], qdd[t], load[t] + h)
                - inverse_dynamics(MODEL, q[t], qd[t], qdd[t], load[t] - h)) / (2 * h)
        npt.assert_allclose(d_m, fd_m, rtol=1e-5, atol=1e-5)


def test_energy_conserved_in_free_swing():
    # RK4 at dt=1e-4 for 1 s with zero torque; total mechanical energy must
    # hold to 1e-4 relative.
    def deriv(state, load):
        q, qd = state[:2], state[2:]
        qdd = forward_dynamics(MODEL, q, qd, np.zeros(2), load)
        return np.concatenate([qd, qdd])

    load = 2.0
    state = np.array([1.2, 0.8, 0.0, 0.0])
    e0 = total_energy(MODEL, state[:2], state[2:], load)
    dt = 1e-4
    for _ in range(10000):
        k1 = deriv(state, load)
        k2 = deriv(state + 0.5 * dt * k1, load)
        k3 = deriv(state + 0.5 * dt * k2, load)
        k4 = deriv(state + dt * k3, load)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    e1 = total_energy(MODEL, state[:2], state[2:], load)
    assert abs(e1 - e0) / abs(e0) < 1e-4


def test_energy_components():
    q = np.array([0.5, 0.9])
    qd = np.array([1.0, -2.0])
    ke = kinetic_energy(MODEL, q, qd, 1.0)
    pe = potential_energy(MODEL, q, 1.0)
    assert ke > 0
    assert kinetic_energy(MODEL, q, np.zeros(2), 1.0) == 0
    npt.assert_allclose(total_energy(MODEL, q, qd, 1.0), ke + pe, rtol=1e-12)


def test_build_arm_model_scales_with_anthropometry():
    anthro = AnthroConfig(body_mass=80.0, body_height=1.80)
    model = build_arm_model(anthro)
    npt.assert_allclose(model.m1, 80.0 * anthro.upper_arm_mass_fraction)
    npt.assert_allclose(model.m2, 80.0 * anthro.forearm_hand_mass_fraction)
    npt.assert_allclose(model.l1, 1.80 * anthro.upper_arm_length_fraction)
    npt.assert_allclose(model.lc1, model.l1 * anthro.com_fraction_upper)
    rog = model.l1 * anthro.radius_of_gyration_fraction_upper
    npt.assert_allclose(model.I1, model.m1 * rog ** 2)


def test_model_validation():
    with pytest.raises(ValueError):
        ArmModel(l1=0.0, l2=0.3, m1=2.0, m2=1.6, lc1=0.1, lc2=0.1, I1=0.01,
                 I2=0.01)
    with pytest.raises(ValueError):
        ArmModel(l1=0.3, l2=0.3, m1=2.0, m2=1.6, lc1=0.4, lc2=0.1, I1=0.01,
                 I2=0.01)
    with pytest.raises(ValueError):
        AnthroConfig(body_mass=-1.0, body_height=1.7)
    with pytest.raises(ValueError):
        AnthroConfig(body_mass=70.0, body_height=1.7, com_fraction_upper=1.5)


def test_arm_model_file_round_trip(tmp_path):
    path = tmp_path / "arm.cfg"
    save_arm_model(MODEL, path)
    loaded = load_arm_model(path)
    assert loaded == MODEL


def test_arm_model_dict_round_trip():
    assert arm_model_from_dict(arm_model_to_dict(MODEL)) == MODEL


def test_anthro_file_round_trip(tmp_path):
    anthro = AnthroConfig(body_mass=73.0, body_height=1.74)
    path = tmp_path / "anthro.cfg"
    save_anthro(anthro, path)
    assert load_anthro(path) == anthro


def test_default_model_uses_gravity_constant():
    assert MODEL.g == GRAVITY
