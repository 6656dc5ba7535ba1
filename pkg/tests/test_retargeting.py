"""Retargeting tests: analytic planar oracles and finite-difference checks."""
import numpy as np
import pytest

from dexteleop.errors import SolverDiverged, UnknownLink
from dexteleop.kinematics import JointConfig, load_robot_description
from dexteleop.retargeting import (HumanVectors, RetargetConfig, RetargetState,
                                   SolverSettings, VectorPair, compute_human_vectors,
                                   default_vector_pairs, objective, retarget)

import robot_fixtures as rf

L1, L2 = 0.06, 0.05


@pytest.fixture(scope="module")
def planar_model():
    return load_robot_description(rf.planar_finger_urdf(L1, L2))


@pytest.fixture(scope="module")
def hand_model():
    return load_robot_description(rf.five_finger_hand_urdf())


def planar_config(beta=0.0, **solver_kw):
    return RetargetConfig([VectorPair((0, 8), ("palm", "tip"))], alpha=1.0, beta=beta,
                          solver=SolverSettings(**solver_kw))


def planar_tip(q1, q2):
    """Independent analytic FK for the 2-DoF planar finger."""
    return np.array([L1 * np.cos(q1) + L2 * np.cos(q1 + q2),
                     L1 * np.sin(q1) + L2 * np.sin(q1 + q2),
                     0.0])


def planar_objective_grid(target, lower, upper, n=500, beta=0.0, q_prev=None):
    """Exhaustive n x n grid search, vectorized analytic FK."""
    q1 = np.linspace(lower, upper, n)
    q2 = np.linspace(lower, upper, n)
    g1, g2 = np.meshgrid(q1, q2, indexing="ij")
    x = L1 * np.cos(g1) + L2 * np.cos(g1 + g2)
    y = L1 * np.sin(g1) + L2 * np.sin(g1 + g2)
    obj = (target[0] - x) ** 2 + (target[1] - y) ** 2 + target[2] ** 2
    if beta > 0:
        obj = obj + beta * ((g1 - q_prev[0]) ** 2 + (g2 - q_prev[1]) ** 2)
    return float(obj.min())


# ---------------------------------------------------------------------------
# compute_human_vectors
# ---------------------------------------------------------------------------

def test_human_vectors_self_pair_zero():
    config = RetargetConfig([VectorPair((0, 0), ("palm", "palm"))])
    kp = rf.neutral_hand_keypoints()
    np.testing.assert_array_equal(compute_human_vectors(kp, config).vectors[0], np.zeros(3))


def test_human_vectors_wrist_origin_gives_tip_position():
    config = RetargetConfig([VectorPair((0, 8), ("palm", "tip"))])
    kp = rf.neutral_hand_keypoints()
    np.testing.assert_array_equal(compute_human_vectors(kp, config).vectors[0], kp[8])


def test_human_vectors_match_scalar_loop():
    rng = np.random.default_rng(0)
    pairs = [VectorPair((int(a), int(b)), ("palm", "tip"))
             for a, b in rng.integers(0, 21, size=(10, 2))]
    config = RetargetConfig(pairs)
    kp = rng.normal(size=(21, 3))
    kp[0] = 0.0
    got = compute_human_vectors(kp, config).vectors
    for i, pair in enumerate(pairs):
        expected = np.array([kp[pair.human[1]][k] - kp[pair.human[0]][k] for k in range(3)])
        np.testing.assert_array_equal(got[i], expected)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_zero_at_global_minimum(planar_model):
    config = planar_config(beta=0.3)
    q = np.array([0.4, -0.2])
    target = planar_tip(*q)
    value, grad = objective(q, HumanVectors([target]), q, config, planar_model)
    assert value == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_objective_single_pair_is_squared_distance(planar_model):
    config = planar_config(beta=0.0)
    q = np.array([0.3, 0.5])
    target = np.array([0.02, 0.03, 0.0])
    value, _ = objective(q, HumanVectors([target]), np.zeros(2), config, planar_model)
    assert value == pytest.approx(float(np.sum((target - planar_tip(*q)) ** 2)), abs=1e-12)


@pytest.mark.parametrize("builder,palm,tips", [
    (rf.five_finger_hand_urdf, "h_palm",
     ["h_thumb_tip", "h_index_tip", "h_middle_tip", "h_ring_tip", "h_pinky_tip"]),
    (rf.mimic_hand_urdf, "m_palm", ["m_f0_tip", "m_f1_tip", "m_f2_tip"]),
])
def test_objective_gradient_matches_finite_differences(builder, palm, tips):
    model = load_robot_description(builder())
    config = RetargetConfig(default_vector_pairs(palm, tips), alpha=1.2, beta=0.07)
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(20):
        q = rng.uniform(model.lower, model.upper)
        q_prev = rng.uniform(model.lower, model.upper)
        v = HumanVectors(rng.normal(scale=0.1, size=(len(config.vector_pairs), 3)))
        _, grad = objective(q, v, q_prev, config, model)
        fd = np.zeros_like(grad)
        for i in range(model.dof):
            qp, qm = q.copy(), q.copy()
            qp[i] += h
            qm[i] -= h
            fp, _ = objective(qp, v, q_prev, config, model)
            fm, _ = objective(qm, v, q_prev, config, model)
            fd[i] = (fp - fm) / (2 * h)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-9) < 1e-4


# ---------------------------------------------------------------------------
# retarget
# ---------------------------------------------------------------------------

def test_retarget_already_optimal_returns_warm_start(planar_model):
    config = planar_config(beta=0.1)
    q0 = np.array([0.5, -0.3])
    state = RetargetState(JointConfig(q0.copy()), initialized=True)
    out = retarget(state, HumanVectors([planar_tip(*q0)]), config, planar_model)
    np.testing.assert_allclose(out.values, q0, atol=1e-6)


def test_retarget_matches_grid_search_sample(planar_model):
    config = planar_config(beta=0.0, max_iterations=100, gradient_tolerance=1e-9,
                           step_tolerance=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(20):
        q_star = rng.uniform(planar_model.lower, planar_model.upper)
        target = planar_tip(*q_star)
        state = RetargetState()
        out = retarget(state, HumanVectors([target]), config, planar_model)
        achieved = float(np.sum((target - planar_tip(*out.values)) ** 2))
        oracle = planar_objective_grid(target, -1.5, 1.5, n=500)
        assert achieved <= oracle + 1e-4


def test_retarget_pins_active_joint_at_limit(planar_model):
    config = planar_config(beta=0.0, max_iterations=200, gradient_tolerance=1e-10,
                           step_tolerance=1e-13)
    # Both IK branches for this target need q1 > upper, so q1 must pin there.
    target = planar_tip(2.0, 0.3)
    state = RetargetState()
    out = retarget(state, HumanVectors([target]), config, planar_model)
    assert out.values[0] == pytest.approx(planar_model.upper[0], abs=1e-9)
    achieved = float(np.sum((target - planar_tip(*out.values)) ** 2))
    rng = np.random.default_rng(3)
    samples = rng.uniform(planar_model.lower, planar_model.upper, size=(2000, 2))
    sampled_best = min(float(np.sum((target - planar_tip(a, b)) ** 2)) for a, b in samples)
    assert achieved <= sampled_best + 1e-9
    assert np.all(out.values >= planar_model.lower) and np.all(out.values <= planar_model.upper)


def test_retarget_feasible_and_monotone(hand_model):
    tips = ["h_thumb_tip", "h_index_tip", "h_middle_tip", "h_ring_tip", "h_pinky_tip"]
    config = RetargetConfig(default_vector_pairs("h_palm", tips), beta=0.05)
    state = RetargetState()
    rng = np.random.default_rng(4)
    for _ in range(30):
        v = HumanVectors(rng.normal(scale=0.08, size=(len(config.vector_pairs), 3)))
        q_prev = state.q_prev.values.copy() if state.initialized \
            else hand_model.midrange_config().values
        out = retarget(state, v, config, hand_model)
        assert np.all(out.values >= hand_model.lower)
        assert np.all(out.values <= hand_model.upper)
        f_out, _ = objective(out.values, v, q_prev, config, hand_model)
        f_prev, _ = objective(q_prev, v, q_prev, config, hand_model)
        assert f_out <= f_prev + 1e-12


def test_retarget_larger_beta_never_moves_farther(hand_model):
    tips = ["h_thumb_tip", "h_index_tip", "h_middle_tip", "h_ring_tip", "h_pinky_tip"]
    pairs = default_vector_pairs("h_palm", tips)
    rng = np.random.default_rng(5)
    for _ in range(10):
        v = HumanVectors(rng.normal(scale=0.08, size=(len(pairs), 3)))
        moves = []
        for beta in (0.01, 0.2):
            config = RetargetConfig(pairs, beta=beta,
                                    solver=SolverSettings(max_iterations=300,
                                                          gradient_tolerance=1e-9))
            state = RetargetState()
            q_prev = hand_model.midrange_config().values
            out = retarget(state, v, config, hand_model)
            moves.append(np.linalg.norm(out.values - q_prev))
        assert moves[1] <= moves[0] + 1e-6


def test_retarget_scaling_consistency(hand_model):
    tips = ["h_thumb_tip", "h_index_tip", "h_middle_tip", "h_ring_tip", "h_pinky_tip"]
    pairs = default_vector_pairs("h_palm", tips)
    rng = np.random.default_rng(6)
    v = rng.normal(scale=0.08, size=(len(pairs), 3))
    c = 3.7
    out_a = retarget(RetargetState(), HumanVectors(v),
                     RetargetConfig(pairs, alpha=1.0, beta=0.05), hand_model)
    out_b = retarget(RetargetState(), HumanVectors(c * v),
                     RetargetConfig(pairs, alpha=1.0 / c, beta=0.05), hand_model)
    np.testing.assert_allclose(out_a.values, out_b.values, atol=1e-6)


def test_retarget_diverges_on_nonfinite_vectors(planar_model):
    config = planar_config()
    state = RetargetState()
    with pytest.raises((SolverDiverged, ValueError)):
        retarget(state, HumanVectors([[np.inf, 0, 0]]), config, planar_model)


def test_config_json_roundtrip(hand_model):
    tips = ["h_thumb_tip", "h_index_tip", "h_middle_tip", "h_ring_tip", "h_pinky_tip"]
    config = RetargetConfig(default_vector_pairs("h_palm", tips), alpha=1.1, beta=0.07)
    config.validate_against(hand_model)
    text = config.to_json()
    back = RetargetConfig.from_json(text)
    assert back.alpha == config.alpha
    assert back.beta == config.beta
    assert back.vector_pairs == config.vector_pairs


def test_config_rejects_unknown_link(hand_model):
    config = RetargetConfig([VectorPair((0, 8), ("h_palm", "nope"))])
    with pytest.raises(UnknownLink):
        config.validate_against(hand_model)
