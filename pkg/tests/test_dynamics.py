import numpy as np
import pytest

from trackctl.dynamics import k_step_state, make_transition, process_noise_cov, propagate


def test_make_transition_unit_dt_2d():
    model = make_transition(dt=1.0, d=2)
    assert model.F.shape == (4, 4)
    np.testing.assert_array_equal(model.F[0], [1, 0, 1, 0])
    np.testing.assert_array_equal(model.G, [[0.5, 0], [0, 0.5], [1, 0], [0, 1]])


def test_make_transition_half_dt_blocks():
    model = make_transition(dt=0.5, d=2)
    np.testing.assert_allclose(model.F[:2, 2:], 0.5 * np.eye(2))
    np.testing.assert_allclose(model.G[:2], 0.125 * np.eye(2))


def test_make_transition_3d_shapes():
    model = make_transition(dt=1.0, d=3)
    assert model.F.shape == (6, 6)
    assert model.G.shape == (6, 3)


@pytest.mark.parametrize("dt,d", [(0.0, 2), (-1.0, 2), (1.0, 1), (1.0, 4)])
def test_make_transition_rejects_bad_input(dt, d):
    with pytest.raises(ValueError):
        make_transition(dt, d)


def test_propagate_coast():
    model = make_transition(1.0, 2)
    out = propagate(np.array([0.0, 0.0, 1.0, 2.0]), np.zeros(2), model)
    np.testing.assert_allclose(out, [1, 2, 1, 2])


def test_propagate_from_rest():
    model = make_transition(1.0, 2)
    out = propagate(np.zeros(4), np.array([2.0, 0.0]), model)
    np.testing.assert_allclose(out, [1, 0, 2, 0])


def test_propagate_matches_dense_product():
    # Independent oracle: build F, G by hand and evaluate the product directly.
    dt = 0.5
    model = make_transition(dt, 2)
    x = np.array([10.0, -5.0, 3.0, 4.0])
    a = np.array([1.0, -1.0])
    F = np.array(
        [
            [1, 0, dt, 0],
            [0, 1, 0, dt],
            [0, 0, 1, 0],
            [0, 0, 0, 1],
        ],
        dtype=float,
    )
    G = np.array([[dt**2 / 2, 0], [0, dt**2 / 2], [dt, 0], [0, dt]])
    np.testing.assert_allclose(propagate(x, a, model), F @ x + G @ a, rtol=0, atol=0)


def test_propagate_dimension_mismatch():
    model = make_transition(1.0, 2)
    with pytest.raises(ValueError):
        propagate(np.zeros(6), np.zeros(2), model)
    with pytest.raises(ValueError):
        propagate(np.zeros(4), np.zeros(3), model)


def test_process_noise_cov_values():
    np.testing.assert_allclose(process_noise_cov(5.0, 2), 25.0 / 3.0 * np.eye(2))
    np.testing.assert_allclose(process_noise_cov(np.sqrt(3.0), 2), np.eye(2))
    eps = 1e-6
    np.testing.assert_allclose(process_noise_cov(eps, 3), eps**2 / 3.0 * np.eye(3))
    with pytest.raises(ValueError):
        process_noise_cov(0.0, 2)


def test_process_noise_matches_uniform_sampling():
    # Per-axis variance of U[-a_max, a_max] is a_max^2/3; check by sampling.
    rng = np.random.default_rng(7)
    a_max = 5.0
    draws = rng.uniform(-a_max, a_max, size=(200_000, 2))
    emp = np.var(draws, axis=0)
    np.testing.assert_allclose(emp, np.diag(process_noise_cov(a_max, 2)), rtol=0.02)


def test_k_step_state_base_case():
    model = make_transition(1.0, 2)
    x = np.array([1.0, 2.0, -1.0, 0.5])
    u = np.array([[0.3, -0.2]])
    np.testing.assert_allclose(k_step_state(x, u, model), propagate(x, u[0], model))


def test_k_step_state_coast():
    model = make_transition(1.0, 2)
    x = np.array([0.0, 0.0, 1.0, 0.0])
    out = k_step_state(x, np.zeros((3, 2)), model)
    np.testing.assert_allclose(out, [3, 0, 1, 0])


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_k_step_state_matches_iterated_propagate(d, k):
    rng = np.random.default_rng(42 + k + d)
    model = make_transition(0.7, d)
    x = rng.normal(size=2 * d)
    inputs = rng.normal(size=(k, d))
    expected = x
    for i in range(k):
        expected = propagate(expected, inputs[i], model)
    np.testing.assert_allclose(k_step_state(x, inputs, model), expected, rtol=0, atol=1e-12)


def test_k_step_state_rejects_empty():
    model = make_transition(1.0, 2)
    with pytest.raises(ValueError):
        k_step_state(np.zeros(4), np.zeros((0, 2)), model)


def test_transition_determinant_one():
    for dt in (0.1, 1.0, 3.5):
        model = make_transition(dt, 2)
        assert abs(np.linalg.det(model.F) - 1.0) < 1e-12


def test_process_noise_eigenvalues():
    Q = process_noise_cov(5.0, 3)
    np.testing.assert_allclose(Q, Q.T)
    np.testing.assert_allclose(np.linalg.eigvalsh(Q), 25.0 / 3.0)
