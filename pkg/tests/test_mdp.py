import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisimetric.mdp import (
    FORWARD,
    ROTATE,
    Mdp,
    MdpError,
    gridworld_state,
    load_mdp,
    make_coffee_robot,
    make_gridworld,
    random_mdp,
    save_mdp,
    validate_mdp,
    value_iteration,
)

from conftest import chain_mdp


def test_degenerate_mdp_is_valid():
    validate_mdp(Mdp([[0.0]], [[[1.0]]]))


def test_non_stochastic_row_rejected():
    with pytest.raises(MdpError, match="row not stochastic at state 0, action 0"):
        validate_mdp(Mdp([[0.0], [0.0]], [[[0.9, 0.0]], [[0.0, 1.0]]]))


def test_row_within_tolerance_is_valid():
    validate_mdp(Mdp([[0.0], [0.0]], [[[0.5, 0.5 + 1e-12]], [[0.0, 1.0]]]))


def test_negative_probability_reported_with_indices():
    with pytest.raises(MdpError, match="negative probability .* state 1, action 0, next state 0"):
        validate_mdp(Mdp([[0.0], [0.0]], [[[1.0, 0.0]], [[-0.5, 1.5]]]))


def test_non_finite_reward_rejected():
    with pytest.raises(MdpError, match="non-finite reward at state 0, action 1"):
        validate_mdp(Mdp([[0.0, np.nan]], [[[1.0], [1.0]]]))


def test_mdp_is_immutable():
    m = make_gridworld(3)
    with pytest.raises(ValueError):
        m.reward[0, 0] = 5.0


class TestValueIteration:
    def test_single_state_geometric_series(self):
        vf = value_iteration(chain_mdp([1.0]), 0.5, 1e-10)
        assert vf.values[0] == pytest.approx(2.0, abs=1e-9)

    def test_zero_rewards(self):
        vf = value_iteration(Mdp(np.zeros((3, 2)), np.tile(np.eye(3)[:, None, :], (1, 2, 1))), 0.9)
        assert np.all(vf.values == 0)

    def test_two_absorbing_states(self):
        # r / (1 - gamma) per absorbing state
        vf = value_iteration(chain_mdp([0.0, 1.0]), 0.9, 1e-8)
        np.testing.assert_allclose(vf.values, [0.0, 10.0], atol=1e-6)

    def test_residual_below_tolerance(self):
        mdp = random_mdp(8, 3, np.random.default_rng(3))
        vf = value_iteration(mdp, 0.95, 1e-6)
        assert vf.residual <= 1e-6
        backup = np.max(mdp.reward + 0.95 * mdp.transition @ vf.values, axis=1)
        assert np.max(np.abs(backup - vf.values)) <= 1e-6

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
    def test_gamma_out_of_range(self, gamma):
        with pytest.raises(ValueError):
            value_iteration(chain_mdp([1.0]), gamma)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), delta=st.floats(-5, 5), gamma=st.floats(0.1, 0.95))
    def test_shift_invariance(self, seed, delta, gamma):
        mdp = random_mdp(5, 2, np.random.default_rng(seed))
        shifted = Mdp(mdp.reward + delta, mdp.transition)
        tol = 1e-9
        v0 = value_iteration(mdp, gamma, tol).values
        v1 = value_iteration(shifted, gamma, tol).values
        # each iterate is within gamma/(1-gamma)*tol of the fixed point
        slack = 2 * gamma / (1 - gamma) * tol + 1e-9
        np.testing.assert_allclose(v1 - v0, delta / (1 - gamma), atol=slack)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_values_within_reward_bounds(self, seed):
        mdp = random_mdp(6, 2, np.random.default_rng(seed))
        g = 0.9
        v = value_iteration(mdp, g, 1e-8).values
        assert np.all(v >= mdp.reward.min() / (1 - g) - 1e-9)
        assert np.all(v <= mdp.reward.max() / (1 - g) + 1e-9)


class TestGridworld:
    @pytest.mark.parametrize("n,size", [(1, 4), (3, 36), (5, 100), (7, 196)])
    def test_sizes(self, n, size):
        m = make_gridworld(n)
        assert (m.n_states, m.n_actions) == (size, 2)
        validate_mdp(m)

    @pytest.mark.parametrize("n", [0, 2, 4, -1])
    def test_even_rejected(self, n):
        with pytest.raises(ValueError):
            make_gridworld(n)

    def test_wall_is_noop(self):
        m = make_gridworld(3)
        s = gridworld_state(3, 0, 0, 0)  # top-left, facing north
        assert m.transition[s, FORWARD, s] == 1.0

    def test_forward_and_rotate(self):
        m = make_gridworld(3)
        s = gridworld_state(3, 0, 0, 1)  # facing east
        assert m.transition[s, FORWARD, gridworld_state(3, 0, 1, 1)] == 1.0
        assert m.transition[s, ROTATE, gridworld_state(3, 0, 0, 2)] == 1.0

    def test_reward_only_in_center(self):
        m = make_gridworld(5)
        center = [gridworld_state(5, 2, 2, h) for h in range(4)]
        assert np.all(m.reward[center] == 1.0)
        assert m.reward.sum() == 8.0

    @pytest.mark.parametrize("n", [3, 5])
    def test_rotation_symmetry_of_values(self, n):
        m = make_gridworld(n)
        v = value_iteration(m, 0.9, 1e-10).values
        perm = np.empty(m.n_states, dtype=int)
        for row in range(n):
            for col in range(n):
                for h in range(4):
                    # quarter turn clockwise: (row, col) -> (col, n-1-row), heading + 1
                    perm[gridworld_state(n, row, col, h)] = gridworld_state(n, col, n - 1 - row, (h + 1) % 4)
        np.testing.assert_allclose(v[perm], v, atol=1e-8)


class TestCoffee:
    def test_shape(self):
        m = make_coffee_robot()
        assert (m.n_states, m.n_actions) == (64, 4)
        validate_mdp(m)

    def test_stochastic(self):
        m = make_coffee_robot()
        assert np.any((m.transition > 0).sum(axis=2) >= 2)
        np.testing.assert_allclose(m.transition.sum(axis=2), 1.0, atol=1e-12)

    def test_deliver_succeeds_with_prob_08(self):
        m = make_coffee_robot()
        s = 1 << 4  # at office, robot has coffee, nothing else
        assert m.transition[s, 3, 1 << 5] == pytest.approx(0.8)
        assert m.transition[s, 3, 0] == pytest.approx(0.2)

    def test_rewards(self):
        m = make_coffee_robot()
        assert m.reward[0, 0] == pytest.approx(0.1)  # dry, no coffee
        assert m.reward[(1 << 5) | (1 << 2), 0] == pytest.approx(0.9)  # wet, user served


class TestFiles:
    def test_round_trip(self, tmp_path):
        m = make_gridworld(3)
        save_mdp(m, tmp_path / "g.json")
        assert load_mdp(tmp_path / "g.json") == m

    def test_round_trip_is_bit_exact(self, tmp_path):
        m = random_mdp(7, 3, np.random.default_rng(11))
        save_mdp(m, tmp_path / "r.json")
        back = load_mdp(tmp_path / "r.json")
        assert np.array_equal(back.transition, m.transition)
        assert np.array_equal(back.reward, m.reward)

    def test_schema_fields(self, tmp_path):
        save_mdp(make_coffee_robot(), tmp_path / "c.json")
        data = json.loads((tmp_path / "c.json").read_text())
        assert data["schema"] == "mdp-v1"
        assert (data["n_states"], data["n_actions"]) == (64, 4)
        assert len(data["labels"]) == 64

    def test_missing_transitions(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"schema": "mdp-v1", "n_states": 1, "n_actions": 1, "rewards": [[0]]}))
        with pytest.raises(MdpError, match="transitions"):
            load_mdp(tmp_path / "bad.json")

    def test_schema_mismatch(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"schema": "mdp-v0"}))
        with pytest.raises(MdpError, match="schema"):
            load_mdp(tmp_path / "bad.json")

    def test_zero_row_rejected_on_load(self, tmp_path):
        data = {"schema": "mdp-v1", "n_states": 2, "n_actions": 1, "rewards": [[0], [1]],
                "transitions": [[[0, 0]], [[0, 1]]]}
        (tmp_path / "bad.json").write_text(json.dumps(data))
        with pytest.raises(MdpError, match="row not stochastic"):
            load_mdp(tmp_path / "bad.json")

    def test_not_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{nope")
        with pytest.raises(MdpError):
            load_mdp(tmp_path / "bad.json")
