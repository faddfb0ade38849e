import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgsmooth.errors import DimensionMismatch, InvalidCovariance, ParseError, ProblemError, SingularCovariance
from fgsmooth.experiments import ToyConfig, make_toy
from fgsmooth.fileio import format_problem, load_problem, parse_problem, save_problem
from fgsmooth.problem import (
    CloneSchedule,
    LinearProblem,
    ObservationFactor,
    PriorFactor,
    PropagationFactor,
    VariableLayout,
    assemble_stacked,
    build_clone_schedule,
    eval_cost,
)

from oracles import normal_solution, random_problem


def scalar_chain(n_states, obs=()):
    props = [PropagationFactor(k, [[1.0]], [0.0], [[1.0]]) for k in range(n_states - 1)]
    return LinearProblem(VariableLayout.uniform(n_states, 1), PriorFactor([0.0], [[1.0]]), props, list(obs))


def rel(i, j, d=1):
    """Scalar relative observation x_j - x_i."""
    return ObservationFactor([(i, -np.eye(d)[:1]), (j, np.eye(d)[:1])], [0.0], [[1.0]])


class TestLayout:
    def test_uniform(self):
        L = VariableLayout.uniform(3, 2)
        assert L.total == 6 and L.count == 3
        assert L.slice(1) == slice(2, 4)

    def test_mixed_dims(self):
        L = VariableLayout((2, 3, 3))
        assert L.offsets == (0, 2, 5, 8)
        parts = L.split(np.arange(8.0))
        assert [p.tolist() for p in parts] == [[0, 1], [2, 3, 4], [5, 6, 7]]

    @pytest.mark.parametrize("dims", [(), (0, 1), (-1,)])
    def test_invalid(self, dims):
        with pytest.raises(ProblemError):
            VariableLayout(dims)


class TestValidation:
    def test_arrays_are_read_only(self):
        p = scalar_chain(2)
        with pytest.raises(ValueError):
            p.prior.cov[0, 0] = 5.0

    def test_prior_dimension(self):
        with pytest.raises(DimensionMismatch):
            LinearProblem(VariableLayout.uniform(1, 2), PriorFactor([0.0], [[1.0]]), [])

    def test_missing_propagation(self):
        with pytest.raises(DimensionMismatch):
            LinearProblem(VariableLayout.uniform(3, 1), PriorFactor([0.0], [[1.0]]),
                          [PropagationFactor(0, [[1.0]], [0.0], [[1.0]])])

    def test_bad_F_shape(self):
        with pytest.raises(DimensionMismatch):
            LinearProblem(VariableLayout.uniform(2, 2), PriorFactor([0.0, 0.0], np.eye(2)),
                          [PropagationFactor(0, np.eye(3), [0.0, 0.0], np.eye(2))])

    def test_observation_of_missing_state(self):
        with pytest.raises(DimensionMismatch):
            scalar_chain(2, [ObservationFactor([(5, [[1.0]])], [0.0], [[1.0]])])

    def test_repeated_index(self):
        with pytest.raises(DimensionMismatch):
            ObservationFactor([(1, [[1.0]]), (1, [[1.0]])], [0.0], [[1.0]])

    @pytest.mark.parametrize("Q", [[[-1.0]], [[1.0, 2.0], [0.0, 1.0]]])
    def test_invalid_process_covariance(self, Q):
        d = len(Q)
        with pytest.raises(ProblemError):
            LinearProblem(VariableLayout.uniform(2, d), PriorFactor(np.zeros(d), np.eye(d)),
                          [PropagationFactor(0, np.eye(d), np.zeros(d), Q)])

    def test_singular_process_noise_allowed(self):
        p = LinearProblem(VariableLayout.uniform(2, 1), PriorFactor([0.0], [[0.0]]),
                          [PropagationFactor(0, [[1.0]], [0.0], [[0.0]])])
        assert p.N == 1

    def test_observation_covariance_must_be_definite(self):
        with pytest.raises(InvalidCovariance):
            scalar_chain(2, [ObservationFactor([(1, [[1.0]])], [0.0], [[0.0]])])

    def test_non_finite(self):
        with pytest.raises(ProblemError):
            PriorFactor([np.nan], [[1.0]])


class TestAssembly:
    def test_prior_only(self):
        p = LinearProblem(VariableLayout.uniform(1, 2), PriorFactor([1.0, 2.0], np.diag([3.0, 4.0])), [])
        A, b, S = assemble_stacked(p)
        np.testing.assert_array_equal(A, np.eye(2))
        np.testing.assert_array_equal(b, [1.0, 2.0])
        np.testing.assert_array_equal(S, np.diag([3.0, 4.0]))

    def test_two_scalar_states(self):
        p = scalar_chain(2, [ObservationFactor([(1, [[1.0]])], [3.0], [[1.0]])])
        A, _, _ = assemble_stacked(p)
        np.testing.assert_array_equal(A, [[1, 0], [-1, 1], [0, 1]])

    def test_toy_dimensions(self):
        p, _ = make_toy(ToyConfig(remove_p0=False))
        A, b, S = assemble_stacked(p)
        assert A.shape == (15 + 2, 15)
        assert b.shape == (17,) and S.shape == (17, 17)
        p, _ = make_toy(ToyConfig(remove_p0=True))
        assert assemble_stacked(p)[0].shape == (14 + 2, 14)


class TestCost:
    def test_zero_at_exact_solution(self):
        p = scalar_chain(2, [ObservationFactor([(1, [[1.0]])], [0.0], [[1.0]])])
        assert eval_cost(p, np.zeros(2)) == 0.0

    def test_scalar_example(self):
        p = LinearProblem(VariableLayout.uniform(1, 1), PriorFactor([2.0], [[4.0]]), [])
        assert eval_cost(p, [0.0]) == pytest.approx(1.0)

    def test_singular_block(self):
        p = LinearProblem(VariableLayout.uniform(2, 1), PriorFactor([0.0], [[1.0]]),
                          [PropagationFactor(0, [[1.0]], [0.0], [[0.0]])])
        with pytest.raises(SingularCovariance):
            eval_cost(p, np.zeros(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_oracle_minimizes_cost(self, seed):
        rng = np.random.default_rng(seed)
        p = random_problem(rng)
        x = normal_solution(p)
        c0 = eval_cost(p, x)
        for _ in range(100):
            d = rng.standard_normal(x.size)
            assert eval_cost(p, x + 1e-3 * d / np.linalg.norm(d)) >= c0


class TestCloneSchedule:
    def test_two_relative_observations(self):
        # x_3 - x_0 and x_4 - x_2; the clone of 2 spans over time 3
        s = build_clone_schedule([rel(0, 3), rel(2, 4)], n_states=5)
        assert s.sets == ((0, 0), (0, 1), (0, 2, 2), (0, 2, 3), (2, 4))
        assert s.retained_after(3) == (2, 3)
        assert s.retained_after(4) == (4,)

    def test_unary_only(self):
        s = build_clone_schedule(scalar_chain(4, [ObservationFactor([(2, [[1.0]])], [0.0], [[1.0]])]))
        assert s.sets == ((0,), (1,), (2,), (3,))

    def test_clone_retained_until_last_use(self):
        s = build_clone_schedule([rel(1, 2), rel(1, 3)], n_states=4)
        assert s.slots(1) == (1, 1)
        assert s.slots(2) == (2, 1)
        assert s.slots(3) == (3, 1)
        assert s.retained_after(3) == (3,)

    def test_update_slots_exclude_new_clone(self):
        s = CloneSchedule((3, -1, 4, -1, -1))
        assert s.update_slots(2) == (2, 0)
        assert s.slots(2) == (2, 2, 0)
        assert s.kept_positions(2) == [0, 1, 2]
        assert s.slots(3) == (3, 2, 0)
        assert s.kept_positions(3) == [0, 1]

    def test_idempotent(self):
        obs = [rel(0, 3), rel(2, 4)]
        assert build_clone_schedule(obs, 5) == build_clone_schedule(obs, 5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)).filter(lambda t: t[0] != t[1]), max_size=8),
           st.randoms(use_true_random=False))
    def test_order_independent(self, pairs, random):
        obs = [rel(min(i, j), max(i, j)) for i, j in pairs]
        shuffled = list(obs)
        random.shuffle(shuffled)
        assert build_clone_schedule(obs, 7) == build_clone_schedule(shuffled, 7)


TEXT = """
# two scalar states and one relative fix
vars 1 1
prior 0 cov 1
prop 0 1 0 cov 1
obs 1 0: -1 1: 1 resid 2.5 cov 0.5   # x1 - x0
"""


class TestFileFormat:
    def test_parse(self):
        p = parse_problem(TEXT)
        assert p.N == 1
        assert p.obs[0].indices == (0, 1)
        np.testing.assert_array_equal(p.obs[0].residual, [2.5])

    def test_attached_labels(self):
        p = parse_problem(TEXT.replace("0: -1 1: 1", "0:-1 1:1"))
        assert p.obs[0].blocks[0][1][0, 0] == -1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_round_trip(self, seed, tmp_path):
        p = random_problem(np.random.default_rng(seed))
        path = tmp_path / "p.txt"
        save_problem(p, path)
        q = load_problem(path)
        A1, b1, S1 = assemble_stacked(p)
        A2, b2, S2 = assemble_stacked(q)
        np.testing.assert_array_equal(A1, A2)
        np.testing.assert_array_equal(b1, b2)
        np.testing.assert_array_equal(S1, S2)

    def test_round_trip_mixed_dims(self):
        p, _ = make_toy(ToyConfig())
        q = parse_problem(format_problem(p))
        assert q.layout.dims == (2, 3, 3, 3, 3)
        assert format_problem(q) == format_problem(p)

    @pytest.mark.parametrize("text", [
        "",
        "prior 0 cov 1",
        "vars 0 1\nprior 0 cov",
        "vars 0 1\nprior zero cov 1",
        "vars 1 1\nprior 0 cov 1\nprop 0 1 0 cov 1\nobs 0 1: 1 resid 1 cov 1",
        "vars 1 1\nprior 0 cov 1\nprop 0 1 0 cov 1\nobs 1 1: 1 1 resid 1 cov 1",
        "vars 1 1\nprior 0 cov 1\nprop 5 1 0 cov 1",
        "vars 1 1\nprior 0 cov 1",
        "vars 0 1\nprior 0 cov 1\nfoo 1",
        "vars 0 1\nprior 0 cov -1",
        "vars 0 1\nprior 0 cov 1 7",
    ])
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_problem(text)
