import numpy as np
from django.test import SimpleTestCase

from tagger.exceptions import ConfigError, NumericError, ShapeError
from tagger.numcore import (
    GradientTape,
    Parameter,
    ParameterStore,
    add,
    backward,
    concat,
    constant,
    dropout,
    gather,
    grad_check,
    grad_check_report,
    init_param,
    logsumexp,
    logsumexp_array,
    masked_softmax,
    matmul,
    mul,
    narrow,
    no_tape,
    reduce_sum,
    sigmoid,
    sigmoid_array,
    tanh,
    transpose,
)


class LogSumExpTests(SimpleTestCase):
    def test_bounds_hold_for_random_vectors(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            values = rng.uniform(-50, 50, size=int(rng.integers(1, 10)))
            result = float(logsumexp_array(values))
            self.assertGreaterEqual(result, values.max())
            self.assertLessEqual(result, values.max() + np.log(values.size) + 1e-12)

    def test_large_values_do_not_overflow(self):
        self.assertAlmostEqual(float(logsumexp_array([1000.0, 1000.0])), 1000.0 + np.log(2.0))

    def test_axis_reduction(self):
        values = np.array([[0.0, 0.0], [1.0, 3.0]])
        result = logsumexp_array(values, axis=1)
        np.testing.assert_allclose(result, [np.log(2.0), 3.0 + np.log(1.0 + np.exp(-2.0))])

    def test_empty_input_is_rejected(self):
        with self.assertRaises(ShapeError):
            logsumexp_array(np.array([]))


class TapeTests(SimpleTestCase):
    def test_backward_accumulates_into_parameters(self):
        w = Parameter([[1.0, 2.0], [3.0, 4.0]], "w")
        x = constant([[1.0, -1.0]])
        with GradientTape() as tape:
            loss = reduce_sum(matmul(x, w))
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, [[1.0, 1.0], [-1.0, -1.0]])

    def test_second_backward_doubles_gradients(self):
        rng = np.random.default_rng(1)
        w = Parameter(rng.normal(size=(3, 3)), "w")
        with GradientTape() as tape:
            loss = reduce_sum(tanh(matmul(w, w)))
        tape.backward(loss)
        first = w.grad.copy()
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, 2.0 * first)

    def test_module_backward_finds_the_tape(self):
        w = Parameter([2.0], "w")
        with GradientTape():
            loss = reduce_sum(mul(w, w))
        backward(loss)
        np.testing.assert_array_equal(w.grad, [4.0])

    def test_non_scalar_loss_is_rejected(self):
        w = Parameter([1.0, 2.0], "w")
        with GradientTape() as tape:
            out = mul(w, w)
        with self.assertRaises(ShapeError):
            tape.backward(out)

    def test_no_tape_records_nothing(self):
        w = Parameter([1.0], "w")
        with GradientTape() as tape:
            with no_tape():
                mul(w, w)
        self.assertEqual(len(tape), 0)

    def test_replay_is_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            w = Parameter(rng.normal(size=(4, 4)), "w")
            with GradientTape() as tape:
                loss = logsumexp(sigmoid(matmul(w, transpose(w))))
            tape.backward(loss)
            return loss.item(), w.grad.copy()

        first, second = run(), run()
        self.assertEqual(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])


class BroadcastTests(SimpleTestCase):
    def test_vector_over_rows_is_allowed(self):
        result = add(constant(np.zeros((2, 3))), constant([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(result.data, [[1.0, 2.0, 3.0]] * 2)

    def test_other_shapes_are_rejected(self):
        with self.assertRaises(ShapeError):
            add(constant(np.zeros((2, 3))), constant([1.0, 2.0]))
        with self.assertRaises(ShapeError):
            mul(constant(np.zeros((2, 3))), constant(np.zeros((3, 2))))

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            matmul(constant(np.zeros((2, 3))), constant(np.zeros((2, 3))))


class InitTests(SimpleTestCase):
    def test_glorot_bound(self):
        rng = np.random.default_rng(0)
        param = init_param((20, 30), "glorot", rng=rng)
        self.assertLessEqual(np.abs(param.data).max(), np.sqrt(6.0 / 50.0))

    def test_zeros_and_uniform(self):
        rng = np.random.default_rng(0)
        self.assertFalse(init_param((3,), "zeros").data.any())
        values = init_param((100,), "uniform", rng=rng, low=-0.1, high=0.1).data
        self.assertTrue(np.all((values >= -0.1) & (values < 0.1)))

    def test_bad_arguments(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(ShapeError):
            init_param((0, 3), "zeros")
        with self.assertRaises(ConfigError):
            init_param((3,), "orthogonal", rng=rng)
        with self.assertRaises(ConfigError):
            init_param((3,), "uniform", rng=rng, low=1.0, high=1.0)

    def test_random_schemes_need_an_rng(self):
        for scheme in ("uniform", "glorot"):
            with self.assertRaisesMessage(ConfigError, f"{scheme} init for w needs an rng"):
                init_param((2, 3), scheme, name="w")

    def test_store_rejects_duplicate_names(self):
        store = ParameterStore()
        store.create("w", (2, 2), "zeros")
        with self.assertRaises(ConfigError):
            store.create("w", (2, 2), "zeros")

    def test_state_dict_round_trip(self):
        rng = np.random.default_rng(0)
        store = ParameterStore()
        store.create("a", (2, 3), "glorot", rng=rng)
        store.create("b", (3,), "zeros", decay=False)
        state = store.state_dict()
        store["a"].data[...] = 0.0
        store.load_state_dict(state)
        np.testing.assert_array_equal(store["a"].data, state["a"])
        self.assertFalse(store["b"].decay)

    def test_load_state_dict_checks_shapes(self):
        store = ParameterStore()
        store.create("a", (2, 3), "zeros")
        with self.assertRaises(ShapeError):
            store.load_state_dict({"a": np.zeros((3, 2))})
        with self.assertRaises(ShapeError):
            store.load_state_dict({"b": np.zeros((2, 3))})


class OperationTests(SimpleTestCase):
    def test_sigmoid_is_stable_at_extremes(self):
        values = sigmoid_array([-1000.0, 0.0, 1000.0])
        np.testing.assert_array_equal(values, [0.0, 0.5, 1.0])

    def test_gather_accumulates_repeated_indices(self):
        x = Parameter([1.0, 2.0, 3.0], "x")
        with GradientTape() as tape:
            loss = reduce_sum(gather(x, (np.array([0, 0, 2]),)))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])

    def test_gather_range_check(self):
        with self.assertRaises(ShapeError):
            gather(constant([1.0, 2.0]), (np.array([2]),))

    def test_narrow_and_concat(self):
        x = constant(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(narrow(x, 1, 1, 2).data, [[1.0, 2.0], [4.0, 5.0]])
        np.testing.assert_array_equal(concat([x, x], axis=0).data.shape, (4, 3))
        with self.assertRaises(ShapeError):
            concat([x, constant(np.zeros((3, 3)))], axis=1)

    def test_masked_softmax_rows(self):
        scores = constant([[1.0, 2.0, 3.0], [0.5, 0.5, 9.0], [4.0, 1.0, 1.0]])
        allowed = np.array([[False, False, False], [True, True, False], [True, False, False]])
        out = masked_softmax(scores, allowed).data
        np.testing.assert_array_equal(out[0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(out[1], [0.5, 0.5, 0.0])
        np.testing.assert_array_equal(out[2], [1.0, 0.0, 0.0])

    def test_dropout_is_identity_in_eval_mode(self):
        x = constant(np.ones((3, 3)))
        self.assertIs(dropout(x, 0.5, np.random.default_rng(0), training=False), x)

    def test_dropout_rescales_kept_units(self):
        out = dropout(constant(np.ones((50, 50))), 0.5, np.random.default_rng(0), training=True).data
        self.assertTrue(set(np.unique(out)) <= {0.0, 2.0})


class GradCheckTests(SimpleTestCase):
    def test_constant_function_has_zero_error(self):
        w = Parameter([1.0, 2.0], "w")
        self.assertEqual(grad_check(lambda: reduce_sum(constant([3.0])), [w]), 0.0)

    def test_quadratic_form(self):
        rng = np.random.default_rng(0)
        A = constant(rng.normal(size=(3, 3)))
        x = Parameter(rng.normal(size=(1, 3)), "x")
        error = grad_check(lambda: reduce_sum(mul(matmul(x, A), x)), [x])
        self.assertLess(error, 1e-8)

    def test_smooth_ops(self):
        rng = np.random.default_rng(2)
        w = Parameter(rng.normal(scale=0.5, size=(3, 4)), "w")
        v = Parameter(rng.normal(scale=0.5, size=(4,)), "v")
        allowed = np.tril(np.ones((3, 3), dtype=bool))

        def f():
            h = add(matmul(w, transpose(w)), constant(np.eye(3)))
            attn = masked_softmax(h, allowed)
            mixed = concat([matmul(attn, w), sigmoid(add(w, v))], axis=1)
            picked = gather(tanh(mixed), (np.array([0, 2, 2]), np.array([1, 5, 7])))
            return add(logsumexp(narrow(mixed, 1, 2, 4)), reduce_sum(picked))

        report = grad_check_report(f, [w, v])
        self.assertEqual(list(report), ["w", "v"])
        self.assertLess(max(report.values()), 1e-6)

    def test_non_finite_loss_is_reported(self):
        w = Parameter([0.0], "w")
        with self.assertRaises(NumericError):
            grad_check(lambda: reduce_sum(mul(w, constant([np.inf]))), [w])
