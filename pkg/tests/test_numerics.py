import math

import numpy as np
import pytest

from rfdg.errors import NumericalError, ShapeError
from rfdg.harness.gradcheck_suite import _bn, primitive_cases
from rfdg.numerics import AdamState, Parameter, Tensor, adam_step, finite_diff_check, grad, ops
from rfdg.numerics import tensor as T

SEEDS = range(20)


def P(a):
    return Parameter(np.asarray(a, dtype=np.float64))


# -- closed-form examples ------------------------------------------------------


def test_softmax_symmetric():
    out = ops.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_cross_entropy_uniform_is_log_c():
    for label in range(6):
        loss = ops.cross_entropy(Tensor(np.zeros((1, 6))), [label])
        assert loss.item() == pytest.approx(math.log(6), abs=1e-12)
    assert math.log(6) == pytest.approx(1.791759, abs=1e-6)


def test_global_avg_pool_shape():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 256, 25)))
    assert ops.global_avg_pool(x).shape == (3, 256)


def test_grad_of_sum_of_squares():
    p = P([1.0, 2.0])
    (g,) = grad((p * p).sum(), [p])
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_cross_entropy_grad_closed_form():
    rng = np.random.default_rng(1)
    logits = P(rng.normal(size=(5, 4)))
    labels = np.array([0, 3, 2, 2, 1])
    (g,) = grad(ops.cross_entropy(logits, labels), [logits])
    sm = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    expected = (sm - np.eye(4)[labels]) / 5
    np.testing.assert_allclose(g, expected, atol=1e-14)


def test_disconnected_parameter_gets_zero_grad():
    p, q = P([1.0]), P([[3.0, 4.0]])
    _, gq = grad((p * 2.0).sum(), [p, q])
    np.testing.assert_array_equal(gq, np.zeros((1, 2)))


def test_non_scalar_loss_rejected():
    p = P([1.0, 2.0])
    with pytest.raises(ShapeError):
        grad(p * 2.0, [p])


def test_shape_mismatch_names_op():
    with pytest.raises(ShapeError, match="conv1d"):
        ops.conv1d(Tensor(np.zeros((1, 3, 8))), Tensor(np.zeros((4, 2, 3))))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_is_error():
    with pytest.raises(NumericalError):
        T.log(Tensor([-1.0]))


def test_conv1d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 7))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    out = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.zeros((2, 4, 7))
    for n in range(2):
        for o in range(4):
            for t in range(7):
                ref[n, o, t] = (w[o] * xp[n, :, t:t + 3]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_maxpool_halves_length():
    x = Tensor(np.arange(16.0).reshape(1, 2, 8))
    out = ops.maxpool1d(x)
    assert out.shape == (1, 2, 4)
    np.testing.assert_array_equal(out.data[0, 0], [1, 3, 5, 7])


# -- finite-difference agreement for every primitive -----------------------------


CASE_NAMES = [name for name, _, _ in primitive_cases(np.random.default_rng(0))]


@pytest.mark.parametrize("name", CASE_NAMES)
def test_primitive_matches_finite_differences(name):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        case = {n: (arrs, fn) for n, arrs, fn in primitive_cases(rng)}[name]
        arrs, fn = case
        params = [P(a) for a in arrs]
        err = finite_diff_check(lambda: fn(*params), params)
        assert err < 1e-5, (name, seed, err)


def test_relu_kink_excluded():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))
    x[0, 0] = x[2, 3] = 0.0
    p = P(x)
    w = rng.normal(size=x.shape)
    fn = lambda: (ops.relu(p) * w).sum()  # noqa: E731
    assert finite_diff_check(fn, [p], exclude={0: x == 0.0}) < 1e-8
    assert finite_diff_check(fn, [p]) > 1e-3


def test_quadratic_gradcheck_tight():
    p = P(np.random.default_rng(4).normal(size=10))
    assert finite_diff_check(lambda: (p * p * 3.0).sum() + p.sum(), [p]) < 1e-8


# -- invariants --------------------------------------------------------------


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        out = ops.softmax(Tensor(rng.normal(scale=10, size=(8, 7)).astype(np.float32))).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_batchnorm_train_mode_normalizes():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(3.0, 5.0, size=(16, 8, 20)))
    g, b = Tensor(np.ones(8)), Tensor(np.zeros(8))
    out = _bn(x, g, b).data
    assert np.abs(out.mean(axis=(0, 2))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2)) - 1.0).max() < 1e-4


def test_batchnorm_eval_is_affine():
    rng = np.random.default_rng(7)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)
    g, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    f = lambda x: ops.batchnorm1d(Tensor(x), g, b, rm.copy(), rv.copy(), training=False).data  # noqa: E731
    x1, x2 = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 4, 5))
    np.testing.assert_allclose(f(x1 + x2) - f(x2), f(x1) - f(np.zeros_like(x1)), atol=1e-12)
    np.testing.assert_array_equal(f(x1), f(x1))


def test_running_stats_update():
    x = Tensor(np.random.default_rng(8).normal(2.0, 1.0, size=(4, 3, 10)))
    rm, rv = np.zeros(3), np.ones(3)
    ops.batchnorm1d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.data.var(axis=(0, 2), ddof=1))


def test_forward_bit_reproducible():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 6, 12)).astype(np.float32)
    w = rng.normal(size=(8, 6, 3)).astype(np.float32)
    a = ops.conv1d(Tensor(x), Tensor(w)).data
    b = ops.conv1d(Tensor(x), Tensor(w)).data
    assert a.tobytes() == b.tobytes()


# -- Adam --------------------------------------------------------------------


def test_adam_first_step_closed_form():
    lr, eps = 1e-3, 1e-8
    p = P(np.full(5, 2.0))
    p.grad = np.ones(5)
    adam_step(AdamState(lr=lr, weight_decay=0.0, eps=eps), [p])
    np.testing.assert_allclose(p.data, 2.0 - lr / (1.0 + eps), rtol=0, atol=1e-15)


def test_adam_zero_lr_is_noop():
    p = P(np.arange(4.0))
    p.grad = np.ones(4)
    adam_step(AdamState(lr=0.0), [p])
    np.testing.assert_array_equal(p.data, np.arange(4.0))


def test_adam_defaults():
    s = AdamState()
    assert (s.lr, s.weight_decay, s.beta1, s.beta2, s.eps) == (1e-4, 1e-5, 0.9, 0.999, 1e-8)


def test_adam_matches_torch_adamw():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(10)
    init = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(5)]
    p = P(init.copy())
    state = AdamState(lr=1e-2, weight_decay=0.1)
    tp = torch.tensor(init.copy(), requires_grad=True)
    opt = torch.optim.AdamW([tp], lr=1e-2, weight_decay=0.1, betas=(0.9, 0.999), eps=1e-8)
    for g in grads:
        p.grad = g
        adam_step(state, [p])
        tp.grad = torch.tensor(g)
        opt.step()
    np.testing.assert_allclose(p.data, tp.detach().numpy(), rtol=1e-12, atol=1e-14)


def test_adam_rejects_non_finite_grad():
    p = P([1.0])
    p.grad = np.array([np.nan])
    with pytest.raises(NumericalError):
        adam_step(AdamState(), [p])
