"""Finite-difference suite over every differentiable primitive, the alignment
losses and the composed DGAR objective (used by the ``gradcheck`` command)."""
from __future__ import annotations

import time

import numpy as np

from ..losses import adapter_diversity, adapter_means, alignment_loss, cmd, median_bandwidth, mmd, swd
from ..model import DgarModel, ModelConfig
from ..numerics import Parameter, Tensor, finite_diff_check, finite_diff_errors, ops
from ..numerics import tensor as T
from ..trainer import TrainConfig, dgar_loss_terms

def _bn(x, g, b, training=True):
    c = x.shape[1]
    return ops.batchnorm1d(x, g, b, np.zeros(c), np.ones(c), training=training)


def primitive_cases(rng):
    """(name, param arrays, scalar loss builder) for each primitive."""
    B, C, L = 3, 4, 6
    w = rng.normal(size=(B, C, L))  # random projection to make losses non-trivial
    r2 = rng.normal(size=(B, C))
    yield "conv1d", [rng.normal(size=(B, 2, L)), rng.normal(size=(C, 2, 3)), rng.normal(size=C)], \
        lambda x, k, b: (ops.conv1d(x, k, b) * w).sum()
    yield "conv1d_k5", [rng.normal(size=(B, 2, L)), rng.normal(size=(C, 2, 5))], \
        lambda x, k: (ops.conv1d(x, k, padding=2) * w).sum()
    yield "batchnorm1d_train", [rng.normal(size=(B, C, L)), rng.normal(size=C), rng.normal(size=C)], \
        lambda x, g, b: (_bn(x, g, b) * w).sum()
    yield "batchnorm1d_eval", [rng.normal(size=(B, C, L)), rng.normal(size=C), rng.normal(size=C)], \
        lambda x, g, b: (_bn(x, g, b, training=False) * w).sum()
    yield "batchnorm1d_2d", [rng.normal(size=(B, C)), rng.normal(size=C), rng.normal(size=C)], \
        lambda x, g, b: (_bn(x, g, b) * r2).sum()
    yield "leaky_relu", [rng.normal(size=(B, C))], lambda x: (ops.leaky_relu(x) * r2).sum()
    yield "sigmoid", [rng.normal(size=(B, C))], lambda x: (ops.sigmoid(x) * r2).sum()
    yield "tanh", [rng.normal(size=(B, C))], lambda x: (ops.tanh(x) * r2).sum()
    yield "softplus", [rng.normal(size=(B, C))], lambda x: (ops.softplus(x) * r2).sum()
    yield "maxpool1d", [rng.normal(size=(B, C, L))], \
        lambda x: (ops.maxpool1d(x) * w[:, :, :L // 2]).sum()
    yield "global_avg_pool", [rng.normal(size=(B, C, L))], lambda x: (ops.global_avg_pool(x) * r2).sum()
    yield "linear", [rng.normal(size=(B, 5)), rng.normal(size=(C, 5)), rng.normal(size=C)], \
        lambda x, W, b: (ops.linear(x, W, b) * r2).sum()
    yield "softmax", [rng.normal(size=(B, C))], lambda x: (ops.softmax(x) * r2).sum()
    yield "log_softmax", [rng.normal(size=(B, C))], lambda x: (ops.log_softmax(x) * r2).sum()
    yield "cross_entropy", [rng.normal(size=(B, C))], lambda x: ops.cross_entropy(x, [0, 3, 1])
    yield "add_mul_sub_div", [rng.normal(size=(B, C)), rng.normal(size=(1, C))], \
        lambda a, b: (((a + b) * a - b) / (b * b + 1.0) * r2).sum()
    yield "mean_sum_axis", [rng.normal(size=(B, C, L))], \
        lambda x: (x.mean(axis=2) * r2).sum() + (x.sum(axis=0) ** 2).sum()
    yield "matmul", [rng.normal(size=(B, 5)), rng.normal(size=(5, C))], lambda a, b: ((a @ b) * r2).sum()
    yield "batch_covariance", [rng.normal(size=(6, C))], \
        lambda h: (ops.batch_covariance(h) * rng_fixed(C)).sum()
    yield "sq_frobenius", [rng.normal(size=(C, C))], lambda a: ops.sq_frobenius(a)
    yield "sq_l2_distance", [rng.normal(size=C), rng.normal(size=C)], lambda a, b: ops.sq_l2_distance(a, b)
    yield "l2_norm", [rng.normal(size=(B, C))], lambda a: ops.l2_norm(a)
    yield "exp_log_pow", [rng.uniform(0.5, 2.0, size=(B, C))], \
        lambda a: (T.log(a) * r2).sum() + (T.exp(a) ** 1.5).sum()
    yield "take_stack_concat", [rng.normal(size=(B, C))], \
        lambda a: (T.stack([a.take([2, 0, 2]), a], axis=1) ** 2).sum() + (T.concat([a, a * 2.0]) ** 3).sum()
    yield "sort", [rng.normal(size=(7, 3))], lambda a: (ops.sort(a, axis=0) * np.arange(21.0).reshape(7, 3)).sum()
    yield "reshape_transpose", [rng.normal(size=(B, C, L))], \
        lambda a: (a.transpose(2, 0, 1).reshape(L, B * C) @ Tensor(np.ones((B * C, 1)))).sum() ** 2


def rng_fixed(c):
    return np.random.default_rng(123).normal(size=(c, c))




def loss_cases(rng):
    """Alignment / diversity losses on random feature sets."""
    x = rng.normal(size=(5, 3))
    y = rng.normal(0.5, 1.2, size=(6, 3))
    s = median_bandwidth(Tensor(x), Tensor(y))  # stop-gradient bandwidth
    yield "coral", [x, y], lambda a, b: alignment_loss([a, b], "coral")
    yield "mmd", [x, y], lambda a, b: mmd(a, b, bandwidth=s)
    yield "cmd", [x, y], lambda a, b: cmd(a, b)
    yield "swd", [x, y], lambda a, b: swd(a, b, n_slices=32, rng=0)
    zs = [rng.normal(size=(4, 3)) for _ in range(3)]
    yield "adapter_diversity", zs, lambda *z: adapter_diversity(adapter_means(list(z), [[0, 1], [2], [3]]))


def dgar_loss_check(seed=0, max_coords=None, mean_mode="domain", B=4, K=3, D=8, L=16):
    """Max relative error of the full objective on a toy f64 model.

    Rows are split over the first two source domains so both the diversity
    and the alignment terms are active.
    """
    model = DgarModel(ModelConfig(in_channels=D, seq_len=L, n_classes=3, n_adapters=K, hidden_dim=64,
                                  dtype="f64", zero_init_adapters=False, seed=seed))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, D, L))
    dom = np.repeat(np.arange(1, 3), -(-B // 2))[:B]
    y = rng.integers(0, 3, size=B)
    cfg = TrainConfig(dtype="f64", adapter_mean_mode=mean_mode)
    params = model.parameters()
    errs = finite_diff_errors(lambda: dgar_loss_terms(model, x, y, dom, list(range(1, K + 1)), cfg)[3],
                              params, max_coords=max_coords, seed=seed)
    return max(errs)


def run_suite(seeds=range(20), full_seeds=range(3), max_coords=8):
    """Rows ``{check, seeds, max_rel_error, seconds}`` for every case."""
    rows = []
    names = [n for n, _, _ in primitive_cases(np.random.default_rng(0))]
    lnames = [n for n, _, _ in loss_cases(np.random.default_rng(0))]
    for group, builder, case_names in (("primitive", primitive_cases, names), ("loss", loss_cases, lnames)):
        for name in case_names:
            t0, worst = time.perf_counter(), 0.0
            for seed in seeds:
                arrs, fn = {n: (a, f) for n, a, f in builder(np.random.default_rng(seed))}[name]
                params = [Parameter(np.asarray(a, dtype=np.float64)) for a in arrs]
                worst = max(worst, finite_diff_check(lambda: fn(*params), params))
            rows.append({"check": f"{group}:{name}", "seeds": len(seeds), "max_rel_error": worst,
                         "seconds": time.perf_counter() - t0})
    for mode in ("domain", "batch"):
        t0 = time.perf_counter()
        worst = max(dgar_loss_check(s, max_coords, mode) for s in full_seeds)
        rows.append({"check": f"dgar_loss:{mode}", "seeds": len(full_seeds), "max_rel_error": worst,
                     "seconds": time.perf_counter() - t0})
    return rows
