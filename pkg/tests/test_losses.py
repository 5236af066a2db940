import math
from itertools import combinations

import numpy as np
import pytest

from rfdg.errors import ConfigError, ShapeError
from rfdg.losses import (
    LossWeights,
    adapter_diversity,
    adapter_means,
    alignment_loss,
    batch_covariance,
    cls_loss,
    cmd,
    coral_align,
    median_bandwidth,
    mmd,
    pair_coefficient,
    swd,
    total_loss,
)
from rfdg.numerics import Parameter, Tensor, finite_diff_check, ops


def T64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def P64(a):
    return Parameter(np.asarray(a, dtype=np.float64))


# -- brute-force oracles ------------------------------------------------------


def brute_diversity(mus):
    k = len(mus)
    if k < 2:
        return 0.0
    s = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            s += sum((mus[i][c] - mus[j][c]) ** 2 for c in range(len(mus[i])))
    return 2.0 * s / (k * (k - 1))


def brute_coral(covs):
    k = len(covs)
    s = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            d = covs[i] - covs[j]
            s += sum(d[a, b] ** 2 for a in range(d.shape[0]) for b in range(d.shape[1]))
    return 2.0 * s / (k * (k - 1))


def brute_mmd(x, y, s):
    def k(a, b):
        return math.exp(-sum((a - b) ** 2) / (2 * s * s))

    kxx = sum(k(a, b) for a in x for b in x) / len(x) ** 2
    kyy = sum(k(a, b) for a in y for b in y) / len(y) ** 2
    kxy = sum(k(a, b) for a in x for b in y) / (len(x) * len(y))
    return kxx + kyy - 2 * kxy


# -- coefficient and worked values ---------------------------------------------


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_pair_coefficient_counts_terms(k):
    n_pairs = len(list(combinations(range(k), 2)))
    assert pair_coefficient(k) * n_pairs == pytest.approx(1.0)


def test_diversity_two_basis_vectors():
    assert adapter_diversity([T64([1, 0]), T64([0, 1])]).item() == 2.0


def test_diversity_three_basis_vectors():
    assert adapter_diversity([T64(v) for v in np.eye(3)]).item() == pytest.approx(2.0, abs=1e-15)


def test_diversity_equal_means_and_single_adapter():
    assert adapter_diversity([T64([1, 2, 3])] * 4).item() == 0.0
    assert adapter_diversity([T64([1, 2, 3])]).item() == 0.0


def test_coral_identity_vs_zero():
    assert coral_align([T64(np.eye(2)), T64(np.zeros((2, 2)))]).item() == 2.0


@pytest.mark.parametrize("k", [2, 3, 4, 5])
@pytest.mark.parametrize("seed", range(5))
def test_pairwise_terms_match_brute_force(k, seed):
    rng = np.random.default_rng(seed)
    mus = [rng.normal(size=6) for _ in range(k)]
    assert adapter_diversity([T64(m) for m in mus]).item() == pytest.approx(brute_diversity(mus), abs=1e-6)
    covs = [np.cov(rng.normal(size=(7, 4)), rowvar=False) for _ in range(k)]
    assert coral_align([T64(c) for c in covs]).item() == pytest.approx(brute_coral(covs), abs=1e-6)


def test_coral_permutation_symmetric():
    rng = np.random.default_rng(3)
    covs = [T64(np.cov(rng.normal(size=(6, 3)), rowvar=False)) for _ in range(4)]
    a = coral_align(covs).item()
    b = coral_align(covs[::-1]).item()
    assert a == pytest.approx(b, rel=1e-12)


# -- covariance ---------------------------------------------------------------


def test_covariance_hand_case():
    c = batch_covariance(T64([[0, 0], [2, 0]]))
    np.testing.assert_array_equal(c.data, [[2, 0], [0, 0]])


def test_covariance_constant_rows_and_numpy_oracle():
    assert not batch_covariance(T64(np.ones((5, 3)))).data.any()
    x = np.random.default_rng(0).normal(size=(9, 4))
    c = batch_covariance(T64(x)).data
    np.testing.assert_allclose(c, np.cov(x, rowvar=False), atol=1e-12)
    np.testing.assert_allclose(c, c.T, atol=0)
    assert np.linalg.eigvalsh(c).min() > -1e-12


def test_covariance_needs_two_rows():
    with pytest.raises(ShapeError):
        batch_covariance(T64(np.ones((1, 3))))


# -- adapter means ------------------------------------------------------------


def test_adapter_means_domain_and_batch_modes():
    z0 = T64([[1, 1], [3, 5], [0, 0]])
    z1 = T64([[2, 2], [4, 4], [6, 0]])
    mus = adapter_means([z0, z1], [[0, 1], [2]], mode="domain")
    np.testing.assert_array_equal(mus[0].data, [2, 3])
    np.testing.assert_array_equal(mus[1].data, [6, 0])
    mus = adapter_means([z0, z1], [[0, 1], [2]], mode="batch")
    np.testing.assert_allclose(mus[1].data, [4, 2])


def test_adapter_means_empty_sub_batch():
    with pytest.raises(ShapeError):
        adapter_means([T64(np.ones((2, 2)))], [[]])
    with pytest.raises(ConfigError):
        adapter_means([T64(np.ones((2, 2)))], [[0]], mode="other")


# -- alternative aligners -------------------------------------------------------


def test_mmd_matches_brute_force_and_separated_gaussians():
    rng = np.random.default_rng(0)
    x = rng.normal(0.0, 0.3, size=(12, 2))
    y = rng.normal(3.0, 0.3, size=(10, 2))
    val = mmd(T64(x), T64(y), bandwidth=1.0).item()
    assert val == pytest.approx(brute_mmd(x, y, 1.0), abs=1e-12)
    assert val > 0.5


def test_median_bandwidth_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    z = np.vstack([x, y])
    d = [np.linalg.norm(z[i] - z[j]) for i in range(9) for j in range(9) if i != j]
    assert median_bandwidth(T64(x), T64(y)) == pytest.approx(np.median(d))


def test_swd_point_masses_unit_shift():
    for seed in range(5):
        assert swd(T64([[0.0]]), T64([[1.0]]), n_slices=7, rng=seed).item() == pytest.approx(1.0)


def test_swd_matches_sorted_projection_oracle():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(8, 3)), rng.normal(1.0, 2.0, size=(8, 3))
    val = swd(T64(x), T64(y), n_slices=16, rng=np.random.default_rng(5)).item()
    d = np.random.default_rng(5).normal(size=(3, 16))
    d /= np.linalg.norm(d, axis=0)
    px, py = np.sort(x @ d, axis=0), np.sort(y @ d, axis=0)
    assert val == pytest.approx(np.sqrt(((px - py) ** 2).mean(axis=0)).mean(), rel=1e-12)


def test_swd_unequal_sizes_point_masses():
    assert swd(T64([[0.0], [0.0], [0.0]]), T64([[2.0]]), n_slices=3, rng=0).item() == pytest.approx(2.0)


def test_cmd_oracle():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(10, 3)), rng.normal(0.5, 1.5, size=(7, 3))
    tx, ty = np.tanh(x), np.tanh(y)
    ref = np.linalg.norm(tx.mean(0) - ty.mean(0))
    for m in range(2, 6):
        ref += np.linalg.norm(((tx - tx.mean(0)) ** m).mean(0) - ((ty - ty.mean(0)) ** m).mean(0))
    assert cmd(T64(x), T64(y)).item() == pytest.approx(ref, rel=1e-12)


ALIGN = {
    "coral": lambda a, b: alignment_loss([a, b], "coral"),
    "mmd": lambda a, b: mmd(a, b),
    "cmd": lambda a, b: cmd(a, b),
    "swd": lambda a, b: swd(a, b, n_slices=32, rng=0),
}


@pytest.mark.parametrize("name", sorted(ALIGN))
def test_alignment_zero_symmetric_nonnegative(name):
    fn = ALIGN[name]
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = T64(rng.normal(size=(6, 4)))
        y = T64(rng.normal(0.3, 1.4, size=(6, 4)))
        assert fn(x, x).item() == pytest.approx(0.0, abs=1e-12)
        a, b = fn(x, y).item(), fn(y, x).item()
        assert a >= 0.0
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", ["coral", "mmd", "cmd", "swd"])
@pytest.mark.parametrize("seed", range(5))
def test_alignment_gradcheck(name, seed):
    rng = np.random.default_rng(seed)
    x = P64(rng.normal(size=(5, 3)))
    y = P64(rng.normal(0.5, 1.2, size=(6, 3)))
    if name == "mmd":
        s = median_bandwidth(x, y)  # bandwidth is a stop-gradient constant
        fn = lambda: mmd(x, y, bandwidth=s)  # noqa: E731
    elif name == "coral":
        fn = lambda: alignment_loss([x, y], "coral")  # noqa: E731
    else:
        fn = lambda: ALIGN[name](x, y)  # noqa: E731
    assert finite_diff_check(fn, [x, y]) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_diversity_gradcheck(seed):
    rng = np.random.default_rng(seed)
    zs = [P64(rng.normal(size=(4, 3))) for _ in range(3)]
    fn = lambda: adapter_diversity(adapter_means(zs, [[0, 1], [2], [3]]))  # noqa: E731
    assert finite_diff_check(fn, zs) < 1e-5


def test_alignment_unknown_method():
    with pytest.raises(ConfigError):
        alignment_loss([T64(np.ones((2, 2)))] * 2, "wasserstein")


def test_coral_skips_single_row_domains():
    x = T64(np.random.default_rng(0).normal(size=(4, 2)))
    assert alignment_loss([x, T64(np.ones((1, 2)))], "coral").item() == 0.0


# -- cls / total -----------------------------------------------------------------


def test_cls_loss_uniform_and_confident():
    assert cls_loss(T64(np.zeros((3, 6))), [0, 1, 5]).item() == pytest.approx(math.log(6))
    logits = np.full((2, 4), -50.0)
    logits[[0, 1], [2, 3]] = 50.0
    assert cls_loss(T64(logits), [2, 3]).item() < 1e-40
    assert cls_loss(T64(logits), [2, 3]).item() == ops.cross_entropy(T64(logits), [2, 3]).item()


def test_total_loss_combination():
    cls, ad, al = T64(0.7), T64(0.2), T64(0.05)
    assert total_loss(cls, ad, al, LossWeights(0, 0)).item() == 0.7
    assert total_loss(cls, ad, al, LossWeights(2.0, 3.0)).item() == pytest.approx(0.7 + 0.4 + 0.15)
    assert total_loss(cls, ad, al, LossWeights(1.0, 1.0, -1)).item() == pytest.approx(0.7 - 0.2 + 0.05)


def test_loss_weights_validation():
    assert LossWeights() == LossWeights(1.0, 1.0, 1)
    with pytest.raises(ConfigError):
        LossWeights(lam=-1)
    with pytest.raises(ConfigError):
        LossWeights(adapt_sign=0)
