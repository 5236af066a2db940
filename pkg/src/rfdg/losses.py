"""Training objectives: classification, adapter diversity, domain alignment.

Pairwise terms over K domains/adapters are averaged with the coefficient
``2 / (K (K - 1))``, i.e. the mean over unordered pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, ops
from .numerics import tensor as T

ALIGNERS = ("coral", "mmd", "cmd", "swd")


@dataclass
class LossWeights:
    lam: float = 1.0
    gamma: float = 1.0
    adapt_sign: int = 1

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.adapt_sign not in (1, -1):
            raise ConfigError("adapt_sign must be +1 or -1")


def _zero(like=None):
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.zeros((), dtype=dtype))


def pair_coefficient(k):
    return 2.0 / (k * (k - 1))


def pairwise_mean(items, dist):
    """``2/(K(K-1)) * sum_{i<j} dist(items[i], items[j])``; zero when K < 2."""
    items = list(items)
    if len(items) < 2:
        return _zero(items[0] if items else None)
    total = None
    for a, b in combinations(items, 2):
        d = dist(a, b)
        total = d if total is None else total + d
    return total * pair_coefficient(len(items))


# -- classification ------------------------------------------------------------


def cls_loss(logits, labels):
    """Mean cross-entropy; ``labels`` are 0-based class indices."""
    return ops.cross_entropy(logits, labels)


# -- adapter diversity -------------------------------------------------------


def adapter_means(zs, groups, mode="domain"):
    """Mean output of each adapter.

    ``zs[k]`` is adapter k's ``(B, H)`` output for the whole batch and
    ``groups[k]`` the batch rows belonging to source domain k. In ``domain``
    mode adapter k is averaged over its own domain's rows; in ``batch`` mode
    over every row.
    """
    if mode not in ("domain", "batch"):
        raise ConfigError(f"unknown adapter-mean mode {mode!r}")
    mus = []
    for k, z in enumerate(zs):
        if mode == "batch":
            mus.append(z.mean(axis=0))
            continue
        idx = np.asarray(groups[k])
        if idx.size == 0:
            raise ShapeError("adapter_means", z.shape, detail=f"empty sub-batch for adapter {k}")
        mus.append(z.take(idx).mean(axis=0))
    return mus


def adapter_diversity(mus):
    return pairwise_mean(mus, ops.sq_l2_distance)


# -- alignment ---------------------------------------------------------------


batch_covariance = ops.batch_covariance


def coral_align(covs):
    """Mean pairwise squared Frobenius distance between covariance matrices."""
    return pairwise_mean(covs, lambda a, b: ops.sq_frobenius(a - b))


def _pairwise_sq_dists(x, y):
    return ops.sq_l2_distance(x.reshape(x.shape[0], 1, x.shape[1]), y.reshape(1, y.shape[0], y.shape[1]))


def median_bandwidth(x, y):
    """Median pairwise Euclidean distance over the pooled sample (no gradient)."""
    z = np.concatenate([np.asarray(x.data, np.float64), np.asarray(y.data, np.float64)])
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    off = np.sqrt(d2[~np.eye(len(z), dtype=bool)])
    med = float(np.median(off)) if off.size else 0.0
    return med if med > 0 else 1.0


def mmd(x, y, bandwidth=None):
    """Biased (V-statistic) squared MMD with a Gaussian kernel ``exp(-d^2 / 2 s^2)``."""
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ShapeError("mmd", x.shape, y.shape, detail="empty sample")
    s = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    c = -1.0 / (2.0 * s * s)
    kxx = T.exp(_pairwise_sq_dists(x, x) * c).mean()
    kyy = T.exp(_pairwise_sq_dists(y, y) * c).mean()
    kxy = T.exp(_pairwise_sq_dists(x, y) * c).mean()
    return ops.clamp_min(kxx + kyy - kxy * 2.0, 0.0)


def cmd(x, y, order=5, squash=True):
    """Central moment discrepancy: mean gap plus gaps of central moments 2..order."""
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ShapeError("cmd", x.shape, y.shape, detail="empty sample")
    if squash:
        x, y = ops.tanh(x), ops.tanh(y)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    total = ops.l2_norm(mx - my)
    cx, cy = x - mx, y - my
    for m in range(2, order + 1):
        total = total + ops.l2_norm((cx ** m).mean(axis=0) - (cy ** m).mean(axis=0))
    return total


def random_directions(dim, n, rng, dtype=np.float64):
    v = rng.normal(size=(dim, n))
    return (v / np.linalg.norm(v, axis=0, keepdims=True)).astype(dtype)


def swd(x, y, n_slices=128, rng=None):
    """Sliced 2-Wasserstein distance averaged over random unit directions.

    Unequal sample sizes are matched on a common grid of
    ``max(n_x, n_y)`` quantile levels (nearest rank).
    """
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ShapeError("swd", x.shape, y.shape, detail="empty sample")
    if x.shape[1] != y.shape[1]:
        raise ShapeError("swd", x.shape, y.shape)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    dirs = Tensor(random_directions(x.shape[1], n_slices, rng, x.dtype))
    px, py = ops.sort(x @ dirs, axis=0), ops.sort(y @ dirs, axis=0)
    n = max(px.shape[0], py.shape[0])
    q = (np.arange(n) + 0.5) / n
    if px.shape[0] != n:
        px = px.take(np.floor(q * px.shape[0]).astype(int))
    if py.shape[0] != n:
        py = py.take(np.floor(q * py.shape[0]).astype(int))
    d = px - py
    return ops.sqrt((d * d).mean(axis=0)).mean()


def alignment_loss(features, method="coral", rng=None, mmd_bandwidth=None, cmd_order=5, swd_slices=128):
    """Mean pairwise discrepancy between per-domain feature matrices."""
    if method == "coral":
        feats = [f for f in features if f.shape[0] >= 2]
        return coral_align([batch_covariance(f) for f in feats])
    feats = [f for f in features if f.shape[0] >= 1]
    if method == "mmd":
        return pairwise_mean(feats, lambda a, b: mmd(a, b, mmd_bandwidth))
    if method == "cmd":
        return pairwise_mean(feats, lambda a, b: cmd(a, b, cmd_order))
    if method == "swd":
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        return pairwise_mean(feats, lambda a, b: swd(a, b, swd_slices, rng))
    raise ConfigError(f"unknown alignment method {method!r}; expected one of {ALIGNERS}")


def total_loss(cls, adapt, align, weights: LossWeights, lam=None, gamma=None):
    """``cls + lam * adapt_sign * adapt + gamma * align``.

    ``lam`` / ``gamma`` may be Tensors (learnable-weight mode); otherwise the
    constants in ``weights`` are used.
    """
    lam = weights.lam if lam is None else lam
    gamma = weights.gamma if gamma is None else gamma
    return cls + adapt * lam * float(weights.adapt_sign) + align * gamma

