"""Leave-one-domain-out experiments, ablations, sweeps and timing.

A *method* is a named pair of model overrides and a :class:`TrainConfig`.
``ERM`` is the DGAR architecture with one adapter and both auxiliary weights
at zero, trained on pooled source batches; every other method uses one
adapter per source domain.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..datastore import DatasetContainer, lodo_folds
from ..errors import ConfigError, DataError, NumericalError
from ..metrics import compute_metrics
from ..model import DgarModel, ModelConfig
from ..trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

WORKERS_ENV = "RFDG_WORKERS"
METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


@dataclass
class MethodSpec:
    name: str
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    single_adapter: bool = False

    def is_erm(self):
        return self.single_adapter or (self.train.lam == 0 and self.train.gamma == 0
                                       and not self.train.learnable_weights)

    def digest(self):
        blob = json.dumps({"train": asdict(self.train), "model": self.model, "erm": self.is_erm()},
                          sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dgar_method(train_config=None, name="DGAR", **model):
    return MethodSpec(name, train_config or TrainConfig(), dict(model))


def erm_method(train_config=None, name="ERM", **model):
    tc = replace(train_config or TrainConfig(), lam=0.0, gamma=0.0, learnable_weights=False)
    return MethodSpec(name, tc, dict(model), single_adapter=True)


def variant_method(lam, gamma, base: TrainConfig | None = None, name=None, **model):
    """Weight-toggle variant; ``lam = gamma = 0`` is by definition the ERM configuration."""
    base = base or TrainConfig()
    name = name or f"lam={lam:g},gamma={gamma:g}"
    if lam == 0 and gamma == 0:
        return erm_method(base, name, **model)
    return dgar_method(replace(base, lam=float(lam), gamma=float(gamma)), name, **model)


def source_covariance_gap(model: DgarModel, container, fold, batch_size=256):
    """Mean pairwise squared Frobenius distance between source-domain covariances of ``h``."""
    was = model.training
    model.eval()
    covs = []
    try:
        for d in fold.source_domains:
            ids = fold.train_ids[container.domain_ids[fold.train_ids] == d]
            x = container.inputs[ids].astype(model.dtype)
            h = np.concatenate([model.extract_features(x[i:i + batch_size]).data
                                for i in range(0, len(x), batch_size)])
            covs.append(np.cov(h.astype(np.float64), rowvar=False))
    finally:
        model.train(was)
    pairs = [np.sum((a - b) ** 2) for i, a in enumerate(covs) for b in covs[i + 1:]]
    return float(np.mean(pairs)) if pairs else 0.0


# -- reports ---------------------------------------------------------------------


@dataclass
class ExperimentReport:
    method: str
    rows: list  # one dict per fold: fold, target, accuracy, precision, recall, f1, cov_gap
    config_hash: str = ""
    seeds: list = field(default_factory=list)
    wall_clock: float = 0.0
    runs: list = field(default_factory=list)  # per (fold, seed) results

    @property
    def average(self):
        out = {"fold": "Average", "target": ""}
        for k in METRIC_KEYS + ("cov_gap",):
            vals = [r[k] for r in self.rows if k in r]
            if vals:
                out[k] = float(np.mean(vals))
        return out

    def table(self):
        return [dict(r, method=self.method) for r in self.rows] + [dict(self.average, method=self.method)]

    def metric(self, key="f1"):
        return self.average[key]


# -- LODO ---------------------------------------------------------------------------


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _fold_job(container, fold, method: MethodSpec, seed):
    """Train and score one (fold, seed) pair; returns a result dict."""
    train_ids = np.concatenate([fold.train_ids, fold.val_ids])
    if np.isin(container.domain_ids[train_ids], [fold.target_domain]).any() or \
            np.intersect1d(train_ids, fold.test_ids).size:
        raise DataError(f"{fold.name}: training records overlap the held-out domain")
    D, L = container.shape
    K = 1 if method.is_erm() else fold.n_sources
    mc = ModelConfig(in_channels=D, seq_len=L, n_classes=container.n_classes, n_adapters=K, **method.model)
    tc = replace(method.train, seed=seed)
    t0 = time.perf_counter()
    try:
        model, history = train(container, fold, mc, tc)
    except (NumericalError, ConfigError) as e:
        raise type(e)(f"fold {fold.name}: {e}") from e
    met = evaluate(model, container, fold.test_ids)
    return {
        "fold": fold.name,
        "target": fold.target_domain,
        "seed": seed,
        **met.row(),
        "cov_gap": source_covariance_gap(model, container, fold),
        "epochs": len(history),
        "train_seconds": time.perf_counter() - t0,
    }


def run_lodo(container: DatasetContainer, method: MethodSpec | None = None, seeds=(0,), workers=None,
             val_fraction=0.2, split_seed=0, folds=None):
    """Train on each fold's sources, test on its held-out domain.

    Fold rows average over ``seeds``; splits depend only on ``split_seed`` so
    every method sees identical folds.
    """
    method = method or dgar_method()
    folds = folds or lodo_folds(container, val_fraction, split_seed)
    jobs = [(f, s) for f in folds for s in seeds]
    t0 = time.perf_counter()
    n_workers = _worker_count(workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            futs = [pool.submit(_fold_job, container, f, method, s) for f, s in jobs]
            results = [fu.result() for fu in futs]
    else:
        results = [_fold_job(container, f, method, s) for f, s in jobs]
    rows = []
    for f in folds:
        rs = [r for r in results if r["fold"] == f.name]
        row = {"fold": f.name, "target": f.target_domain}
        for k in METRIC_KEYS + ("cov_gap",):
            row[k] = float(np.mean([r[k] for r in rs]))
        rows.append(row)
        log.info("%s %s f1=%.2f", method.name, f.name, row["f1"])
    return ExperimentReport(method.name, rows, method.digest(), list(seeds), time.perf_counter() - t0, results)


# -- ablation / sweep ----------------------------------------------------------------

ABLATION_VARIANTS = {
    "L_cls": (0.0, 0.0),
    "L_cls+L_adapt": (1.0, 0.0),
    "L_cls+L_align": (0.0, 1.0),
    "DGAR": (1.0, 1.0),
}
ALIGN_SWAPS = ("coral", "mmd", "cmd", "swd")


def run_ablation(container, base: TrainConfig | None = None, seeds=(0,), workers=None, swaps=True,
                 variants=None, **model):
    """Loss-term toggles plus (optionally) alignment-loss swaps of the full model.

    Returns ``{name: ExperimentReport}``; the CORAL swap is the ``DGAR`` entry.
    """
    base = base or TrainConfig()
    reports = {}
    for name in variants or ABLATION_VARIANTS:
        lam, gamma = ABLATION_VARIANTS[name]
        m = variant_method(lam * base.lam if lam else 0.0, gamma * base.gamma if gamma else 0.0,
                           replace(base, align="coral"), name, **model)
        reports[name] = run_lodo(container, m, seeds, workers)
    if swaps:
        for align in ALIGN_SWAPS[1:]:
            name = f"DGAR-{align.upper()}"
            reports[name] = run_lodo(container, dgar_method(replace(base, align=align), name, **model),
                                     seeds, workers)
    return reports


@dataclass
class SweepResult:
    lam_grid: list
    gamma_grid: list
    surface: np.ndarray  # accuracy, shape (len(lam_grid), len(gamma_grid))
    f1: np.ndarray
    reports: dict

    def rows(self):
        return [{"lambda": lam, "gamma": g, "accuracy": float(self.surface[i, j]), "f1": float(self.f1[i, j])}
                for i, lam in enumerate(self.lam_grid) for j, g in enumerate(self.gamma_grid)]


DEFAULT_GRID = (0.0, 0.01, 0.1, 1.0, 10.0)


def run_sweep(container, lam_grid=DEFAULT_GRID, gamma_grid=DEFAULT_GRID, base: TrainConfig | None = None,
              seeds=(0,), workers=None, **model):
    """Full-factorial LODO-averaged accuracy over ``lam_grid x gamma_grid``."""
    lam_grid, gamma_grid = list(lam_grid), list(gamma_grid)
    if not lam_grid or not gamma_grid:
        raise ConfigError("sweep grids must be non-empty")
    base = base or TrainConfig()
    acc = np.zeros((len(lam_grid), len(gamma_grid)))
    f1 = np.zeros_like(acc)
    reports = {}
    for i, lam in enumerate(lam_grid):
        for j, g in enumerate(gamma_grid):
            rep = run_lodo(container, variant_method(lam, g, base, **model), seeds, workers)
            reports[(lam, g)] = rep
            acc[i, j] = rep.metric("accuracy")
            f1[i, j] = rep.metric("f1")
    return SweepResult(lam_grid, gamma_grid, acc, f1, reports)


# -- timing ---------------------------------------------------------------------------


def benchmark_inference(model: DgarModel, container, ids=None, n_runs=5, method="DGAR", batch_size=256):
    """Average wall-clock of full test-set inference after one untimed warm-up run."""
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    ids = np.arange(len(container)) if ids is None else np.asarray(ids)
    if ids.size == 0:
        raise DataError("benchmark needs a non-empty record set")
    x = container.inputs[ids]
    model.predict(x, batch_size)
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        pred = model.predict(x, batch_size)
        times.append(time.perf_counter() - t0)
    avg = float(np.mean(times))
    met = compute_metrics(container.labels[ids] - 1, pred, container.n_classes)
    return {"method": method, "avg_time_s": avg, "throughput": len(ids) / avg,
            "accuracy": met.accuracy, "n_samples": int(len(ids)), "n_runs": n_runs}
