"""Multi-domain training loop with plateau LR halving and early stopping.

Each step draws a domain-balanced batch, runs the shared extractor and the
adapters, and minimizes ``cls + lam * sign * adapt + gamma * align`` with
Adam. The model with the lowest validation loss is restored at the end.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datastore import BalancedSampler, DatasetContainer, split_train_val
from .errors import ConfigError, DataError, NumericalError
from .losses import ALIGNERS, LossWeights, adapter_diversity, adapter_means, alignment_loss, total_loss
from .metrics import Metrics, compute_metrics
from .model import DgarModel, ModelConfig
from .numerics import AdamState, Parameter, Tensor, adam_step, grad, ops
from .numerics.tensor import as_dtype

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 1.0
    gamma: float = 1.0
    adapt_sign: int = 1
    align: str = "coral"
    adapter_mean_mode: str = "domain"
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 100
    plateau_patience: int = 10
    lr_halving_factor: float = 0.5
    min_lr: float = 1e-6
    early_stop_patience: int = 20
    learnable_weights: bool = False
    weight_lr: float = 1e-3
    val_fraction: float = 0.2
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        LossWeights(self.lam, self.gamma, self.adapt_sign)
        if self.align not in ALIGNERS:
            raise ConfigError(f"align must be one of {ALIGNERS}")
        for name in ("lr", "batch_size", "max_epochs", "plateau_patience", "early_stop_patience", "weight_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.lr_halving_factor < 1:
            raise ConfigError("lr_halving_factor must lie in (0, 1)")
        as_dtype(self.dtype)

    @property
    def weights(self):
        return LossWeights(self.lam, self.gamma, self.adapt_sign)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def __len__(self):
        return len(self.epochs)

    def column(self, key):
        return [e[key] for e in self.epochs]

    def write_csv(self, path, steps=False):
        rows = self.steps if steps else self.epochs
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def _best_index(val_losses):
    best, idx = math.inf, -1
    for i, v in enumerate(val_losses):
        if v < best:
            best, idx = v, i
    return idx


def lr_schedule_step(history, current_lr, patience=10, factor=0.5, min_lr=1e-6):
    """Halve the LR once the best validation loss is ``patience`` epochs old.

    The clock restarts after each reduction, so a long plateau halves the
    rate every ``patience`` epochs, never below ``min_lr``.
    """
    epochs = history.epochs if isinstance(history, TrainHistory) else list(history)
    if not epochs:
        return current_lr
    anchor = _best_index([e["val_loss"] for e in epochs])
    for i in range(1, len(epochs)):
        if epochs[i]["lr"] != epochs[i - 1]["lr"]:
            anchor = max(anchor, i - 1)
    if len(epochs) - 1 - anchor >= patience:
        return max(current_lr * factor, min_lr)
    return current_lr


def early_stop_check(history, patience=20):
    """True once the best validation loss is ``patience`` or more epochs old."""
    epochs = history.epochs if isinstance(history, TrainHistory) else list(history)
    if not epochs:
        return False
    return len(epochs) - 1 - _best_index([e["val_loss"] for e in epochs]) >= patience


def _inv_softplus(y):
    y = max(float(y), 1e-6)
    return y + math.log(-math.expm1(-y))


def evaluate_loss(model, inputs, labels0, batch_size=256):
    """Eval-mode mean cross-entropy and predictions."""
    if len(inputs) == 0:
        return float("nan"), np.zeros(0, dtype=np.intp)
    was = model.training
    model.eval()
    total, preds = 0.0, []
    try:
        for i in range(0, len(inputs), batch_size):
            xb = inputs[i:i + batch_size].astype(model.dtype)
            logits = model.forward(xb).logits
            total += ops.cross_entropy(logits, labels0[i:i + batch_size]).item() * len(xb)
            preds.append(logits.data.argmax(axis=1))
    finally:
        model.train(was)
    return total / len(inputs), np.concatenate(preds)


def dgar_loss_terms(model, x, labels0, domains, sources, cfg: TrainConfig, lam=None, gamma=None, rng=None):
    """``(cls, adapt, align, total)`` for one batch.

    ``domains[i]`` is the source domain of row i; adapter k pairs with
    ``sources[k]``. Terms whose weight is zero are skipped and reported as 0
    unless ``lam`` / ``gamma`` are given as (learnable) Tensors.
    """
    x = x if isinstance(x, Tensor) else np.asarray(x, dtype=model.dtype)
    trace = model.forward(x)
    cls = ops.cross_entropy(trace.logits, labels0)
    zero = Tensor(np.zeros((), dtype=model.dtype))
    domains = np.asarray(domains)
    rows = [np.flatnonzero(domains == d) for d in sources]
    adapt = align = zero
    if (cfg.lam > 0 or lam is not None) and len(trace.z) > 1:
        if cfg.adapter_mean_mode == "domain":
            present = [k for k, r in enumerate(rows) if r.size]
        else:
            present = list(range(len(trace.z)))
        mus = adapter_means([trace.z[k] for k in present], [rows[k] for k in present], cfg.adapter_mean_mode)
        adapt = adapter_diversity(mus)
    if cfg.gamma > 0 or gamma is not None:
        feats = [trace.h.take(r) for r in rows if r.size]
        align = alignment_loss(feats, cfg.align, rng=rng if rng is not None else np.random.default_rng(cfg.seed))
    total = total_loss(cls, adapt, align, cfg.weights, lam=lam, gamma=gamma)
    return cls, adapt, align, total


class Trainer:
    """Holds one training run: model, optimizer state and history."""

    def __init__(self, container: DatasetContainer, train_ids, val_ids, source_domains,
                 model_config: ModelConfig, train_config: TrainConfig):
        self.data = container
        self.cfg = train_config
        self.train_ids = np.asarray(train_ids, dtype=np.int64)
        self.val_ids = np.asarray(val_ids, dtype=np.int64)
        self.sources = list(source_domains)
        K = model_config.n_adapters
        if K not in (1, len(self.sources)):
            raise ConfigError(f"model has {K} adapters but the fold has {len(self.sources)} source domains")
        self.model_config = replace(model_config, dtype=train_config.dtype, seed=train_config.seed)
        self.model = DgarModel(self.model_config)
        self.params = self.model.parameters()
        self.opt = AdamState(lr=train_config.lr, weight_decay=train_config.weight_decay)
        if K == 1:
            groups = [self.train_ids]
        else:
            groups = [self.train_ids[container.domain_ids[self.train_ids] == d] for d in self.sources]
        self.sampler = BalancedSampler(groups, train_config.batch_size, np.random.default_rng([train_config.seed, 1]))
        self.history = TrainHistory()
        self.global_step = 0
        self.weight_params = []
        if train_config.learnable_weights:
            dt = self.model.dtype
            self.lam_raw = Parameter(np.array(_inv_softplus(train_config.lam), dtype=dt), name="lam_raw")
            self.gamma_raw = Parameter(np.array(_inv_softplus(train_config.gamma), dtype=dt), name="gamma_raw")
            self.weight_params = [self.lam_raw, self.gamma_raw]
            self.weight_opt = AdamState(lr=train_config.weight_lr, weight_decay=0.0)

    # -- one step ----------------------------------------------------------------
    def loss_terms(self, ids, step_seed=None):
        """Forward a batch and return ``(cls, adapt, align, total)`` Tensors."""
        lam = gamma = None
        if self.cfg.learnable_weights:
            lam, gamma = ops.softplus(self.lam_raw), ops.softplus(self.gamma_raw)
        return dgar_loss_terms(
            self.model, self.data.inputs[ids], self.data.labels[ids] - 1, self.data.domain_ids[ids],
            self.sources, self.cfg, lam=lam, gamma=gamma,
            rng=np.random.default_rng([self.cfg.seed, 2, step_seed or 0]))

    def current_weights(self):
        if self.cfg.learnable_weights:
            return (ops.softplus(self.lam_raw).item(), ops.softplus(self.gamma_raw).item())
        return self.cfg.lam, self.cfg.gamma

    def step(self, batch, epoch=0):
        ids = np.concatenate(batch)
        try:
            cls, adapt, align, total = self.loss_terms(ids, self.global_step)
        except NumericalError as e:
            raise NumericalError(f"epoch {epoch} step {self.global_step}: {e}") from None
        for name, t in (("cls", cls), ("adapt", adapt), ("align", align), ("total", total)):
            if not np.isfinite(t.item()):
                raise NumericalError(f"non-finite {name} loss at epoch {epoch} step {self.global_step}")
        grad(total, self.params + self.weight_params)
        adam_step(self.opt, self.params)
        if self.weight_params:
            adam_step(self.weight_opt, self.weight_params)
        rec = {"epoch": epoch, "step": self.global_step, "cls": cls.item(), "adapt": adapt.item(),
               "align": align.item(), "total": total.item()}
        self.history.steps.append(rec)
        self.global_step += 1
        return rec

    # -- full run ------------------------------------------------------------------
    def validate(self):
        ids = self.val_ids if self.val_ids.size else self.train_ids
        labels0 = self.data.labels[ids] - 1
        loss, pred = evaluate_loss(self.model, self.data.inputs[ids], labels0)
        f1 = compute_metrics(labels0, pred, self.data.n_classes).f1
        return loss, f1

    def fit(self):
        cfg = self.cfg
        best_loss, best_state = math.inf, None
        for epoch in range(cfg.max_epochs):
            lr = self.opt.lr
            recs = [self.step(b, epoch) for b in self.sampler.epoch()]
            val_loss, val_f1 = self.validate()
            lam, gamma = self.current_weights()
            self.history.epochs.append({
                "epoch": epoch,
                "cls": float(np.mean([r["cls"] for r in recs])),
                "adapt": float(np.mean([r["adapt"] for r in recs])),
                "align": float(np.mean([r["align"] for r in recs])),
                "total": float(np.mean([r["total"] for r in recs])),
                "val_loss": val_loss,
                "val_f1": val_f1,
                "lr": lr,
                "lam": lam,
                "gamma": gamma,
            })
            if val_loss < best_loss:
                best_loss, best_state = val_loss, self.model.get_state()
                self.history.best_epoch = epoch
            log.info("epoch %d cls=%.4f val_loss=%.4f val_f1=%.2f lr=%.2e", epoch,
                     self.history.epochs[-1]["cls"], val_loss, val_f1, lr)
            if early_stop_check(self.history, cfg.early_stop_patience):
                self.history.stopped_early = True
                break
            self.opt.lr = lr_schedule_step(self.history, lr, cfg.plateau_patience,
                                           cfg.lr_halving_factor, cfg.min_lr)
        if best_state is not None:
            self.model.set_state(best_state)
        return self.model, self.history


def train(container, fold, model_config: ModelConfig, train_config: TrainConfig):
    """Train on ``fold``'s source domains only; returns ``(model, history)``."""
    return Trainer(container, fold.train_ids, fold.val_ids, fold.source_domains,
                   model_config, train_config).fit()


def evaluate(model, container, ids=None) -> Metrics:
    """Eval-mode metrics on ``ids`` (all records when None)."""
    ids = np.arange(len(container)) if ids is None else np.asarray(ids)
    if ids.size == 0:
        raise DataError("evaluate needs a non-empty record set")
    pred = model.predict(container.inputs[ids])
    return compute_metrics(container.labels[ids] - 1, pred, container.n_classes)


def train_erm_t(container, target_domain, model_config: ModelConfig, train_config: TrainConfig,
                test_fraction=0.2):
    """Oracle run trained on the target domain itself (80/20 train-test split).

    The 80% part is further split for validation. Reporting only; never part
    of a leave-one-domain-out experiment.
    """
    ids = container.indices_of([target_domain])
    fit_ids, test_ids = split_train_val(container, ids, test_fraction, train_config.seed)
    train_ids, val_ids = split_train_val(container, fit_ids, train_config.val_fraction, train_config.seed + 1)
    cfg = replace(model_config, n_adapters=1)
    model, history = Trainer(container, train_ids, val_ids, [target_domain], cfg,
                             replace(train_config, lam=0.0, gamma=0.0, learnable_weights=False)).fit()
    return model, evaluate(model, container, test_ids), history


def config_dict(cfg):
    return asdict(cfg)
