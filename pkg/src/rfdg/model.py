"""Residual 1-D CNN backbone with K attention-fused adapters.

Input ``x`` is ``(B, D, L)``: D sensing rows (subcarriers / range bins) by L
time steps. The extractor follows the layout

    ResBlock(D -> w1) -> MaxPool -> ResBlock(w1 -> hidden) -> MaxPool
    -> SE -> GlobalAvgPool

with ``w1 = hidden // 2`` (128 at the default hidden width of 256). Class
indices inside the model are 0-based.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .numerics import Parameter, Tensor, ops, stack
from .numerics.tensor import as_dtype

HIDDEN_DIMS = (64, 128, 256, 512)
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    in_channels: int
    seq_len: int
    n_classes: int
    n_adapters: int = 1
    hidden_dim: int = 256
    activation: str = "relu"
    se_reduction: int = 16
    use_se: bool = True
    adapter_hidden: int | None = None
    scorer_hidden: int = 64
    kernel_size: int = 3
    bn_momentum: float = 0.1
    zero_init_adapters: bool = True
    dtype: str = "f32"
    seed: int = 0

    def __post_init__(self):
        if self.seq_len % 4:
            raise ConfigError(f"seq_len must be divisible by 4 (two pooling stages), got {self.seq_len}")
        if self.n_adapters < 1:
            raise ConfigError("n_adapters must be >= 1")
        if self.hidden_dim not in HIDDEN_DIMS:
            raise ConfigError(f"hidden_dim must be one of {HIDDEN_DIMS}, got {self.hidden_dim}")
        if self.hidden_dim % self.se_reduction:
            raise ConfigError("hidden_dim must be divisible by se_reduction")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd so that convolutions preserve length")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        ops.activation(self.activation)
        as_dtype(self.dtype)

    @property
    def block1_channels(self):
        return self.hidden_dim // 2


# -- modules -------------------------------------------------------------------


class Module:
    training = True

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def _he(rng, shape, fan_in, dtype):
    return Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype))


def _zeros(shape, dtype):
    return Parameter(np.zeros(shape, dtype=dtype))


class Conv1d(Module):
    def __init__(self, rng, cin, cout, k, dtype):
        self.weight = _he(rng, (cout, cin, k), cin * k, dtype)
        self.bias = _zeros(cout, dtype)
        self.padding = (k - 1) // 2

    def __call__(self, x):
        return ops.conv1d(x, self.weight, self.bias, padding=self.padding)


class Linear(Module):
    def __init__(self, rng, fin, fout, dtype, zero=False):
        self.weight = _zeros((fout, fin), dtype) if zero else _he(rng, (fout, fin), fin, dtype)
        self.bias = _zeros(fout, dtype)

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, c, dtype, momentum=0.1):
        self.gamma = Parameter(np.ones(c, dtype=dtype))
        self.beta = _zeros(c, dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = momentum

    def __call__(self, x):
        return ops.batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum)


class ResBlock(Module):
    """conv-BN-act, conv-BN, plus a 1x1 conv-BN projection shortcut, then act."""

    def __init__(self, rng, cin, cout, cfg, dtype):
        k, mom = cfg.kernel_size, cfg.bn_momentum
        self.conv1, self.bn1 = Conv1d(rng, cin, cout, k, dtype), BatchNorm1d(cout, dtype, mom)
        self.conv2, self.bn2 = Conv1d(rng, cout, cout, k, dtype), BatchNorm1d(cout, dtype, mom)
        self.shortcut, self.bn_sc = Conv1d(rng, cin, cout, 1, dtype), BatchNorm1d(cout, dtype, mom)
        self.act = ops.activation(cfg.activation)

    def __call__(self, x, record=None, tag=""):
        y = self.act(self.bn1(self.conv1(x)))
        _log(record, f"{tag} Conv1", x, y)
        y2 = self.bn2(self.conv2(y))
        _log(record, f"{tag} Conv2", y, y2)
        s = self.bn_sc(self.shortcut(x))
        _log(record, f"{tag} Shortcut", x, s)
        return self.act(y2 + s)


class SEBlock(Module):
    """Squeeze-and-excitation channel gate: ``u * sigmoid(W2 act(W1 mean_L(u)))``."""

    def __init__(self, rng, channels, reduction, activation, dtype):
        if channels % reduction:
            raise ShapeError("se_block", (channels,), detail=f"channels not divisible by r={reduction}")
        self.fc1 = Linear(rng, channels, channels // reduction, dtype)
        self.fc2 = Linear(rng, channels // reduction, channels, dtype)
        self.act = ops.activation(activation)

    def gate(self, u):
        return ops.sigmoid(self.fc2(self.act(self.fc1(ops.global_avg_pool(u)))))

    def __call__(self, u):
        g = self.gate(u)
        return u * g.reshape(g.shape + (1,))


class FeatureExtractor(Module):
    def __init__(self, rng, cfg, dtype):
        self.block1 = ResBlock(rng, cfg.in_channels, cfg.block1_channels, cfg, dtype)
        self.block2 = ResBlock(rng, cfg.block1_channels, cfg.hidden_dim, cfg, dtype)
        self.se = SEBlock(rng, cfg.hidden_dim, cfg.se_reduction, cfg.activation, dtype) if cfg.use_se else None

    def __call__(self, x, record=None):
        u = self.block1(x, record, "ResBlock1")
        p = ops.maxpool1d(u)
        _log(record, "MaxPool", u, p)
        u = self.block2(p, record, "ResBlock2")
        p = ops.maxpool1d(u)
        _log(record, "MaxPool", u, p)
        if self.se is not None:
            s = self.se(p)
            _log(record, "SE Block", p, s)
            p = s
        h = ops.global_avg_pool(p)
        _log(record, "Global AvgPool", p, h)
        return h


class Adapter(Module):
    """Residual bottleneck ``z = h + W2 act(W1 h + b1) + b2``."""

    def __init__(self, rng, dim, hidden, activation, dtype, zero_init=False):
        self.fc1 = Linear(rng, dim, hidden, dtype)
        self.fc2 = Linear(rng, hidden, dim, dtype, zero=zero_init)
        self.act = ops.activation(activation)

    def __call__(self, h):
        return h + self.fc2(self.act(self.fc1(h)))


class Scorer(Module):
    """Shared two-layer perceptron mapping one adapter output to a scalar score."""

    def __init__(self, rng, dim, hidden, activation, dtype):
        self.fc1 = Linear(rng, dim, hidden, dtype)
        self.fc2 = Linear(rng, hidden, 1, dtype)
        self.act = ops.activation(activation)

    def __call__(self, z):
        return self.fc2(self.act(self.fc1(z)))


def _log(record, name, inp, out):
    if record is not None:
        record.append((name, tuple(inp.shape), tuple(out.shape)))


@dataclass
class ForwardTrace:
    h: Tensor
    z: list
    a: Tensor
    fused: Tensor
    logits: Tensor
    shapes: list = field(default_factory=list)


class DgarModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = as_dtype(config.dtype)
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        H = config.hidden_dim
        self.extractor = FeatureExtractor(rng, config, dtype)
        ah = config.adapter_hidden or H
        self.adapters = [Adapter(rng, H, ah, config.activation, dtype, config.zero_init_adapters)
                         for _ in range(config.n_adapters)]
        self.scorer = Scorer(rng, H, config.scorer_hidden, config.activation, dtype)
        self.classifier = Linear(rng, H, config.n_classes, dtype)

    # -- pipeline stages -------------------------------------------------------
    def _input(self, x):
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        c = self.config
        if t.ndim != 3 or t.shape[1:] != (c.in_channels, c.seq_len):
            raise ShapeError("model_input", t.shape, (None, c.in_channels, c.seq_len))
        return t

    def extract_features(self, x, record=None):
        return self.extractor(self._input(x), record)

    def adapt(self, h):
        if h.ndim != 2 or h.shape[1] != self.config.hidden_dim:
            raise ShapeError("adapt", h.shape, (None, self.config.hidden_dim))
        return [f(h) for f in self.adapters]

    def attention_weights(self, zs):
        """Per-sample softmax over adapters of the scorer output: ``(B, K)``."""
        Z = stack(zs, axis=1)  # (B, K, H)
        B, K, H = Z.shape
        scores = self.scorer(Z.reshape(B * K, H)).reshape(B, K)
        return ops.softmax(scores)

    @staticmethod
    def fuse(zs, a):
        Z = stack(zs, axis=1)
        if a.shape != Z.shape[:2]:
            raise ShapeError("fuse", a.shape, Z.shape)
        return (Z * a.reshape(a.shape + (1,))).sum(axis=1)

    def classify(self, z):
        return self.classifier(z)

    def forward(self, x, record=None):
        h = self.extract_features(x, record)
        zs = self.adapt(h)
        a = self.attention_weights(zs)
        z = self.fuse(zs, a)
        logits = self.classify(z)
        return ForwardTrace(h=h, z=zs, a=a, fused=z, logits=logits, shapes=record or [])

    __call__ = forward

    def predict(self, x, batch_size=256):
        """Eval-mode class indices (0-based). Never consumes domain labels."""
        was = self.training
        self.eval()
        try:
            x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
            out = [self.forward(x[i:i + batch_size]).logits.data.argmax(axis=1)
                   for i in range(0, len(x), batch_size)]
        finally:
            self.train(was)
        return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)

    def logits(self, x, batch_size=256):
        was = self.training
        self.eval()
        try:
            x = np.asarray(x, dtype=self.dtype)
            return np.concatenate([self.forward(x[i:i + batch_size]).logits.data
                                   for i in range(0, len(x), batch_size)])
        finally:
            self.train(was)

    # -- state -----------------------------------------------------------------
    def state_arrays(self):
        """Ordered ``(name, array)`` for every parameter and buffer."""
        return list(self.named_parameters()) + list(self.named_buffers())

    def get_state(self):
        return {name: np.array(v.data if isinstance(v, Parameter) else v, copy=True)
                for name, v in self.state_arrays()}

    def set_state(self, state):
        for name, v in self.state_arrays():
            arr = state[name]
            target = v.data if isinstance(v, Parameter) else v
            if arr.shape != target.shape:
                raise ShapeError("set_state", target.shape, arr.shape, detail=name)
            target[...] = arr


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: DgarModel, path):
    """Write ``checkpoint.json`` + ``params.bin`` (little-endian, model dtype) to ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    le = model.dtype.newbyteorder("<")
    entries, chunks, offset = [], [], 0
    for name, v in model.state_arrays():
        arr = np.ascontiguousarray(v.data if isinstance(v, Parameter) else v, dtype=le)
        b = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "kind": "param" if isinstance(v, Parameter) else "buffer"})
        chunks.append(b)
        offset += len(b)
    blob = b"".join(chunks)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "dtype": model.config.dtype,
        "tensors": entries,
        "nbytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "params.bin").write_bytes(blob)
    (path / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> DgarModel:
    path = Path(path)
    try:
        manifest = json.loads((path / "checkpoint.json").read_text())
        blob = (path / "params.bin").read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"checkpoint incomplete: {e}") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('version')}")
    if len(blob) != manifest["nbytes"] or hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise DataError("checkpoint blob failed size/checksum validation")
    model = DgarModel(ModelConfig(**manifest["config"]))
    le = model.dtype.newbyteorder("<")
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype=le, count=n, offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = arr.astype(model.dtype)
    model.set_state(state)
    return model
