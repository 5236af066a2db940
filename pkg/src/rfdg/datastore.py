"""Dataset container, leave-one-domain-out folds, splits and batch sampling.

On-disk layout (one directory)::

    manifest.json   JSON object, keys sorted, UTF-8
    data.blob       records x D x L float32, little-endian, C order
    index.bin       one 24-byte entry per record:
                    <u8 sample_id, <u8 byte offset into data.blob,
                    <i4 domain_id, <i4 label (1..C)

Labels are stored 1-based. Models work with 0-based class indices; convert
with ``labels - 1``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError, DataError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
INDEX_DTYPE = np.dtype([("sample_id", "<u8"), ("offset", "<u8"), ("domain_id", "<i4"), ("label", "<i4")])
BLOB_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    domain_id: int
    label: int
    input: np.ndarray


@dataclass
class DatasetContainer:
    """In-memory dataset: ``inputs`` is ``(n, D, L)`` float32."""

    inputs: np.ndarray
    domain_ids: np.ndarray
    labels: np.ndarray
    n_classes: int
    sample_ids: np.ndarray | None = None
    modality: str = "ofdm"
    seed: int | None = None
    generator_hash: str = ""
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if self.inputs.ndim != 3:
            raise DataError(f"inputs must be (n, D, L), got shape {self.inputs.shape}")
        n = len(self.inputs)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.int64).reshape(n)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        if self.sample_ids is None:
            self.sample_ids = np.arange(n, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64).reshape(n)
        if n and (self.labels.min() < 1 or self.labels.max() > self.n_classes):
            raise DataError(f"labels must lie in [1, {self.n_classes}]")

    @classmethod
    def from_records(cls, records, n_classes, shape=None, **kw):
        records = list(records)
        if records:
            inputs = np.stack([r.input for r in records])
        else:
            if shape is None:
                raise DataError("empty record list needs an explicit (D, L) shape")
            inputs = np.zeros((0,) + tuple(shape), dtype=np.float32)
        return cls(inputs=inputs,
                   domain_ids=[r.domain_id for r in records],
                   labels=[r.label for r in records],
                   sample_ids=[r.sample_id for r in records],
                   n_classes=n_classes, **kw)

    def __len__(self):
        return len(self.inputs)

    @property
    def shape(self):
        return self.inputs.shape[1:]

    @property
    def domains(self):
        return sorted(int(d) for d in np.unique(self.domain_ids))

    def domain_counts(self):
        return {int(d): int((self.domain_ids == d).sum()) for d in self.domains}

    def records(self):
        for i in range(len(self)):
            yield SampleRecord(int(self.sample_ids[i]), int(self.domain_ids[i]), int(self.labels[i]), self.inputs[i])

    def indices_of(self, domain_ids):
        return np.flatnonzero(np.isin(self.domain_ids, list(domain_ids)))

    def manifest(self):
        D, L = self.shape
        return {
            "version": FORMAT_VERSION,
            "modality": self.modality,
            "n_classes": int(self.n_classes),
            "n_domains": len(self.domains),
            "D": int(D),
            "L": int(L),
            "dtype": "f32",
            "byte_order": "little",
            "n_records": len(self),
            "domain_counts": {str(k): v for k, v in self.domain_counts().items()},
            "seed": self.seed,
            "generator_hash": self.generator_hash,
            "generator": self.generator,
        }


def _sha(b):
    return hashlib.sha256(b).hexdigest()


def _index_bytes(c: DatasetContainer):
    D, L = c.shape
    idx = np.zeros(len(c), dtype=INDEX_DTYPE)
    idx["sample_id"] = c.sample_ids
    idx["offset"] = np.arange(len(c), dtype=np.uint64) * np.uint64(D * L * BLOB_DTYPE.itemsize)
    idx["domain_id"] = c.domain_ids
    idx["label"] = c.labels
    return idx.tobytes()


def save_container(container: DatasetContainer, path):
    """Write the three container files; returns the directory path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = container.inputs.astype(BLOB_DTYPE, copy=False).tobytes()
    index = _index_bytes(container)
    manifest = container.manifest()
    manifest["blob_sha256"] = _sha(blob)
    manifest["index_sha256"] = _sha(index)
    (path / "data.blob").write_bytes(blob)
    (path / "index.bin").write_bytes(index)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_container(path) -> DatasetContainer:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "data.blob").read_bytes()
        index_b = (path / "index.bin").read_bytes()
    except FileNotFoundError as e:
        raise ContainerError("missing", str(e)) from None
    except json.JSONDecodeError as e:
        raise ContainerError("schema", f"manifest.json: {e}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise ContainerError("version", f"expected version {FORMAT_VERSION}, found {manifest.get('version')}")
    try:
        n, D, L, C = (int(manifest[k]) for k in ("n_records", "D", "L", "n_classes"))
    except KeyError as e:
        raise ContainerError("schema", f"manifest missing key {e}") from None
    rec_bytes = D * L * BLOB_DTYPE.itemsize
    if len(index_b) != n * INDEX_DTYPE.itemsize:
        raise ContainerError("truncated", f"index.bin has {len(index_b)} bytes, expected {n * INDEX_DTYPE.itemsize}")
    if len(blob) != n * rec_bytes:
        raise ContainerError("truncated", f"data.blob has {len(blob)} bytes, expected {n * rec_bytes}")
    idx = np.frombuffer(index_b, dtype=INDEX_DTYPE)
    offsets = idx["offset"].astype(np.int64)
    if n:
        ok = (offsets >= 0) & (offsets % rec_bytes == 0) & (offsets + rec_bytes <= len(blob))
        ok[1:] &= np.diff(offsets) >= rec_bytes
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ContainerError("offset", f"record {bad} has invalid offset {int(offsets[bad])}")
    if _sha(index_b) != manifest.get("index_sha256") or _sha(blob) != manifest.get("blob_sha256"):
        raise ContainerError("checksum", "index.bin or data.blob does not match its manifest checksum")
    flat = np.frombuffer(blob, dtype=BLOB_DTYPE)
    rows = offsets // BLOB_DTYPE.itemsize
    inputs = np.stack([flat[r:r + D * L] for r in rows]).reshape(n, D, L) if n else np.zeros((0, D, L))
    c = DatasetContainer(
        inputs=inputs.astype(np.float32),
        domain_ids=idx["domain_id"].astype(np.int64),
        labels=idx["label"].astype(np.int64),
        sample_ids=idx["sample_id"].astype(np.int64),
        n_classes=C,
        modality=manifest.get("modality", "ofdm"),
        seed=manifest.get("seed"),
        generator_hash=manifest.get("generator_hash", ""),
        generator=manifest.get("generator", {}),
    )
    counts = {str(k): v for k, v in c.domain_counts().items()}
    if counts != manifest.get("domain_counts", counts):
        raise ContainerError("schema", "per-domain counts disagree with the index")
    return c


def import_directory(path, n_classes=None, labels_file="labels.csv", modality="external"):
    """Wrap a directory of per-sample ``.npy`` matrices into a container.

    ``labels.csv`` needs the header ``file,domain,label``; ``file`` is relative
    to ``path``, ``label`` is 1-based. All matrices must share one ``(D, L)``.
    """
    path = Path(path)
    try:
        with open(path / labels_file, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise DataError(f"{path / labels_file} not found") from None
    missing = {"file", "domain", "label"} - set(rows[0] if rows else {})
    if missing:
        raise DataError(f"{labels_file} lacks columns {sorted(missing)}")
    inputs = [np.load(path / r["file"]).astype(np.float32) for r in rows]
    if len({a.shape for a in inputs}) > 1:
        raise DataError("all sample matrices must share one shape")
    labels = [int(r["label"]) for r in rows]
    return DatasetContainer(
        inputs=np.stack(inputs), domain_ids=[int(r["domain"]) for r in rows], labels=labels,
        n_classes=n_classes or max(labels), modality=modality,
    )


# -- folds and splits ----------------------------------------------------------


@dataclass
class LodoFold:
    name: str
    target_domain: int
    source_domains: list
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    @property
    def n_sources(self):
        return len(self.source_domains)


def split_train_val(container, ids, fraction=0.2, seed=0):
    """Stratified (domain, class) split of ``ids`` into train / validation.

    The validation total is ``round(fraction * len(ids))``, shared across
    strata by largest remainder, so each stratum deviates from its exact
    proportion by less than one sample.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    ids = np.sort(np.asarray(ids, dtype=np.int64))
    rng = np.random.default_rng(seed)
    keys = sorted({(int(container.domain_ids[i]), int(container.labels[i])) for i in ids})
    strata = [ids[(container.domain_ids[ids] == d) & (container.labels[ids] == c)] for d, c in keys]
    exact = np.array([fraction * len(s) for s in strata])
    quota = np.floor(exact).astype(int)
    extra = int(round(fraction * len(ids))) - quota.sum()
    order = sorted(range(len(strata)), key=lambda j: (-(exact[j] - quota[j]), rng.random()))
    for j in order[:max(extra, 0)]:
        quota[j] += 1
    small = [keys[j] for j, s in enumerate(strata) if len(s) < 2]
    if small:
        warnings.warn(f"strata with fewer than 2 samples use proportional allocation: {small}", stacklevel=2)
    train, val = [], []
    for s, q in zip(strata, quota):
        q = min(q, max(len(s) - 1, 0)) if len(s) >= 2 else q
        perm = rng.permutation(s)
        val.extend(perm[:q])
        train.extend(perm[q:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(val, dtype=np.int64))


def lodo_folds(container, val_fraction=0.2, seed=0):
    """One fold per domain; fold ``T-i`` holds out the i-th domain (sorted ids)."""
    domains = container.domains
    if len(domains) < 2:
        raise DataError("leave-one-domain-out needs at least two domains")
    folds = []
    for i, target in enumerate(domains, start=1):
        sources = [d for d in domains if d != target]
        train, val = split_train_val(container, container.indices_of(sources), val_fraction, seed)
        folds.append(LodoFold(f"T-{i}", target, sources, train, val, container.indices_of([target])))
    return folds


# -- balanced batches ------------------------------------------------------------


def balanced_batch_sizes(k, batch_size, step=0):
    """Equal shares ``batch_size // k``; the remainder rotates round-robin with ``step``."""
    if batch_size < k:
        raise ValueError(f"batch_size {batch_size} smaller than number of domains {k}")
    sizes = [batch_size // k] * k
    for j in range(batch_size % k):
        sizes[(step + j) % k] += 1
    return sizes


def sample_balanced_batch(groups, batch_size=32, rng=None, step=0):
    """Draw one multi-domain batch ``[B_1..B_K]`` without replacement within each domain."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if any(len(g) == 0 for g in groups):
        raise DataError("cannot sample from an empty domain")
    sizes = balanced_batch_sizes(len(groups), batch_size, step)
    return [rng.choice(np.asarray(g), size=min(s, len(g)), replace=False) for g, s in zip(groups, sizes)]


class BalancedSampler:
    """Epoch iterator over per-domain id groups.

    Every id is emitted exactly once per epoch. Each step asks every domain
    for its balanced share; shares a depleted domain cannot fill are handed to
    domains that still have samples, so the final steps may be uneven.
    """

    def __init__(self, groups, batch_size=32, rng=None):
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups]
        if any(len(g) == 0 for g in self.groups):
            raise DataError("cannot sample from an empty domain")
        self.batch_size = batch_size
        self.rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        balanced_batch_sizes(len(self.groups), batch_size)

    def __len__(self):
        return -(-sum(len(g) for g in self.groups) // self.batch_size)

    def epoch(self):
        queues = [self.rng.permutation(g) for g in self.groups]
        pos = [0] * len(queues)
        step = 0
        while any(p < len(q) for p, q in zip(pos, queues)):
            want = balanced_batch_sizes(len(queues), self.batch_size, step)
            left = [len(q) - p for p, q in zip(pos, queues)]
            take = [min(w, r) for w, r in zip(want, left)]
            spare = sum(want) - sum(take)
            k = 0
            while spare > 0 and any(t < r for t, r in zip(take, left)):
                j = (step + k) % len(queues)
                if take[j] < left[j]:
                    take[j] += 1
                    spare -= 1
                k += 1
            batch = []
            for j, t in enumerate(take):
                batch.append(queues[j][pos[j]:pos[j] + t])
                pos[j] += t
            yield batch
            step += 1
