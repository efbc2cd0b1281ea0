"""Multi-domain sensor dataset model: channel-set algebra, block split, normalization.

A dataset is a list of subject blocks over one channel schema. Channels are
identified by name; modality tags are a consistency check and the unit of the
group-level set algebra (a modality like EEG may span several named channels).
All operations are pure: callers always get new objects, inputs are never
mutated.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptyBlock,
    ModalityMismatch,
    SchemaMismatch,
    UnknownChannel,
    UnknownLabel,
)

MODALITIES = ("PPG", "GSR", "HR", "ST", "ACC", "EYE", "EEG", "ECG", "OTHER")

NORM_EPS = 1e-8  # variance guard: constant channels normalize to zero


@dataclass(frozen=True)
class Channel:
    name: str
    modality: str
    native_rate: float
    generated_from: str | None = None  # provenance tag for imputed channels

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality tag {self.modality!r}")
        if not self.native_rate > 0:
            raise ValueError(f"channel {self.name!r}: native_rate must be > 0")


@dataclass(frozen=True)
class ChannelSchema:
    channels: tuple[Channel, ...]

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique within a schema")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def __len__(self) -> int:
        return len(self.channels)

    def index(self, name: str) -> int:
        for i, c in enumerate(self.channels):
            if c.name == name:
                return i
        raise UnknownChannel(f"channel {name!r} not in schema {self.names}")

    def channel(self, name: str) -> Channel:
        return self.channels[self.index(name)]

    def modality_of(self, name: str) -> str:
        return self.channel(name).modality

    def names_for_modality(self, modality: str) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels if c.modality == modality)

    def fingerprint(self) -> str:
        """Stable identity hash over (name, modality) pairs, order sensitive."""
        text = "|".join(f"{c.name}:{c.modality}" for c in self.channels)
        return hashlib.sha256(text.encode()).hexdigest()


def schema_from_names(names, modality="OTHER", rate=32.0) -> ChannelSchema:
    """Shorthand used by tests and synthetic generators: one channel per name.

    When a name matches a modality tag (HR, EEG, ...) that tag is used.
    """
    chans = []
    for n in names:
        tag = modality
        base = n.split("_")[0].upper()
        if base in MODALITIES:
            tag = base
        chans.append(Channel(n, tag, rate))
    return ChannelSchema(tuple(chans))


@dataclass
class Block:
    subject_id: str
    samples: np.ndarray  # (T, D) float64
    labels: np.ndarray  # (T,) int indices into the dataset label_set
    # (original block index, start, stop) when this block is a slice of another
    provenance: tuple[int, int, int] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValueError("block samples must be a 2-D (T, D) array")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must be one value per timestep")

    @property
    def length(self) -> int:
        return self.samples.shape[0]


@dataclass
class SensorDataset:
    domain_id: str
    schema: ChannelSchema
    label_set: tuple[str, ...]
    blocks: list[Block]
    rate: float

    def __post_init__(self):
        self.label_set = tuple(self.label_set)
        for b in self.blocks:
            if b.samples.shape[1] != len(self.schema):
                raise ValueError(
                    f"block {b.subject_id!r} width {b.samples.shape[1]} "
                    f"!= schema width {len(self.schema)}"
                )

    @property
    def n_timesteps(self) -> int:
        return sum(b.length for b in self.blocks)

    def channel_values(self, name: str) -> np.ndarray:
        """All values of one channel, concatenated across blocks."""
        j = self.schema.index(name)
        if not self.blocks:
            return np.empty(0)
        return np.concatenate([b.samples[:, j] for b in self.blocks])

    def copy(self) -> "SensorDataset":
        return SensorDataset(
            self.domain_id,
            self.schema,
            self.label_set,
            [Block(b.subject_id, b.samples.copy(), b.labels.copy(), b.provenance) for b in self.blocks],
            self.rate,
        )

    def fingerprint(self) -> str:
        """Byte-level content hash (schema, labels, samples); used by protocol tests."""
        h = hashlib.sha256()
        h.update(self.schema.fingerprint().encode())
        h.update(",".join(self.label_set).encode())
        for b in self.blocks:
            h.update(b.subject_id.encode())
            h.update(np.ascontiguousarray(b.samples).tobytes())
            h.update(np.ascontiguousarray(b.labels).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# channel-set algebra
# ---------------------------------------------------------------------------

def _check_modalities(a: ChannelSchema, b: ChannelSchema, names) -> None:
    for n in names:
        ma, mb = a.modality_of(n), b.modality_of(n)
        if ma != mb:
            raise ModalityMismatch(
                f"channel {n!r} tagged {ma} in one schema and {mb} in the other"
            )


def common_channels(a: ChannelSchema, b: ChannelSchema) -> set[str]:
    """Names present in both schemas. Shared names must agree on modality."""
    shared = set(a.names) & set(b.names)
    _check_modalities(a, b, shared)
    return shared


def extra_in_source(target: ChannelSchema, source: ChannelSchema) -> set[str]:
    """Names the source has and the target lacks (the imputer's output space)."""
    common_channels(target, source)  # modality consistency check
    return set(source.names) - set(target.names)


def missing_in_source(target: ChannelSchema, source: ChannelSchema) -> set[str]:
    """Names the target has and the source lacks."""
    common_channels(target, source)
    return set(target.names) - set(source.names)


# ---------------------------------------------------------------------------
# block-based split
# ---------------------------------------------------------------------------

@dataclass
class BlockSplitEntry:
    subject_id: str
    block_index: int
    length: int
    test_head: tuple[int, int]  # [0, k)
    train: tuple[int, int]  # [k, T-k)
    test_tail: tuple[int, int]  # [T-k, T)


@dataclass
class SplitResult:
    train: SensorDataset
    test: SensorDataset
    manifest: list[BlockSplitEntry]

    def manifest_dict(self) -> dict:
        return {
            "entries": [
                {
                    "subject_id": e.subject_id,
                    "block_index": e.block_index,
                    "length": e.length,
                    "test_head": list(e.test_head),
                    "train": list(e.train),
                    "test_tail": list(e.test_tail),
                }
                for e in self.manifest
            ]
        }


def block_split(ds: SensorDataset, test_fraction: float = 0.2,
                edge_fraction: float | None = None) -> SplitResult:
    """Assign the first and last ``edge_fraction`` of each block to the test side.

    ``edge_fraction`` defaults to ``test_fraction / 2`` so the two edges jointly
    make up ``test_fraction`` of every block. Temporal order is preserved on
    both sides and nothing is shuffled; the head and tail become separate test
    blocks so windows never span the cut.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    if edge_fraction is None:
        edge_fraction = test_fraction / 2
    train_blocks: list[Block] = []
    test_blocks: list[Block] = []
    manifest: list[BlockSplitEntry] = []
    for i, b in enumerate(ds.blocks):
        t = b.length
        if t == 0:
            raise EmptyBlock(f"block {i} ({b.subject_id!r}) has no timesteps")
        k = int(np.floor(edge_fraction * t))
        manifest.append(BlockSplitEntry(b.subject_id, i, t, (0, k), (k, t - k), (t - k, t)))
        if k > 0:
            test_blocks.append(Block(b.subject_id, b.samples[:k].copy(),
                                     b.labels[:k].copy(), (i, 0, k)))
            test_blocks.append(Block(b.subject_id, b.samples[t - k:].copy(),
                                     b.labels[t - k:].copy(), (i, t - k, t)))
        train_blocks.append(Block(b.subject_id, b.samples[k:t - k].copy(),
                                  b.labels[k:t - k].copy(), (i, k, t - k)))
    train = SensorDataset(ds.domain_id, ds.schema, ds.label_set, train_blocks, ds.rate)
    test = SensorDataset(ds.domain_id, ds.schema, ds.label_set, test_blocks, ds.rate)
    return SplitResult(train, test, manifest)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize_per_subject(ds: SensorDataset) -> SensorDataset:
    """Standardize each channel per subject: (x - mean) / (std + eps).

    Statistics use all of a subject's blocks concatenated; population std.
    Constant channels map to zeros through the epsilon guard. Labels pass
    through untouched.
    """
    by_subject: dict[str, list[int]] = {}
    for i, b in enumerate(ds.blocks):
        by_subject.setdefault(b.subject_id, []).append(i)
    new_blocks: list[Block | None] = [None] * len(ds.blocks)
    for subject, idxs in by_subject.items():
        cat = np.concatenate([ds.blocks[i].samples for i in idxs], axis=0)
        mean = cat.mean(axis=0)
        std = cat.std(axis=0)
        for i in idxs:
            b = ds.blocks[i]
            new_blocks[i] = Block(b.subject_id, (b.samples - mean) / (std + NORM_EPS),
                                  b.labels.copy(), b.provenance)
    return SensorDataset(ds.domain_id, ds.schema, ds.label_set, list(new_blocks), ds.rate)


def channel_stats(ds: SensorDataset, names) -> dict[str, tuple[float, float]]:
    """Per-channel (mean, std) over all blocks; std is population, eps-guarded."""
    out = {}
    for n in names:
        v = ds.channel_values(n)
        out[n] = (float(v.mean()), float(v.std() + NORM_EPS))
    return out


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str  # WidthMismatch | NonFinite | IllegalLabel | EmptyBlock | NoBlocks
    block: str
    channel: str
    detail: str


def validate(ds: SensorDataset) -> list[Violation]:
    """List every invariant violation; an empty list means well-formed.

    Violations are data, not failures: nothing raises here.
    """
    out: list[Violation] = []
    if not ds.blocks:
        out.append(Violation("NoBlocks", "", "", "dataset has no blocks"))
    width = len(ds.schema)
    n_labels = len(ds.label_set)
    for i, b in enumerate(ds.blocks):
        tag = f"{b.subject_id}[{i}]"
        if b.length == 0:
            out.append(Violation("EmptyBlock", tag, "", "block has no timesteps"))
        if b.samples.shape[1] != width:
            out.append(Violation("WidthMismatch", tag, "",
                                 f"width {b.samples.shape[1]} != schema {width}"))
            continue
        bad = ~np.isfinite(b.samples)
        if bad.any():
            for j in np.unique(np.nonzero(bad)[1]):
                out.append(Violation("NonFinite", tag, ds.schema.names[j],
                                     f"{int(bad[:, j].sum())} non-finite values"))
        illegal = (b.labels < 0) | (b.labels >= n_labels)
        if illegal.any():
            out.append(Violation("IllegalLabel", tag, "",
                                 f"{int(illegal.sum())} labels outside 0..{n_labels - 1}"))
    return out


# ---------------------------------------------------------------------------
# column surgery (used by imputation and the experiment protocols)
# ---------------------------------------------------------------------------

def select_channels(ds: SensorDataset, names) -> SensorDataset:
    """New dataset holding only `names`, in the given order."""
    idx = [ds.schema.index(n) for n in names]
    schema = ChannelSchema(tuple(ds.schema.channels[j] for j in idx))
    blocks = [Block(b.subject_id, b.samples[:, idx].copy(), b.labels.copy(), b.provenance)
              for b in ds.blocks]
    return SensorDataset(ds.domain_id, schema, ds.label_set, blocks, ds.rate)


def drop_channels(ds: SensorDataset, names) -> SensorDataset:
    drop = set(names)
    for n in drop:
        ds.schema.index(n)  # raises UnknownChannel
    keep = [n for n in ds.schema.names if n not in drop]
    return select_channels(ds, keep)


def append_channels(ds: SensorDataset, channels: list[Channel],
                    per_block_values: list[np.ndarray]) -> SensorDataset:
    """Append new channels; `per_block_values[i]` is (T_i, len(channels))."""
    if len(per_block_values) != len(ds.blocks):
        raise ValueError("need one value array per block")
    schema = ChannelSchema(ds.schema.channels + tuple(channels))
    blocks = []
    for b, v in zip(ds.blocks, per_block_values):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (b.length, len(channels)):
            raise ValueError(f"value block shape {v.shape} != ({b.length}, {len(channels)})")
        blocks.append(Block(b.subject_id, np.hstack([b.samples, v]), b.labels.copy(),
                            b.provenance))
    return SensorDataset(ds.domain_id, schema, ds.label_set, blocks, ds.rate)


# ---------------------------------------------------------------------------
# schema config + CSV ingestion
# ---------------------------------------------------------------------------

def save_schema(ds_or_schema, path, domain_id=None, label_set=None, rate=None) -> None:
    """Write a schema config (JSON). Accepts a SensorDataset or a ChannelSchema."""
    if isinstance(ds_or_schema, SensorDataset):
        schema = ds_or_schema.schema
        domain_id = domain_id or ds_or_schema.domain_id
        label_set = label_set or ds_or_schema.label_set
        rate = rate or ds_or_schema.rate
    else:
        schema = ds_or_schema
    doc = {
        "domain_id": domain_id,
        "rate": rate,
        "label_set": list(label_set),
        "channels": [
            {
                "name": c.name,
                "modality": c.modality,
                "native_rate": c.native_rate,
                **({"generated_from": c.generated_from} if c.generated_from else {}),
            }
            for c in schema.channels
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_schema(path) -> tuple[str, ChannelSchema, tuple[str, ...], float]:
    """Read a schema config; returns (domain_id, schema, label_set, rate)."""
    doc = json.loads(Path(path).read_text())
    chans = tuple(
        Channel(c["name"], c["modality"], float(c["native_rate"]),
                c.get("generated_from"))
        for c in doc["channels"]
    )
    return (doc["domain_id"], ChannelSchema(chans), tuple(doc["label_set"]),
            float(doc["rate"]))


def save_dataset(ds: SensorDataset, directory) -> list[Path]:
    """One CSV per block: header `timestamp,subject_id,<channels...>,label`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, b in enumerate(ds.blocks):
        t = np.arange(b.length) / ds.rate
        df = pd.DataFrame({"timestamp": t, "subject_id": b.subject_id})
        for j, name in enumerate(ds.schema.names):
            df[name] = b.samples[:, j]
        df["label"] = [ds.label_set[k] for k in b.labels]
        p = directory / f"block_{i:03d}_{b.subject_id}.csv"
        df.to_csv(p, index=False, float_format="%.10g")
        paths.append(p)
    return paths


def load_dataset(directory, schema_path) -> SensorDataset:
    """Load every `*.csv` in `directory` as one block each, against the schema.

    Rejects files whose header disagrees with the schema config and files whose
    timestamps are not strictly increasing.
    """
    domain_id, schema, label_set, rate = load_schema(schema_path)
    expected = ["timestamp", "subject_id", *schema.names, "label"]
    blocks = []
    for p in sorted(Path(directory).glob("*.csv")):
        df = pd.read_csv(p)
        if list(df.columns) != expected:
            raise SchemaMismatch(
                f"{p.name}: header {list(df.columns)} does not match schema "
                f"config ({expected})"
            )
        ts = df["timestamp"].to_numpy(dtype=float)
        if len(ts) == 0:
            raise EmptyBlock(f"{p.name}: no rows")
        if np.any(np.diff(ts) <= 0):
            raise ValueError(f"{p.name}: timestamps must be strictly increasing")
        raw = df["label"].astype(str).tolist()
        idx = np.empty(len(raw), dtype=np.int64)
        for i, v in enumerate(raw):
            if v in label_set:
                idx[i] = label_set.index(v)
            elif v.isdigit() and int(v) < len(label_set):
                idx[i] = int(v)
            else:
                raise UnknownLabel(f"{p.name}: label {v!r} not in {label_set}")
        samples = df[list(schema.names)].to_numpy(dtype=np.float64)
        blocks.append(Block(str(df["subject_id"].iloc[0]), samples, idx))
    return SensorDataset(domain_id, schema, label_set, blocks, rate)
