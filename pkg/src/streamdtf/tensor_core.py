"""Sparse observed-entry data model.

COO text ingestion, train/test splitting, stream shuffling and batch
partitioning, and seeded synthetic data generation (multilinear and
random-network generators).

Everything here is a pure value transformation: no shared mutable state,
safe to call concurrently on distinct inputs.

COO text format: optional '#' comment lines, blank lines skipped; each data
line holds K 0-based integer node indices followed by one value, whitespace
separated, UTF-8, LF or CRLF. Values are rendered with full-precision
decimal `repr` so parse -> write -> parse is the identity.
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import bnn
from .errors import BoundsError, ParseError
from .seeding import make_rng


class ValueKind(Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"

    @classmethod
    def from_string(cls, name: str) -> "ValueKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown value kind {name!r}") from None


@dataclass(frozen=True)
class TensorShape:
    """Mode sizes d_1..d_K of a K-mode tensor."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ValueError("a tensor needs at least one mode")
        if any(int(d) < 1 for d in self.dims):
            raise ValueError(f"all mode sizes must be >= 1, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def mode_count(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return math.prod(self.dims)

    def contains(self, index: Sequence[int]) -> bool:
        return len(index) == len(self.dims) and all(
            0 <= i < d for i, d in zip(index, self.dims)
        )


@dataclass(frozen=True)
class ObservedEntry:
    """One observed tensor cell: a K-tuple of node indices and its value."""

    index: tuple[int, ...]
    value: float

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ValueError(f"entry value must be finite, got {self.value}")


@dataclass(frozen=True)
class EntryBatch:
    """One shuffled chunk of the training stream."""

    entries: tuple[ObservedEntry, ...]
    ordinal: int

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ValueError("a batch cannot be empty")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[ObservedEntry, ...]
    test: tuple[ObservedEntry, ...]


def _validate_entry(index: tuple[int, ...], value: float, shape: TensorShape,
                    kind: ValueKind, where: str) -> None:
    for k, (i, d) in enumerate(zip(index, shape.dims)):
        if not 0 <= i < d:
            raise BoundsError(f"{where}: index {i} out of range [0, {d}) in mode {k + 1}")
    if not math.isfinite(value):
        raise ValueError(f"{where}: value must be finite, got {value}")
    if kind is ValueKind.BINARY and value not in (0.0, 1.0):
        raise ValueError(f"{where}: binary value must be 0 or 1, got {value}")


def parse_coo(lines: Iterable[str], shape: TensorShape, kind: ValueKind) -> list[ObservedEntry]:
    """Parse a line-oriented COO source into observed entries, order preserved.

    Malformed lines raise ParseError with the 1-based line number; indices
    outside the shape raise BoundsError; binary values outside {0, 1} raise
    ValueError. Duplicate index tuples are kept as-is.
    """
    k = shape.mode_count
    out: list[ObservedEntry] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != k + 1:
            raise ParseError(f"line {line_no}: expected {k + 1} fields, got {len(fields)}")
        try:
            index = tuple(int(tok) for tok in fields[:k])
        except ValueError:
            raise ParseError(f"line {line_no}: non-integer index field") from None
        try:
            value = float(fields[k])
        except ValueError:
            raise ParseError(f"line {line_no}: non-numeric value field {fields[k]!r}") from None
        _validate_entry(index, value, shape, kind, f"line {line_no}")
        out.append(ObservedEntry(index, value))
    return out


def format_value(value: float, kind: ValueKind) -> str:
    if kind is ValueKind.BINARY:
        return str(int(value))
    return repr(float(value))


def write_coo(entries: Iterable[ObservedEntry], fp: TextIO, kind: ValueKind) -> None:
    """Write entries in the COO text format (counterpart of parse_coo)."""
    for e in entries:
        fp.write(" ".join(str(i) for i in e.index))
        fp.write(" ")
        fp.write(format_value(e.value, kind))
        fp.write("\n")


def parse_index_lines(lines: Iterable[str], shape: TensorShape) -> list[tuple[int, ...]]:
    """Parse lines of K node indices (no value column); used by prediction."""
    k = shape.mode_count
    out: list[tuple[int, ...]] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != k:
            raise ParseError(f"line {line_no}: expected {k} index fields, got {len(fields)}")
        try:
            index = tuple(int(tok) for tok in fields)
        except ValueError:
            raise ParseError(f"line {line_no}: non-integer index field") from None
        for mode, (i, d) in enumerate(zip(index, shape.dims)):
            if not 0 <= i < d:
                raise BoundsError(f"line {line_no}: index {i} out of range [0, {d}) in mode {mode + 1}")
        out.append(index)
    return out


def split_sizes(n_entries: int, test_fraction: float) -> tuple[int, int]:
    """Train/test sizes for a split: round(n*f) test entries, clamped so both
    sides are nonempty."""
    n_test = int(round(n_entries * test_fraction))
    n_test = min(max(n_test, 1), n_entries - 1)
    return n_entries - n_test, n_test


def split_train_test(entries: Sequence[ObservedEntry], test_fraction: float,
                     seed: int) -> DatasetSplit:
    """Uniform random split driven solely by the seed.

    Duplicate index tuples are treated as independent entries. Input order
    is preserved within each side.
    """
    if len(entries) < 2:
        raise ValueError("need at least 2 entries to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    _, n_test = split_sizes(len(entries), test_fraction)
    perm = make_rng(seed).permutation(len(entries))
    test_idx = set(int(i) for i in perm[:n_test])
    train = tuple(e for i, e in enumerate(entries) if i not in test_idx)
    test = tuple(e for i, e in enumerate(entries) if i in test_idx)
    return DatasetSplit(train=train, test=test)


def partition_stream(entries: Sequence[ObservedEntry], batch_size: int,
                     seed: int) -> list[EntryBatch]:
    """Shuffle entries uniformly by seed, then chunk into consecutive batches.

    All batches have `batch_size` entries except possibly the last; the union
    of the batches is the input multiset.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = make_rng(seed).permutation(len(entries))
    shuffled = [entries[int(i)] for i in perm]
    return [
        EntryBatch(entries=tuple(shuffled[lo:lo + batch_size]), ordinal=ordinal)
        for ordinal, lo in enumerate(range(0, len(shuffled), batch_size))
    ]


# ---------------------------------------------------------------------------
# synthetic data generation


@dataclass(frozen=True)
class CpGenerator:
    """Multilinear sum-of-products generator (classical rank-r factorization)."""


@dataclass(frozen=True)
class MlpGenerator:
    """Randomly initialized feed-forward generator; each weight is zeroed
    independently with probability `sparsity`."""

    hidden: tuple[int, ...]
    activation: str = "tanh"
    sparsity: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")


GROUND_TRUTH_FORMAT = "streamdtf-ground-truth"
GROUND_TRUTH_VERSION = 1


@dataclass
class GroundTruth:
    """Stored generator parameters; re-evaluating on stored indices
    reproduces the stored noiseless values exactly."""

    generator: str  # "multilinear-cp" | "random-mlp"
    shape: TensorShape
    kind: ValueKind
    rank: int
    noise_sd: float
    seed: int
    embeddings: list[np.ndarray]  # per mode, (d_k, rank)
    network: "bnn.NetworkSpec | None" = None
    weights: list[np.ndarray] | None = None  # stored post-masking
    zero_mask: list[np.ndarray] | None = None  # True where the weight was zeroed
    sparsity: float = 0.0

    def inputs_for(self, indices: Sequence[tuple[int, ...]]) -> np.ndarray:
        idx = np.asarray(indices, dtype=int)
        return np.hstack([table[idx[:, k]] for k, table in enumerate(self.embeddings)])

    def evaluate(self, indices: Sequence[tuple[int, ...]]) -> np.ndarray:
        """Noiseless generator values for the given index tuples."""
        idx = np.asarray(indices, dtype=int)
        if self.generator == "multilinear-cp":
            rows = np.stack(
                [table[idx[:, k]] for k, table in enumerate(self.embeddings)], axis=0
            )
            return np.prod(rows, axis=0).sum(axis=1)
        x = self.inputs_for(indices)
        alpha, _ = bnn.forward_mean_batch(self.network, self.weights, x)
        return alpha

    def to_json(self, fp: TextIO) -> None:
        doc = {
            "format": GROUND_TRUTH_FORMAT,
            "version": GROUND_TRUTH_VERSION,
            "generator": self.generator,
            "dims": list(self.shape.dims),
            "kind": self.kind.value,
            "rank": self.rank,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "sparsity": self.sparsity,
            "embeddings": [t.tolist() for t in self.embeddings],
            "network": None if self.network is None else {
                "widths": list(self.network.widths),
                "activation": self.network.activation,
            },
            "weights": None if self.weights is None else [w.tolist() for w in self.weights],
            "zero_mask": None if self.zero_mask is None else [
                m.astype(int).tolist() for m in self.zero_mask
            ],
        }
        json.dump(doc, fp, sort_keys=True, separators=(",", ":"))
        fp.write("\n")

    @classmethod
    def from_json(cls, fp: TextIO) -> "GroundTruth":
        doc = json.load(fp)
        if doc.get("format") != GROUND_TRUTH_FORMAT or doc.get("version") != GROUND_TRUTH_VERSION:
            raise ValueError("not a ground-truth document of a supported version")
        net = None
        if doc["network"] is not None:
            net = bnn.NetworkSpec(tuple(doc["network"]["widths"]), doc["network"]["activation"])
        return cls(
            generator=doc["generator"],
            shape=TensorShape(tuple(doc["dims"])),
            kind=ValueKind.from_string(doc["kind"]),
            rank=int(doc["rank"]),
            noise_sd=float(doc["noise_sd"]),
            seed=int(doc["seed"]),
            sparsity=float(doc.get("sparsity", 0.0)),
            embeddings=[np.asarray(t, dtype=float) for t in doc["embeddings"]],
            network=net,
            weights=None if doc["weights"] is None else [
                np.asarray(w, dtype=float) for w in doc["weights"]
            ],
            zero_mask=None if doc["zero_mask"] is None else [
                np.asarray(m, dtype=int).astype(bool) for m in doc["zero_mask"]
            ],
        )


def _sample_distinct_indices(shape: TensorShape, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    total = shape.n_cells
    if total <= 10_000_000:
        flat = rng.choice(total, size=n, replace=False)
    else:
        # rejection sampling keeps memory bounded on huge shapes
        seen: set[int] = set()
        picks: list[int] = []
        while len(picks) < n:
            draw = rng.integers(0, total, size=max(n - len(picks), 1024))
            for v in draw:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    picks.append(v)
                    if len(picks) == n:
                        break
        flat = np.asarray(picks)
    coords = np.unravel_index(np.asarray(flat), shape.dims)
    return [tuple(int(c[i]) for c in coords) for i in range(n)]


def synth_generate(shape: TensorShape, rank: int, kind: ValueKind,
                   generator, noise_sd: float, n_entries: int,
                   seed: int) -> tuple[list[ObservedEntry], GroundTruth]:
    """Generate observed entries at distinct random index tuples.

    True embeddings are drawn from the standard normal. The noiseless value
    comes from the chosen generator (CP sum-of-products, or a random MLP with
    weights zeroed with probability `sparsity`). Continuous data adds
    Gaussian noise with sd `noise_sd`; binary data samples through the probit
    link (noise_sd is ignored, the latent noise is standard normal).

    Draw order (fixed for reproducibility): indices, embeddings per mode,
    generator weights and zero mask (MLP only), observation noise.
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    if n_entries < 1:
        raise ValueError(f"n_entries must be >= 1, got {n_entries}")
    if n_entries > shape.n_cells:
        raise ValueError(
            f"cannot draw {n_entries} distinct entries from a tensor with "
            f"{shape.n_cells} cells"
        )
    rng = make_rng(seed)
    indices = _sample_distinct_indices(shape, n_entries, rng)
    embeddings = [rng.standard_normal((d, rank)) for d in shape.dims]

    if isinstance(generator, CpGenerator):
        truth = GroundTruth(
            generator="multilinear-cp", shape=shape, kind=kind, rank=rank,
            noise_sd=noise_sd, seed=seed, embeddings=embeddings,
        )
    elif isinstance(generator, MlpGenerator):
        net = bnn.NetworkSpec.for_factorization(
            input_dim=rank * shape.mode_count,
            hidden=generator.hidden,
            activation=generator.activation,
        )
        weights = [rng.standard_normal(s) for s in net.weight_shapes]
        mask = [rng.random(s) < generator.sparsity for s in net.weight_shapes]
        weights = [np.where(m, 0.0, w) for w, m in zip(weights, mask)]
        truth = GroundTruth(
            generator="random-mlp", shape=shape, kind=kind, rank=rank,
            noise_sd=noise_sd, seed=seed, embeddings=embeddings,
            network=net, weights=weights, zero_mask=mask,
            sparsity=generator.sparsity,
        )
    else:
        raise ValueError(f"unknown generator {generator!r}")

    noiseless = truth.evaluate(indices)
    if kind is ValueKind.CONTINUOUS:
        values = noiseless + (rng.normal(0.0, noise_sd, size=n_entries)
                              if noise_sd > 0 else 0.0)
    else:
        values = (noiseless + rng.standard_normal(n_entries) > 0).astype(float)
    entries = [ObservedEntry(idx, float(v)) for idx, v in zip(indices, values)]
    return entries, truth
