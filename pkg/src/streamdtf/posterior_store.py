"""Factorized approximate posterior over embeddings, network weights,
selector indicators, and the noise precision.

Per weight we keep a Gaussian (mean, var), a Bernoulli selector probability,
and the sparsity-prior approximation term (term_mean, term_var, term_logit);
per embedding cell a Gaussian (mean, var); for continuous data a Gamma
posterior over the inverse noise variance. Total stored posterior scalars:
6*V weight fields + 2*sum_k d_k*r_k embedding fields (+2 Gamma fields).

A ModelState is single-writer. Read-only snapshots (deep copies) may be
shared across threads for prediction. Embeddings are mutated only through
gather_entry/scatter_entry.

Checkpoints are versioned JSON with every posterior field named; floats are
rendered with shortest round-trip decimals so load(save(s)) reproduces s
exactly, and the generator state is stored so a resumed run continues the
identical random stream.
"""

import json
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
from scipy.special import ndtr, ndtri

from .bnn import NetworkSpec
from .errors import BoundsError, CheckpointError
from .seeding import make_rng
from .tensor_core import TensorShape, ValueKind

CHECKPOINT_FORMAT = "streamdtf-checkpoint"
CHECKPOINT_VERSION = 1

# variance guard floor used by the update engine
DEFAULT_V_FLOOR = 1e-10


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters: prior inclusion probability, slab variance,
    Gamma shape/rate for the noise precision, and per-mode embedding ranks."""

    rho0: float = 0.5
    sigma0_sq: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    ranks: tuple[int, ...] = (8,)

    def __post_init__(self):
        if not 0.0 < self.rho0 < 1.0:
            raise ValueError(f"rho0 must be strictly inside (0, 1), got {self.rho0}")
        for name in ("sigma0_sq", "a0", "b0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if any(r < 1 for r in self.ranks):
            raise ValueError(f"all ranks must be >= 1, got {self.ranks}")

    @property
    def input_dim(self) -> int:
        return sum(self.ranks)


@dataclass
class GammaPosterior:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"Gamma parameters must be > 0, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return self.a / self.b


@dataclass
class ModeEmbeddings:
    """Gaussian tables for one tensor mode: (d_k, r_k) means and variances."""

    mean: np.ndarray
    var: np.ndarray


@dataclass
class WeightLayer:
    """Per-layer weight posterior and prior-term arrays, shape (V_m, V_{m-1}+1)."""

    mean: np.ndarray
    var: np.ndarray
    rho_post: np.ndarray
    term_mean: np.ndarray
    term_var: np.ndarray
    term_logit: np.ndarray

    def site_at(self, j: int, t: int) -> "WeightPosterior":
        return WeightPosterior(
            mean=float(self.mean[j, t]), var=float(self.var[j, t]),
            rho_post=float(self.rho_post[j, t]), term_mean=float(self.term_mean[j, t]),
            term_var=float(self.term_var[j, t]), term_logit=float(self.term_logit[j, t]),
        )

    def set_site(self, j: int, t: int, wp: "WeightPosterior") -> None:
        self.mean[j, t] = wp.mean
        self.var[j, t] = wp.var
        self.rho_post[j, t] = wp.rho_post
        self.term_mean[j, t] = wp.term_mean
        self.term_var[j, t] = wp.term_var
        self.term_logit[j, t] = wp.term_logit


@dataclass(frozen=True)
class WeightPosterior:
    """One weight's posterior Gaussian, selector probability, and prior term."""

    mean: float
    var: float
    rho_post: float
    term_mean: float
    term_var: float
    term_logit: float

    def __post_init__(self):
        if self.var <= 0 or self.term_var <= 0:
            raise ValueError("weight variances must be > 0")
        if not 0.0 <= self.rho_post <= 1.0:
            raise ValueError(f"selector probability must be in [0, 1], got {self.rho_post}")


@dataclass(frozen=True)
class EntryLocator:
    """Which embedding rows a gather touched; required for scatter-back."""

    index: tuple[int, ...]


@dataclass
class ModelState:
    shape: TensorShape
    kind: ValueKind
    net: NetworkSpec
    hyper: Hyperparams
    embeddings: list[ModeEmbeddings]
    weights: list[WeightLayer]
    gamma: GammaPosterior | None
    entries_seen: int
    rng: np.random.Generator

    def weight_means(self) -> list[np.ndarray]:
        return [lay.mean for lay in self.weights]

    def weight_vars(self) -> list[np.ndarray]:
        return [lay.var for lay in self.weights]

    def gather_entry(self, index: Sequence[int]) -> tuple[np.ndarray, np.ndarray, EntryLocator]:
        """Concatenated embedding means/variances for one entry.

        Concatenation order: mode 1 first, ascending rank within a mode.
        """
        index = tuple(int(i) for i in index)
        if not self.shape.contains(index):
            raise BoundsError(f"index {index} outside shape {self.shape.dims}")
        means = np.concatenate([emb.mean[i] for emb, i in zip(self.embeddings, index)])
        variances = np.concatenate([emb.var[i] for emb, i in zip(self.embeddings, index)])
        return means, variances, EntryLocator(index=index)

    def scatter_entry(self, locator: EntryLocator, new_means: np.ndarray,
                      new_vars: np.ndarray) -> None:
        """Write updated moments back to exactly the gathered cells."""
        index = locator.index
        if not self.shape.contains(index):
            raise ValueError(f"locator {locator} does not match shape {self.shape.dims}")
        new_means = np.asarray(new_means, dtype=float)
        new_vars = np.asarray(new_vars, dtype=float)
        expected = sum(self.hyper.ranks)
        if new_means.shape != (expected,) or new_vars.shape != (expected,):
            raise ValueError(f"expected length-{expected} vectors for scatter")
        if np.any(new_vars <= 0) or not np.all(np.isfinite(new_vars)) \
                or not np.all(np.isfinite(new_means)):
            raise ValueError("scatter requires finite means and strictly positive variances")
        offset = 0
        for emb, i, r in zip(self.embeddings, index, self.hyper.ranks):
            emb.mean[i] = new_means[offset:offset + r]
            emb.var[i] = new_vars[offset:offset + r]
            offset += r

    def stored_scalar_count(self) -> int:
        """Exact number of stored posterior scalars (space-linearity check)."""
        n_weights = 6 * self.net.n_weights
        n_embed = 2 * sum(d * r for d, r in zip(self.shape.dims, self.hyper.ranks))
        n_gamma = 2 if self.gamma is not None else 0
        return n_weights + n_embed + n_gamma


def _truncated_standard_normal(rng: np.random.Generator, bound: float,
                               size: tuple[int, ...]) -> np.ndarray:
    # inverse-CDF sampling: deterministic draw count for any bound
    lo, hi = ndtr(-bound), ndtr(bound)
    return ndtri(rng.uniform(lo, hi, size=size))


def init_state(shape: TensorShape, kind: ValueKind, net: NetworkSpec,
               hyper: Hyperparams, seed: int) -> ModelState:
    """Fresh state: embeddings copy their standard-normal prior; each weight
    term gets variance sigma0_sq, a mean drawn from a standard Gaussian
    truncated to [-sigma0, sigma0], and logit 0; the weight posterior starts
    as its term alone and the selector posterior starts at rho0; the Gamma
    posterior starts at (a0, b0). Deterministic under the seed."""
    if len(hyper.ranks) != shape.mode_count:
        raise ValueError(
            f"need one rank per mode: {len(hyper.ranks)} ranks for "
            f"{shape.mode_count} modes"
        )
    if hyper.input_dim != net.input_dim:
        raise ValueError(
            f"network input width {net.input_dim} != sum of ranks {hyper.input_dim}"
        )
    rng = make_rng(seed)
    embeddings = [
        ModeEmbeddings(mean=np.zeros((d, r)), var=np.ones((d, r)))
        for d, r in zip(shape.dims, hyper.ranks)
    ]
    sigma0 = float(np.sqrt(hyper.sigma0_sq))
    layers = []
    for w_shape in net.weight_shapes:
        term_mean = _truncated_standard_normal(rng, sigma0, w_shape)
        layers.append(WeightLayer(
            mean=term_mean.copy(),
            var=np.full(w_shape, hyper.sigma0_sq),
            rho_post=np.full(w_shape, hyper.rho0),
            term_mean=term_mean,
            term_var=np.full(w_shape, hyper.sigma0_sq),
            term_logit=np.zeros(w_shape),
        ))
    gamma = GammaPosterior(hyper.a0, hyper.b0) if kind is ValueKind.CONTINUOUS else None
    return ModelState(
        shape=shape, kind=kind, net=net, hyper=hyper, embeddings=embeddings,
        weights=layers, gamma=gamma, entries_seen=0, rng=rng,
    )


# ---------------------------------------------------------------------------
# checkpoint IO


def _rng_state_to_doc(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        # 128-bit integers go through as strings for portability
        "state": {k: str(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_state_from_doc(doc: dict) -> np.random.Generator:
    if doc.get("bit_generator") != "PCG64":
        raise CheckpointError(f"unsupported bit generator {doc.get('bit_generator')!r}")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {k: int(v) for k, v in doc["state"].items()},
        "has_uint32": int(doc["has_uint32"]),
        "uinteger": int(doc["uinteger"]),
    }
    return rng


def save_checkpoint(state: ModelState, fp: TextIO) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(state.shape.dims),
        "kind": state.kind.value,
        "network": {"widths": list(state.net.widths), "activation": state.net.activation},
        "hyper": {
            "rho0": state.hyper.rho0,
            "sigma0_sq": state.hyper.sigma0_sq,
            "a0": state.hyper.a0,
            "b0": state.hyper.b0,
            "ranks": list(state.hyper.ranks),
        },
        "entries_seen": state.entries_seen,
        "embeddings": [
            {"mean": emb.mean.tolist(), "var": emb.var.tolist()}
            for emb in state.embeddings
        ],
        "weights": [
            {
                "mean": lay.mean.tolist(),
                "var": lay.var.tolist(),
                "rho_post": lay.rho_post.tolist(),
                "term_mean": lay.term_mean.tolist(),
                "term_var": lay.term_var.tolist(),
                "term_logit": lay.term_logit.tolist(),
            }
            for lay in state.weights
        ],
        "gamma": None if state.gamma is None else {"a": state.gamma.a, "b": state.gamma.b},
        "rng": _rng_state_to_doc(state.rng),
    }
    json.dump(doc, fp, sort_keys=True, separators=(",", ":"))
    fp.write("\n")


def load_checkpoint(fp: TextIO) -> ModelState:
    try:
        doc = json.load(fp)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"invalid or truncated checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a model checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        shape = TensorShape(tuple(doc["dims"]))
        kind = ValueKind.from_string(doc["kind"])
        net = NetworkSpec(tuple(doc["network"]["widths"]), doc["network"]["activation"])
        hyper = Hyperparams(
            rho0=doc["hyper"]["rho0"], sigma0_sq=doc["hyper"]["sigma0_sq"],
            a0=doc["hyper"]["a0"], b0=doc["hyper"]["b0"],
            ranks=tuple(doc["hyper"]["ranks"]),
        )
        embeddings = [
            ModeEmbeddings(mean=np.asarray(e["mean"], dtype=float),
                           var=np.asarray(e["var"], dtype=float))
            for e in doc["embeddings"]
        ]
        weights = [
            WeightLayer(
                mean=np.asarray(w["mean"], dtype=float),
                var=np.asarray(w["var"], dtype=float),
                rho_post=np.asarray(w["rho_post"], dtype=float),
                term_mean=np.asarray(w["term_mean"], dtype=float),
                term_var=np.asarray(w["term_var"], dtype=float),
                term_logit=np.asarray(w["term_logit"], dtype=float),
            )
            for w in doc["weights"]
        ]
        gamma = None if doc["gamma"] is None else GammaPosterior(
            a=float(doc["gamma"]["a"]), b=float(doc["gamma"]["b"]))
        rng = _rng_state_from_doc(doc["rng"])
        entries_seen = int(doc["entries_seen"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint schema violation: {exc!r}") from None
    state = ModelState(
        shape=shape, kind=kind, net=net, hyper=hyper, embeddings=embeddings,
        weights=weights, gamma=gamma, entries_seen=entries_seen, rng=rng,
    )
    for emb, d, r in zip(state.embeddings, shape.dims, hyper.ranks):
        if emb.mean.shape != (d, r) or emb.var.shape != (d, r):
            raise CheckpointError("embedding table shape mismatch")
    for lay, w_shape in zip(state.weights, net.weight_shapes):
        for arr in (lay.mean, lay.var, lay.rho_post, lay.term_mean, lay.term_var,
                    lay.term_logit):
            if arr.shape != w_shape:
                raise CheckpointError("weight table shape mismatch")
    return state


def checkpoint_bytes(state: ModelState) -> bytes:
    """Canonical serialized form; handy for equality checks."""
    import io

    buf = io.StringIO()
    save_checkpoint(state, buf)
    return buf.getvalue().encode("utf-8")
