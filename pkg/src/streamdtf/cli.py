"""Command-line driver.

Subcommands: synth (seeded synthetic data), train (streaming training with
optional running evaluation), predict, eval, verify (oracle self-checks).

All randomness flows from --seed: the state initialization and the stream
shuffle use independent child streams derived from it, so identical
config+seed reproduces byte-identical checkpoints and metric CSVs. The
metrics CSV writes 0.0 in its ms column unless --timing-in-csv is given,
keeping default outputs deterministic.

Configuration may come from a JSON file (--config) whose keys mirror the
flags 1:1; explicit flags override the file. Failures exit nonzero with a
single machine-parsable line `error <CODE>: <message>` on stderr.
"""

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from typing import Sequence

from . import adf_engine, predict_eval, tensor_core, verify
from .bnn import USER_ACTIVATIONS, NetworkSpec
from .errors import (BoundsError, CheckpointError, NumericError, ParseError,
                     UndefinedMetricError)
from .posterior_store import (Hyperparams, init_state, load_checkpoint,
                              save_checkpoint)
from .seeding import derive_seeds
from .tensor_core import (CpGenerator, MlpGenerator, TensorShape, ValueKind,
                          partition_stream, split_train_test, synth_generate,
                          write_coo)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


CONFIG_KEYS = {
    "dims": None, "kind": "continuous", "ranks": None, "hidden": [50, 50],
    "activation": "relu", "batch_size": 256, "rho0": 0.5, "sigma0_sq": 1.0,
    "a0": 1.0, "b0": 1.0, "damping": 0.5, "seed": 0, "train": None,
    "test": None, "checkpoint": None, "metrics": None, "timing_in_csv": False,
}


@dataclass(frozen=True)
class RunConfig:
    """Effective training configuration (defaults mirror the standard setup:
    rank 8 per mode, two hidden layers of 50, relu, batch size 256)."""

    dims: tuple[int, ...]
    kind: str = "continuous"
    ranks: tuple[int, ...] | None = None
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "relu"
    batch_size: int = 256
    rho0: float = 0.5
    sigma0_sq: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    damping: float = 0.5
    seed: int = 0
    train: str | None = None
    test: str | None = None
    checkpoint: str | None = None
    metrics: str | None = None
    timing_in_csv: bool = False

    @property
    def effective_ranks(self) -> tuple[int, ...]:
        return self.ranks if self.ranks is not None else (8,) * len(self.dims)

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["dims"] = list(self.dims)
        doc["ranks"] = None if self.ranks is None else list(self.ranks)
        doc["hidden"] = list(self.hidden)
        return doc


def _resolve_config(args) -> RunConfig:
    merged = dict(CONFIG_KEYS)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fp:
                doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        unknown = set(doc) - set(CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(doc)
    overrides = {
        "dims": args.dims, "kind": args.kind, "hidden": args.hidden,
        "activation": args.activation, "batch_size": args.batch_size,
        "rho0": args.rho0, "sigma0_sq": args.sigma0_sq, "a0": args.a0,
        "b0": args.b0, "damping": args.damping, "seed": args.seed,
        "train": args.train, "test": args.test, "checkpoint": args.checkpoint,
        "metrics": args.metrics, "timing_in_csv": args.timing_in_csv,
    }
    if args.ranks is not None:
        overrides["ranks"] = args.ranks
    elif args.rank is not None:
        dims = overrides["dims"] if overrides["dims"] is not None else merged["dims"]
        if dims is None:
            raise UsageError("--rank needs --dims (or dims in the config file)")
        overrides["ranks"] = (int(args.rank),) * len(dims)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if merged["dims"] is None:
        raise UsageError("tensor dims are required (--dims or config file)")
    return RunConfig(
        dims=tuple(int(d) for d in merged["dims"]),
        kind=str(merged["kind"]),
        ranks=None if merged["ranks"] is None else tuple(int(r) for r in merged["ranks"]),
        hidden=tuple(int(h) for h in merged["hidden"]),
        activation=str(merged["activation"]),
        batch_size=int(merged["batch_size"]),
        rho0=float(merged["rho0"]),
        sigma0_sq=float(merged["sigma0_sq"]),
        a0=float(merged["a0"]),
        b0=float(merged["b0"]),
        damping=float(merged["damping"]),
        seed=int(merged["seed"]),
        train=merged["train"],
        test=merged["test"],
        checkpoint=merged["checkpoint"],
        metrics=merged["metrics"],
        timing_in_csv=bool(merged["timing_in_csv"]),
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="streamdtf",
                     description="Streaming Bayesian deep tensor factorization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate seeded synthetic data")
    p.add_argument("--dims", type=_int_list, required=True)
    p.add_argument("--kind", choices=["continuous", "binary"], default="continuous")
    p.add_argument("--generator", choices=["cp", "mlp"], default="cp")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--entries", type=int, required=True)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write all entries to this COO file")
    p.add_argument("--truth", help="write the generator parameters to this JSON file")
    p.add_argument("--test-fraction", type=float,
                   help="also split into train/test COO files")
    p.add_argument("--train-out")
    p.add_argument("--test-out")
    p.add_argument("--gen-hidden", type=_int_list, default=(20,),
                   help="hidden widths of the mlp generator")
    p.add_argument("--gen-activation", choices=list(USER_ACTIVATIONS), default="tanh")
    p.add_argument("--gen-sparsity", type=float, default=0.0)

    p = sub.add_parser("train", help="stream-train a model")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--train", help="training COO file")
    p.add_argument("--test", help="held-out COO file for running evaluation")
    p.add_argument("--dims", type=_int_list)
    p.add_argument("--kind", choices=["continuous", "binary"])
    p.add_argument("--rank", type=int, help="same rank for every mode")
    p.add_argument("--ranks", type=_int_list, help="per-mode ranks")
    p.add_argument("--hidden", type=_int_list)
    p.add_argument("--activation", choices=list(USER_ACTIVATIONS))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rho0", type=float)
    p.add_argument("--sigma0-sq", type=float)
    p.add_argument("--a0", type=float)
    p.add_argument("--b0", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint", help="write the trained state here")
    p.add_argument("--metrics", help="write the running-evaluation CSV here")
    p.add_argument("--timing-in-csv", action=argparse.BooleanOptionalAction,
                   default=None, help="write real per-batch wallclock into the CSV")
    p.add_argument("--resume-from", help="continue from an existing checkpoint")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective config JSON and exit")

    p = sub.add_parser("predict", help="predict entries from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--indices", required=True,
                   help="file with one K-tuple of node indices per line")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on observed entries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("verify", help="run the oracle self-checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_synth(args) -> int:
    shape = TensorShape(args.dims)
    kind = ValueKind.from_string(args.kind)
    if args.generator == "cp":
        generator = CpGenerator()
    else:
        generator = MlpGenerator(hidden=tuple(args.gen_hidden),
                                 activation=args.gen_activation,
                                 sparsity=args.gen_sparsity)
    if args.out is None and args.test_fraction is None:
        raise UsageError("need --out and/or --test-fraction with --train-out/--test-out")
    entries, truth = synth_generate(shape, args.rank, kind, generator,
                                    args.noise_sd, args.entries, args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            write_coo(entries, fp, kind)
        print(f"wrote {len(entries)} entries to {args.out}")
    if args.test_fraction is not None:
        if not args.train_out or not args.test_out:
            raise UsageError("--test-fraction needs --train-out and --test-out")
        split_seed = derive_seeds(args.seed, 2)[1]
        split = split_train_test(entries, args.test_fraction, split_seed)
        with open(args.train_out, "w", encoding="utf-8") as fp:
            write_coo(split.train, fp, kind)
        with open(args.test_out, "w", encoding="utf-8") as fp:
            write_coo(split.test, fp, kind)
        print(f"wrote {len(split.train)} train / {len(split.test)} test entries")
    if args.truth:
        with open(args.truth, "w", encoding="utf-8") as fp:
            truth.to_json(fp)
        print(f"wrote ground truth to {args.truth}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_json_dict(), sort_keys=True, indent=2))
        return 0
    if cfg.train is None:
        raise UsageError("a training file is required (--train or config)")
    if cfg.metrics is not None and cfg.test is None:
        raise UsageError("--metrics needs --test for the running evaluation")
    shape = TensorShape(cfg.dims)
    kind = ValueKind.from_string(cfg.kind)
    ranks = cfg.effective_ranks
    with open(cfg.train, encoding="utf-8") as fp:
        train_entries = tensor_core.parse_coo(fp, shape, kind)
    init_seed, shuffle_seed = derive_seeds(cfg.seed, 2)
    if args.resume_from:
        with open(args.resume_from, encoding="utf-8") as fp:
            state = load_checkpoint(fp)
    else:
        net = NetworkSpec.for_factorization(sum(ranks), cfg.hidden, cfg.activation)
        hyper = Hyperparams(rho0=cfg.rho0, sigma0_sq=cfg.sigma0_sq, a0=cfg.a0,
                            b0=cfg.b0, ranks=ranks)
        state = init_state(shape, kind, net, hyper, seed=init_seed)
    batches = partition_stream(train_entries, cfg.batch_size, seed=shuffle_seed)

    series = None
    if cfg.test is not None:
        with open(cfg.test, encoding="utf-8") as fp:
            test_entries = tensor_core.parse_coo(fp, shape, kind)
        series = predict_eval.running_eval(state, batches, test_entries,
                                           damping=cfg.damping)
    else:
        for batch in batches:
            adf_engine.process_batch(state, batch, damping=cfg.damping)

    if cfg.checkpoint:
        with open(cfg.checkpoint, "w", encoding="utf-8") as fp:
            save_checkpoint(state, fp)
    if series is not None and cfg.metrics:
        with open(cfg.metrics, "w", encoding="utf-8") as fp:
            series.write_csv(fp, include_timing=cfg.timing_in_csv)
    if series is not None and series.rows:
        print(f"final {series.metric_name} {series.rows[-1].metric!r}")
    else:
        print(f"trained entries={state.entries_seen} batches={len(batches)}")
    return 0


def _cmd_predict(args) -> int:
    with open(args.checkpoint, encoding="utf-8") as fp:
        state = load_checkpoint(fp)
    with open(args.indices, encoding="utf-8") as fp:
        indices = tensor_core.parse_index_lines(fp, state.shape)
    k = state.shape.mode_count
    header = ",".join(f"i_{i + 1}" for i in range(k))
    with open(args.out, "w", encoding="utf-8") as fp:
        if state.kind is ValueKind.CONTINUOUS:
            means, variances = predict_eval.predict_batch(state, indices)
            fp.write(header + ",prediction,variance\n")
            for idx, m, v in zip(indices, means, variances):
                fp.write(",".join(str(i) for i in idx) + f",{float(m)!r},{float(v)!r}\n")
        else:
            probs = predict_eval.predict_batch(state, indices)
            fp.write(header + ",prediction\n")
            for idx, pr in zip(indices, probs):
                fp.write(",".join(str(i) for i in idx) + f",{float(pr)!r}\n")
    print(f"wrote {len(indices)} predictions to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    with open(args.checkpoint, encoding="utf-8") as fp:
        state = load_checkpoint(fp)
    with open(args.data, encoding="utf-8") as fp:
        entries = tensor_core.parse_coo(fp, state.shape, state.kind)
    if not entries:
        raise UsageError("evaluation file holds no entries")
    indices = [e.index for e in entries]
    values = [e.value for e in entries]
    if state.kind is ValueKind.CONTINUOUS:
        means, _ = predict_eval.predict_batch(state, indices)
        print(f"rmse {predict_eval.rmse(means, values)!r}")
    else:
        probs = predict_eval.predict_batch(state, indices)
        print(f"auc {predict_eval.auc(probs, values)!r}")
    return 0


def _cmd_verify(args) -> int:
    results = verify.run_checks(seed=args.seed)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail}")
    return 0 if all(r.passed for r in results) else 1


_ERROR_CODES = (
    (UsageError, "ARG", 2),
    (ParseError, "PARSE", 1),
    (BoundsError, "BOUNDS", 1),
    (CheckpointError, "CHECKPOINT", 1),
    (UndefinedMetricError, "METRIC", 1),
    (NumericError, "NUMERIC", 1),
    (FileNotFoundError, "IO", 1),
    (OSError, "IO", 1),
    (ValueError, "VALUE", 1),
)


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "synth": _cmd_synth, "train": _cmd_train, "predict": _cmd_predict,
            "eval": _cmd_eval, "verify": _cmd_verify,
        }[args.command]
        return handler(args)
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        for exc_type, code, status in _ERROR_CODES:
            if isinstance(exc, exc_type):
                message = " ".join(str(exc).split())
                print(f"error {code}: {message}", file=sys.stderr)
                return status
        raise


if __name__ == "__main__":
    sys.exit(main())
