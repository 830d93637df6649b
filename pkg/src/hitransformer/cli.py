"""Command-line entry point: ``hitransformer {train,eval,bench,gradcheck,synth}``.

Settings come from a flat ``key=value`` file (``--config``) overridden by
flags. Every run writes ``resolved_config.txt`` into its output directory;
passing that file back through ``--config`` reproduces the run.

Exit codes: 0 success, 1 data/config error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path


from . import bench
from .config import ModelConfig, coerce_fields, dump_kv, parse_kv
from .data import (
    Vocab,
    build_vocab,
    corpus_stats,
    format_stats,
    gen_synthetic_task,
    load_embedding_table,
    load_jsonl_dataset,
    write_jsonl,
)
from .errors import ConfigError, DataError, HiTransformerError, InvariantError
from .model import build_model, gradcheck_model
from .numerics import load_into, save_checkpoint
from .train_eval import TrainConfig, evaluate, train_epochs



@dataclass
class RunConfig:
    command: str = ""
    # paths
    dataset: str = ""
    val_dataset: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    out: str = "runs/out"
    # training
    seed: int = 0
    epochs: int = 3
    batch_size: int = 16
    lr: float = 1e-4
    val_fraction: float = 0.1
    min_count: int = 1
    # model overrides
    d: int = 256
    heads: int = 8
    layers: int = 2
    k_max: int = 32
    m_max: int = 64
    d_ff: int = 0
    dropout: float = 0.2
    flat_max_len: int = 512
    num_classes: int = 0  # 0: infer from the training labels
    ablate_propagation: bool = False
    flat: bool = False
    # synth
    kind: str = "keyword"
    n_docs: int = 200
    synth_m: int = 64
    synth_k: int = 32
    synth_vocab: int = 200
    policy: str = "uniform"
    # gradcheck
    tiny: bool = False
    gradcheck_coords: int = 0  # 0 checks every coordinate
    # bench grid
    bench_hi_m: str = "8,16,32,64"
    bench_flat_m: str = "8,16,32,64"
    bench_k: int = 32
    bench_d: int = 64
    bench_heads: int = 8
    bench_repeats: int = 5
    bench_memory_mb: int = 2048

    def model_config(self, vocab_size: int, num_classes: int, pretrained_dim: int = 0) -> ModelConfig:
        return ModelConfig(
            d=self.d,
            heads=self.heads,
            layers=self.layers,
            k_max=self.k_max,
            m_max=self.m_max,
            d_ff=self.d_ff,
            vocab_size=vocab_size,
            num_classes=num_classes,
            dropout=self.dropout,
            flat_max_len=self.flat_max_len,
            use_context_propagation=not self.ablate_propagation,
            flat=self.flat,
            pretrained_dim=pretrained_dim,
            seed=self.seed,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--dataset")
    common.add_argument("--embeddings")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int, dest="batch_size")
    common.add_argument("--ablate-propagation", action="store_const", const=True, dest="ablate_propagation")
    common.add_argument("--flat", action="store_const", const=True)
    common.add_argument("--kind", choices=("keyword", "xor"))
    common.add_argument("--tiny", action="store_const", const=True)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")

    parser = _Parser(prog="hitransformer", description="Hi-Transformer long-document classifier")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a model; writes history.csv and a checkpoint")
    sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    sub.add_parser("bench", parents=[common], help="time forward layers over a length grid")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all parameter gradients")
    sub.add_parser("synth", parents=[common], help="write a synthetic JSONL corpus")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    raw: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        raw.update(parse_kv(path.read_text(), str(path)))
    values = coerce_fields(RunConfig, raw)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values.update(coerce_fields(RunConfig, {key.strip(): value.strip()}))
    for key in ("dataset", "embeddings", "checkpoint", "out", "seed", "epochs", "batch_size",
                "ablate_propagation", "flat", "kind", "tiny"):
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    values["command"] = args.command
    return RunConfig(**values)


def _write_resolved(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(dump_kv(dataclasses.asdict(cfg)))
    return out


def _int_list(text: str, key: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated integer list, got {text!r}") from None


def _require(value: str, flag: str) -> str:
    if not value:
        raise ConfigError(f"{flag} is required for this command")
    return value


# -- commands ------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> None:
    docs = load_jsonl_dataset(_require(cfg.dataset, "--dataset"))
    if cfg.val_dataset:
        train_docs, val_docs = docs, load_jsonl_dataset(cfg.val_dataset)
    else:
        n_val = max(1, int(round(len(docs) * cfg.val_fraction)))
        if n_val >= len(docs):
            raise DataError("dataset too small to hold out a validation split")
        train_docs, val_docs = docs[:-n_val], docs[-n_val:]
    vocab = build_vocab(train_docs, cfg.min_count)
    num_classes = cfg.num_classes or max(d.label for d in train_docs + val_docs) + 1
    pretrained = None
    if cfg.embeddings:
        pretrained, coverage = load_embedding_table(cfg.embeddings, vocab, seed=cfg.seed)
        print(f"embeddings: {coverage.found} tokens found, coverage {coverage.fraction:.2%}")
    model_cfg = cfg.model_config(len(vocab), num_classes, pretrained.shape[1] if pretrained is not None else 0)
    model = build_model(model_cfg, pretrained)
    print(f"train: {format_stats(corpus_stats(train_docs))}")
    history = train_epochs(
        model,
        model.encode(train_docs, vocab),
        model.encode(val_docs, vocab),
        TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed),
        log=print,
    )
    out = Path(cfg.out)
    (out / "history.csv").write_text(history.to_csv())
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.bin"
    save_checkpoint(ckpt, model.params)
    model_cfg.save(f"{ckpt}.config")
    vocab.save(f"{ckpt}.vocab")
    print(f"wrote {out / 'history.csv'} and {ckpt}")


def cmd_eval(cfg: RunConfig) -> None:
    ckpt = _require(cfg.checkpoint, "--checkpoint")
    for sidecar in (f"{ckpt}.config", f"{ckpt}.vocab"):
        if not Path(sidecar).exists():
            raise DataError(f"missing checkpoint sidecar {sidecar}")
    model_cfg = ModelConfig.load(f"{ckpt}.config")
    vocab = Vocab.load(f"{ckpt}.vocab")
    model = build_model(model_cfg)
    load_into(model.params, ckpt)
    docs = load_jsonl_dataset(_require(cfg.dataset, "--dataset"))
    metrics = evaluate(model, model.encode(docs, vocab))
    text = metrics.to_text()
    print(text, end="")
    (Path(cfg.out) / "metrics.txt").write_text(text)


def cmd_bench(cfg: RunConfig) -> None:
    reports = bench.scaling_benchmark(
        hi_m=_int_list(cfg.bench_hi_m, "bench_hi_m"),
        flat_m=_int_list(cfg.bench_flat_m, "bench_flat_m"),
        k=cfg.bench_k,
        d=cfg.bench_d,
        heads=cfg.bench_heads,
        repeats=cfg.bench_repeats,
        seed=cfg.seed,
        memory_budget=cfg.bench_memory_mb * 2**20,
        csv_path=Path(cfg.out) / "bench.csv",
    )
    for r in reports:
        print(f"{r.kind:4s} L={r.L:5d} units={r.analytic_units:>13d} median={r.median_s:.4g}s {r.status}")
    for key, value in bench.summarize(reports).items():
        print(f"{key}={value:.3f}")


def cmd_gradcheck(cfg: RunConfig) -> None:
    if cfg.tiny:
        model_cfg = ModelConfig.tiny(seed=cfg.seed)
    else:
        model_cfg = cfg.model_config(cfg.synth_vocab + 3, 2)
    report = gradcheck_model(model_cfg, seed=cfg.seed, max_coords=cfg.gradcheck_coords or None)
    text = report.summary()
    print(text)
    (Path(cfg.out) / "gradcheck.txt").write_text(text + "\n")
    if not report.passed:
        raise InvariantError(f"gradient check failed; worst parameter {report.worst[0]}")


def cmd_synth(cfg: RunConfig) -> None:
    docs = gen_synthetic_task(
        cfg.kind, cfg.n_docs, cfg.synth_m, cfg.synth_k, cfg.synth_vocab, cfg.policy, cfg.seed, cfg.flat_max_len
    )
    path = Path(cfg.out) / f"synth_{cfg.kind}.jsonl"
    write_jsonl(docs, path)
    print(f"wrote {len(docs)} documents to {path}")


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def _thread_cap():
    value = os.environ.get("HIT_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"HIT_THREADS must be an integer, got {value!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        raise ConfigError("HIT_THREADS needs the optional threadpoolctl package (pip install hitransformer[threads])") from None
    return threadpool_limits(n)


def run_cli(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        _write_resolved(cfg)
        with _thread_cap():
            HANDLERS[cfg.command](cfg)
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantError, HiTransformerError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
