# ABOUTME: `qlrnn bench` - time forward(+backward) passes per architecture on shared data
# ABOUTME: Reports throughput, analytic multiply-accumulates per step and traced peak memory

"""Bench subcommand.

Wall-clock numbers are informative only; the per-step multiply-accumulate
column comes from the analytic cost model and is reproducible.
"""

from __future__ import annotations

import tracemalloc
from dataclasses import dataclass
from time import perf_counter
from typing import TYPE_CHECKING

import structlog

from qlrnn.cells import cell_macs_per_step
from qlrnn.commands._common import add_run_options, load_command_config, write_artifact
from qlrnn.data import Example, load_examples, make_batches
from qlrnn.errors import EXIT_OK
from qlrnn.metrics import throughput
from qlrnn.network import backward, batch_targets, forward, init_model
from qlrnn.numerics import Rng
from qlrnn.training import cross_entropy

if TYPE_CHECKING:
    import argparse

    from qlrnn.config import ModelSpec, RunConfig

logger = structlog.get_logger(__name__)

BENCH_STREAM = 31

HEADER = (
    "arch,examples,seq_len,seconds,examples_per_sec,tokens_per_sec,macs_per_step,peak_mb"
)


@dataclass(frozen=True, slots=True)
class BenchRow:
    arch: str
    n_examples: int
    seq_len: int
    seconds: float
    examples_per_sec: float
    tokens_per_sec: float
    macs_per_step: float
    peak_mb: float

    def csv(self) -> str:
        return ",".join(
            [
                self.arch,
                str(self.n_examples),
                str(self.seq_len),
                f"{self.seconds:.6f}",
                repr(self.examples_per_sec),
                repr(self.tokens_per_sec),
                repr(self.macs_per_step),
                f"{self.peak_mb:.3f}",
            ]
        )


def bench_examples(cfg: RunConfig) -> list[Example]:
    """Examples shared by every timed arch: configured data, else random bytes."""
    spec = cfg.model
    n = cfg.run.bench_examples
    if cfg.data.data_path is not None or cfg.data.synthetic is not None:
        return load_examples(cfg.data, spec.n_classes, cfg.split_seed)[:n]
    rng = Rng(cfg.train.seed, BENCH_STREAM)
    high = min(spec.vocab_size, 256)
    return [
        Example(
            tokens=tuple(int(t) for t in rng.derive(i).integers(0, high, cfg.train.max_len)),
            label=i % spec.n_classes,
        )
        for i in range(n)
    ]


def bench_arch(spec: ModelSpec, cfg: RunConfig, examples: list[Example]) -> BenchRow:
    model = init_model(spec, cfg.train.seed)
    batches = make_batches(examples, cfg.train.max_len, cfg.train.batch_size)
    tracemalloc.start()
    start = perf_counter()
    for batch in batches:
        logits, cache = forward(model, batch.tokens, batch.lengths, mode="eval")
        if cfg.run.bench_backward:
            targets, mask = batch_targets(spec, batch.tokens, batch.lengths, batch.labels)
            _, dlogits = cross_entropy(logits, targets, mask)
            backward(model, cache, dlogits)
    seconds = perf_counter() - start
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    ex_per_sec, tok_per_sec = throughput(len(examples), cfg.train.max_len, seconds)
    return BenchRow(
        arch=spec.arch,
        n_examples=len(examples),
        seq_len=cfg.train.max_len,
        seconds=seconds,
        examples_per_sec=ex_per_sec,
        tokens_per_sec=tok_per_sec,
        macs_per_step=cell_macs_per_step(spec),
        peak_mb=peak / (1024.0 * 1024.0),
    )


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = load_command_config(args, "bench")
    examples = bench_examples(cfg)
    archs = cfg.run.bench_archs or [cfg.model.arch]
    rows = []
    for arch in archs:
        spec = cfg.model.with_arch(arch)
        row = bench_arch(spec, cfg, examples)
        logger.info("arch timed", arch=arch, examples_per_sec=row.examples_per_sec)
        rows.append(row)
    text = "\n".join([HEADER, *(row.csv() for row in rows)]) + "\n"
    print(text, end="")
    write_artifact(cfg, "bench.csv", text)
    return EXIT_OK


def register_bench_command(
    subparsers: argparse._SubParsersAction[argparse.ArgumentParser],
) -> None:
    """Add the `bench` subparser."""
    parser = subparsers.add_parser("bench", help="Throughput per architecture")
    add_run_options(parser)
    parser.set_defaults(handler=cmd_bench)
