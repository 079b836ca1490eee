# ABOUTME: `qlrnn params` - per-tensor parameter table, closed-form totals and model size
# ABOUTME: Works from shapes alone, so full-vocabulary configs never allocate weights

"""Params subcommand."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import structlog

from qlrnn.cells import count_cell_params
from qlrnn.commands._common import add_run_options, load_command_config, write_artifact
from qlrnn.errors import EXIT_OK, ParameterCountMismatch
from qlrnn.network import closed_form_params, count_spec_params, model_size_mb, model_tensor_shapes

if TYPE_CHECKING:
    import argparse

    from qlrnn.config import ModelSpec

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, slots=True)
class ParamTable:
    rows: tuple[tuple[str, tuple[int, int], int], ...]
    total: int
    closed_form: int
    cell_enumerated: int
    cell_closed_form: int

    @property
    def size_mb_f32(self) -> float:
        return model_size_mb(self.total, 4)

    @property
    def size_mb_f64(self) -> float:
        return model_size_mb(self.total, 8)

    def render(self, arch: str) -> str:
        width = max(len(name) for name, _, _ in self.rows)
        lines = [f"arch: {arch}", f"{'tensor':<{width}}  {'shape':>14}  {'count':>12}"]
        for name, (r, c), count in self.rows:
            lines.append(f"{name:<{width}}  {f'{r}x{c}':>14}  {count:>12,}")
        lines += [
            f"total_enumerated: {self.total:,}",
            f"total_closed_form: {self.closed_form:,}",
            f"cell_enumerated: {self.cell_enumerated:,}",
            f"cell_closed_form: {self.cell_closed_form:,}",
            f"size_mb_s4: {self.size_mb_f32:.2f}",
            f"size_mb_s8: {self.size_mb_f64:.2f}",
        ]
        return "\n".join(lines)


def param_table(spec: ModelSpec) -> ParamTable:
    """Enumerate every tensor and check totals against the closed forms."""
    shapes = model_tensor_shapes(spec)
    rows = tuple((name, shape, shape[0] * shape[1]) for name, shape in shapes.items())
    total = count_spec_params(spec)
    closed = closed_form_params(spec)
    if total != closed:
        raise ParameterCountMismatch(
            "model parameter enumeration disagrees with closed form",
            f"arch={spec.arch} enumerated={total} closed_form={closed}",
        )
    cell = count_cell_params(spec)
    return ParamTable(rows, total, closed, cell.enumerated, cell.closed_form)


def cmd_params(args: argparse.Namespace) -> int:
    cfg = load_command_config(args, "params")
    table = param_table(cfg.model)
    text = table.render(cfg.model.arch)
    print(text)
    write_artifact(cfg, "params.txt", text + "\n")
    logger.info("parameters counted", arch=cfg.model.arch, total=table.total)
    return EXIT_OK


def register_params_command(
    subparsers: argparse._SubParsersAction[argparse.ArgumentParser],
) -> None:
    """Add the `params` subparser."""
    parser = subparsers.add_parser("params", help="Count parameters for a config")
    add_run_options(parser)
    parser.set_defaults(handler=cmd_params)
