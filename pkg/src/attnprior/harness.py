"""Ablation sweeps and report emission.

A sweep varies one hyperparameter axis (``delta``, ``intervention_K``
or ``step_size``) over a prompt set and several seeds, records the
final diagnostic scores and loss breakdown of each run, and aggregates
mean and standard deviation per axis value. Failed cells are recorded
and the sweep continues.

The diagnostic scores substitute for embedding-based image/text
similarity metrics, which need full-scale pretrained models; they are
defined directly from the loss-component magnitudes (see
``diagnostics``), so sweep trends speak the same language as the
guidance itself.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace

from .diagnostics import DiagnosticScores, score
from .engine import GuidanceConfig, ToyModel, init_model, sample
from .errors import AttnPriorError, UnknownFormat
from .losses import LossBreakdown, PairTerm, total_loss
from .prompts import parse

SWEEP_AXES = ("delta", "intervention_K", "step_size")

# Ten templated prompts spanning the three benchmark patterns:
# unattributed animal pairs, animal + attributed object, attributed
# object pairs.
DEFAULT_SWEEP_PROMPTS = (
    "a cat and a dog",
    "a frog and a bird",
    "a horse and a monkey",
    "a cat and a red car",
    "a dog and a purple crown",
    "a bird and a wooden chair",
    "a purple crown and a green bowl",
    "a red car and a blue chair",
    "a striped balloon and a spotted bowl",
    "an orange guitar and a black backpack",
)

DEFAULT_SWEEP_SEEDS = (0, 1, 2, 3)

_METRICS = ("separation", "binding", "outside_leak", "uniformity", "total")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]
    base: GuidanceConfig
    prompts: tuple[str, ...] = DEFAULT_SWEEP_PROMPTS
    seeds: tuple[int, ...] = DEFAULT_SWEEP_SEEDS

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise UnknownFormat(
                f"axis must be one of {SWEEP_AXES}, got {self.axis!r}"
            )
        if not self.values or not self.prompts or not self.seeds:
            raise ValueError("values, prompts and seeds must be nonempty")

    def to_json_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": list(self.values),
            "base": self.base.to_json_dict(),
            "prompts": list(self.prompts),
            "seeds": list(self.seeds),
        }

    @staticmethod
    def from_json_dict(data: dict) -> "SweepSpec":
        return SweepSpec(
            axis=data["axis"],
            values=tuple(data["values"]),
            base=GuidanceConfig.from_json_dict(data.get("base", {})),
            prompts=tuple(data.get("prompts", DEFAULT_SWEEP_PROMPTS)),
            seeds=tuple(data.get("seeds", DEFAULT_SWEEP_SEEDS)),
        )


@dataclass(frozen=True)
class SweepCell:
    value: float
    prompt: str
    seed: int
    scores: DiagnosticScores | None
    loss: LossBreakdown | None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "prompt": self.prompt,
            "seed": self.seed,
            "scores": self.scores.to_json_dict() if self.scores else None,
            "loss": self.loss.to_json_dict() if self.loss else None,
            "error": self.error,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "SweepCell":
        loss = None
        if data.get("loss") is not None:
            ld = data["loss"]
            loss = LossBreakdown(
                div=ld["div"],
                sim=ld["sim"],
                out=ld["out"],
                pac=ld["pac"],
                total=ld["total"],
                flags=tuple(ld["flags"]),
                per_pair=tuple(
                    PairTerm(p["component"], p["i"], p["j"], p["value"])
                    for p in ld["per_pair"]
                ),
            )
        scores = None
        if data.get("scores") is not None:
            scores = DiagnosticScores.from_json_dict(data["scores"])
        return SweepCell(
            value=data["value"],
            prompt=data["prompt"],
            seed=data["seed"],
            scores=scores,
            loss=loss,
            error=data.get("error"),
        )


@dataclass(frozen=True)
class ValueSummary:
    """Mean and standard deviation of each metric at one axis value."""

    value: float
    n_ok: int
    n_failed: int
    mean: dict[str, float]
    sd: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
            "mean": dict(self.mean),
            "sd": dict(self.sd),
        }

    @staticmethod
    def from_json_dict(data: dict) -> "ValueSummary":
        return ValueSummary(
            value=data["value"],
            n_ok=data["n_ok"],
            n_failed=data["n_failed"],
            mean=dict(data["mean"]),
            sd=dict(data["sd"]),
        )


@dataclass(frozen=True)
class SweepReport:
    spec: SweepSpec
    cells: tuple[SweepCell, ...]
    summary: tuple[ValueSummary, ...]

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if c.error is not None)

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_json_dict(),
            "cells": [c.to_json_dict() for c in self.cells],
            "summary": [s.to_json_dict() for s in self.summary],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "SweepReport":
        return SweepReport(
            spec=SweepSpec.from_json_dict(data["spec"]),
            cells=tuple(SweepCell.from_json_dict(c) for c in data["cells"]),
            summary=tuple(
                ValueSummary.from_json_dict(s) for s in data["summary"]
            ),
        )


def _apply_axis(base: GuidanceConfig, axis: str, value: float) -> GuidanceConfig:
    if axis == "delta":
        return replace(base, pac=replace(base.pac, delta=float(value)))
    if axis == "intervention_K":
        return replace(base, intervention_steps=int(value))
    return replace(base, step_size=float(value))


def _cell_metrics(cell: SweepCell) -> dict[str, float]:
    values = cell.scores.to_json_dict()
    values["total"] = cell.loss.total
    return values


def run_sweep(spec: SweepSpec, model: ToyModel | None = None) -> SweepReport:
    """Run every (value, prompt, seed) cell and aggregate per value.

    Cells share one model (weights are immutable); each cell gets its
    own seed via the config. Failures are recorded per cell and the
    sweep continues.
    """
    model = model if model is not None else init_model(seed=spec.base.seed)
    parsed_cache = {p: parse(p) for p in spec.prompts}

    cells: list[SweepCell] = []
    for value in spec.values:
        for prompt in spec.prompts:
            parsed = parsed_cache[prompt]
            for seed in spec.seeds:
                cfg = replace(
                    _apply_axis(spec.base, spec.axis, value), seed=seed
                )
                try:
                    _, _, final_maps = sample(model, prompt, cfg, parsed=parsed)
                    smoothed = final_maps.smoothed(cfg.smoothing)
                    cells.append(
                        SweepCell(
                            value=value,
                            prompt=prompt,
                            seed=seed,
                            scores=score(smoothed, parsed, smoothing=None),
                            loss=total_loss(
                                parsed, smoothed, cfg.weights, cfg.pac
                            ),
                        )
                    )
                except AttnPriorError as exc:
                    cells.append(
                        SweepCell(
                            value=value,
                            prompt=prompt,
                            seed=seed,
                            scores=None,
                            loss=None,
                            error=f"{type(exc).__name__}: {exc}",
                        )
                    )

    summary = []
    for value in spec.values:
        ok = [c for c in cells if c.value == value and c.error is None]
        failed = [c for c in cells if c.value == value and c.error is not None]
        mean: dict[str, float] = {}
        sd: dict[str, float] = {}
        if ok:
            rows = [_cell_metrics(c) for c in ok]
            for metric in _METRICS:
                xs = [r[metric] for r in rows]
                m = sum(xs) / len(xs)
                mean[metric] = m
                sd[metric] = math.sqrt(
                    sum((x - m) ** 2 for x in xs) / len(xs)
                )
        summary.append(
            ValueSummary(
                value=value,
                n_ok=len(ok),
                n_failed=len(failed),
                mean=mean,
                sd=sd,
            )
        )
    return SweepReport(spec=spec, cells=tuple(cells), summary=tuple(summary))


CSV_COLUMNS = (
    # One row per cell, in run order. Fixed order; floats use repr.
    "axis", "value", "prompt", "seed", "status", "error",
    "separation", "binding", "outside_leak", "uniformity",
    "loss_div", "loss_sim", "loss_out", "loss_pac", "loss_total",
)


def emit_report(report: SweepReport, format: str = "json") -> bytes:
    """Serialize a report deterministically.

    Formats: ``json`` (full report, round-trips), ``csv`` (one row per
    cell, columns per ``CSV_COLUMNS``), ``markdown-table`` (one summary
    row per axis value).
    """
    if format == "json":
        text = json.dumps(report.to_json_dict(), sort_keys=True, indent=2)
        return (text + "\n").encode()

    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for c in report.cells:
            if c.error is None:
                row = [
                    report.spec.axis, repr(c.value), c.prompt, c.seed,
                    "ok", "",
                    repr(c.scores.separation), repr(c.scores.binding),
                    repr(c.scores.outside_leak), repr(c.scores.uniformity),
                    repr(c.loss.div), repr(c.loss.sim), repr(c.loss.out),
                    repr(c.loss.pac), repr(c.loss.total),
                ]
            else:
                row = [
                    report.spec.axis, repr(c.value), c.prompt, c.seed,
                    "failed", c.error,
                ] + [""] * 9
            writer.writerow(row)
        return buf.getvalue().encode()

    if format == "markdown-table":
        headers = ["value", "n_ok", "n_failed"] + [
            f"{m} (mean ± sd)" for m in _METRICS
        ]
        lines = [
            "| " + " | ".join(headers) + " |",
            "|" + "|".join(" --- " for _ in headers) + "|",
        ]
        for s in report.summary:
            cols = [f"{s.value:g}", str(s.n_ok), str(s.n_failed)]
            for metric in _METRICS:
                if metric in s.mean:
                    cols.append(
                        f"{s.mean[metric]:.6g} ± {s.sd[metric]:.6g}"
                    )
                else:
                    cols.append("-")
            lines.append("| " + " | ".join(cols) + " |")
        return ("\n".join(lines) + "\n").encode()

    raise UnknownFormat(f"unknown report format {format!r}")
