"""Diagnostic scores, sweep mechanics, and report emission tests."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from attnprior import (
    AttentionMap,
    AttentionSet,
    GuidanceConfig,
    SweepReport,
    SweepSpec,
    divergence_loss,
    emit_report,
    init_model,
    parse,
    run_sweep,
    sample,
    score,
    smooth,
    total_loss,
)
from attnprior.errors import UnknownFormat


def uniform_set(n, h=4, w=4):
    return AttentionSet(
        maps=tuple(AttentionMap.uniform(h, w, i) for i in range(n))
    )


def base_cfg(**kw):
    defaults = dict(total_steps=2, intervention_steps=1, step_size=2.0, seed=0)
    defaults.update(kw)
    return GuidanceConfig(**defaults)


# --- score -------------------------------------------------------------------

def test_score_identical_maps():
    parsed = parse("a frog and a purple crown")
    s = score(uniform_set(len(parsed.tokens)), parsed)
    assert s.separation == 0.0
    assert s.binding == 0.0
    assert s.outside_leak == 0.0


def test_score_uniform_maps_zero_uniformity():
    parsed = parse("a frog and a purple crown")
    s = score(uniform_set(len(parsed.tokens)), parsed)
    assert s.uniformity == pytest.approx(0.0, abs=1e-12)


def test_score_two_one_hot_objects_brute_force():
    # separation of two one-hot maps on different cells, against a
    # longhand sym-KL evaluation of the smoothed distributions
    parsed = parse("frog and crown")
    n, eps = 16, 1e-10
    g1, g2 = np.zeros((4, 4)), np.zeros((4, 4))
    g1[0, 0] = 1.0
    g2[3, 3] = 1.0
    and_map = AttentionMap.uniform(4, 4, 1)
    attn = AttentionSet(maps=(
        AttentionMap(grid=g1, token_index=0),
        and_map,
        AttentionMap(grid=g2, token_index=2),
    ))
    s = score(attn, parsed, smoothing=eps)

    hi = (1.0 + eps) / (1.0 + eps * n)
    lo = eps / (1.0 + eps * n)
    # each map: one hi cell, rest lo; overlap only via lo cells
    kl_dir = hi * math.log(hi / lo) + lo * math.log(lo / hi)  # the 2 hot cells
    # remaining 14 cells are lo/lo and contribute 0
    expected = 0.5 * (kl_dir + kl_dir)
    assert s.separation == pytest.approx(expected, rel=1e-9)


def test_separation_equals_divergence_magnitude_two_objects():
    parsed = parse("a purple crown and a green frog")
    rng = np.random.default_rng(0)
    attn = AttentionSet(
        maps=tuple(
            smooth(AttentionMap.from_weights(rng.random((4, 4)) + 1e-6, i), 1e-10)
            for i in range(len(parsed.tokens))
        )
    )
    from attnprior import combine_object

    combined = [combine_object(attn, g) for g in parsed.groups]
    s = score(attn, parsed, smoothing=None)
    assert s.separation == pytest.approx(
        abs(divergence_loss(combined)), abs=1e-12
    )


# --- sweeps --------------------------------------------------------------------

def test_sweep_spec_validation():
    with pytest.raises(UnknownFormat):
        SweepSpec(axis="gamma", values=(1.0,), base=base_cfg())
    with pytest.raises(ValueError):
        SweepSpec(axis="delta", values=(), base=base_cfg())


def test_sweep_k_zero_equals_unguided_baseline():
    spec = SweepSpec(
        axis="intervention_K",
        values=(0.0,),
        base=base_cfg(),
        prompts=("a cat and a dog",),
        seeds=(0, 1),
    )
    model = init_model(seed=spec.base.seed)
    report = run_sweep(spec, model=model)
    parsed = parse("a cat and a dog")
    for cell in report.cells:
        cfg = replace(base_cfg(), intervention_steps=0, seed=cell.seed)
        _, _, final = sample(model, cell.prompt, cfg, parsed=parsed)
        smoothed = final.smoothed(cfg.smoothing)
        expected_scores = score(smoothed, parsed, smoothing=None)
        expected_loss = total_loss(parsed, smoothed, cfg.weights, cfg.pac)
        assert cell.scores == expected_scores
        assert cell.loss.total == expected_loss.total


def test_sweep_axes_apply():
    spec = SweepSpec(
        axis="delta",
        values=(0.05, 0.5),
        base=base_cfg(),
        prompts=("a cat and a dog",),
        seeds=(0,),
    )
    report = run_sweep(spec)
    assert len(report.cells) == 2
    assert [s.value for s in report.summary] == [0.05, 0.5]
    assert all(s.n_ok == 1 for s in report.summary)
    spec2 = SweepSpec(
        axis="step_size",
        values=(0.0, 2.0),
        base=base_cfg(),
        prompts=("a cat and a dog",),
        seeds=(0,),
    )
    report2 = run_sweep(spec2)
    assert report2.n_failed == 0


def test_sweep_partial_failure_recorded():
    model = init_model(seed=0)
    broken = replace(model, w_q=np.full_like(model.w_q, np.inf))
    spec = SweepSpec(
        axis="step_size",
        values=(1.0,),
        base=base_cfg(),
        prompts=("a cat and a dog",),
        seeds=(0, 1),
    )
    with np.errstate(all="ignore"):  # inf weights trip fp warnings first
        report = run_sweep(spec, model=broken)
    assert report.n_failed == 2
    assert all(c.error and "NonFiniteInput" in c.error for c in report.cells)
    assert report.summary[0].n_failed == 2
    assert report.summary[0].mean == {}


def small_report():
    spec = SweepSpec(
        axis="intervention_K",
        values=(0.0, 1.0),
        base=base_cfg(),
        prompts=("a cat and a dog",),
        seeds=(0,),
    )
    return run_sweep(spec)


def test_report_json_round_trip():
    report = small_report()
    again = SweepReport.from_json_dict(
        json.loads(emit_report(report, "json").decode())
    )
    assert again == report


def test_report_deterministic_bytes():
    a = emit_report(small_report(), "json")
    b = emit_report(small_report(), "json")
    assert a == b


def test_report_csv_rows_and_header():
    report = small_report()
    lines = emit_report(report, "csv").decode().strip().split("\n")
    assert lines[0].startswith("axis,value,prompt,seed,status,error,separation")
    assert len(lines) == 1 + len(report.cells)


def test_report_empty_csv_header_only():
    report = SweepReport(spec=small_report().spec, cells=(), summary=())
    lines = emit_report(report, "csv").decode().strip().split("\n")
    assert len(lines) == 1


def test_report_markdown_one_row_per_value():
    report = small_report()
    lines = emit_report(report, "markdown-table").decode().strip().split("\n")
    assert len(lines) == 2 + len(report.spec.values)  # header + rule + rows


def test_report_unknown_format():
    with pytest.raises(UnknownFormat):
        emit_report(small_report(), "yaml")
