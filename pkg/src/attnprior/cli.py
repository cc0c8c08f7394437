"""Command-line front end.

Subcommands: ``parse``, ``guide``, ``audit``, ``sweep``, ``render``,
``validate-bundle``, ``pac-bound``. stdout carries machine-readable
output only; diagnostics go to stderr. Exit codes: 0 ok, 2
usage/domain error, 3 engine error, 4 data-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from .diagnostics import score
from .engine import GuidanceConfig, init_model, sample
from .errors import (
    AttnPriorError,
    BundleError,
    DomainError,
    EmptyPrompt,
    EngineError,
    GrammarError,
    InvalidDims,
    UnknownFormat,
)
from .harness import SweepSpec, emit_report, run_sweep
from .losses import (
    LossWeights,
    PACConfig,
    direction_report,
    pac_bayes_bound,
    total_loss,
)
from .prompts import DEFAULT_LEXICON, ParsedPrompt, WordLexicon, parse

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ENGINE = 3
EXIT_DATA = 4


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _note(message: str) -> None:
    sys.stderr.write(message + "\n")


def _load_lexicon(path: str | None) -> WordLexicon:
    if path is None:
        return DEFAULT_LEXICON
    return WordLexicon.from_json_file(path)


def cmd_parse(args) -> int:
    parsed = parse(args.prompt, _load_lexicon(args.lexicon))
    _emit(parsed.to_json_dict())
    return EXIT_OK


def _guide_config(args) -> GuidanceConfig:
    """Config-file values first, then flag overrides."""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = GuidanceConfig.from_json_dict(json.load(fh))
    else:
        cfg = GuidanceConfig()

    if args.steps is not None:
        k = cfg.intervention_steps if args.config else args.steps // 2
        cfg = replace(cfg, total_steps=args.steps, intervention_steps=k)
    if args.k is not None:
        cfg = replace(cfg, intervention_steps=args.k)
    if args.alpha is not None:
        cfg = replace(cfg, step_size=args.alpha)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    weights = cfg.weights
    for flag, name in (
        (args.lambda_div, "lambda_div"),
        (args.lambda_sim, "lambda_sim"),
        (args.lambda_out, "lambda_out"),
        (args.lambda_pac, "lambda_pac"),
    ):
        if flag is not None:
            weights = replace(weights, **{name: flag})
    pac = cfg.pac
    if args.delta is not None:
        pac = replace(pac, delta=args.delta)
    if args.n_samples is not None:
        pac = replace(pac, n_samples=args.n_samples)
    return replace(cfg, weights=weights, pac=pac)


def cmd_guide(args) -> int:
    cfg = _guide_config(args)
    parsed = parse(args.prompt, _load_lexicon(args.lexicon))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.jsonl"
    bundle_dir = out_dir / "bundle"
    scores_path = out_dir / "scores.json"

    try:
        model = init_model(seed=cfg.seed)
        _, trace, final_maps = sample(model, args.prompt, cfg, parsed=parsed)

        trace_path.write_text(trace.to_jsonl(), encoding="utf-8")
        tokens = [(t.text, t.role) for t in parsed.tokens]
        bundle_io.write_bundle(bundle_dir, final_maps, tokens)

        # Report the final loss/scores from the bundle's own f32 maps,
        # through the same pipeline `audit` uses, so the round trip is
        # exact by construction.
        loaded = bundle_io.read_bundle(bundle_dir)
        content, _ = loaded.content_set()
        smoothed = content.smoothed(cfg.smoothing)
        breakdown = total_loss(parsed, smoothed, cfg.weights, cfg.pac)
        scores = score(smoothed, parsed, smoothing=None)

        payload = {
            "prompt": args.prompt,
            "config": cfg.to_json_dict(),
            "loss": breakdown.to_json_dict(),
            "scores": scores.to_json_dict(),
        }
        if args.direction_check:
            payload["direction"] = direction_report(cfg.weights)
            _note(f"direction check: {direction_report(cfg.weights)}")
        scores_path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except AttnPriorError:
        # remove partial artifacts so failed runs leave nothing behind
        import shutil

        for path in (trace_path, scores_path):
            path.unlink(missing_ok=True)
        shutil.rmtree(bundle_dir, ignore_errors=True)
        raise

    _emit(
        {
            "out_dir": str(out_dir),
            "trace": str(trace_path),
            "bundle": str(bundle_dir),
            "scores": str(scores_path),
        }
    )
    return EXIT_OK


def _loss_params(args) -> tuple[LossWeights, PACConfig]:
    weights = LossWeights(
        lambda_div=args.lambda_div if args.lambda_div is not None else -1.25,
        lambda_sim=args.lambda_sim if args.lambda_sim is not None else 2.0,
        lambda_out=args.lambda_out if args.lambda_out is not None else 0.15,
        lambda_pac=args.lambda_pac if args.lambda_pac is not None else -0.15,
    )
    pac = PACConfig(
        n_samples=args.n_samples if args.n_samples is not None else 1000,
        delta=args.delta if args.delta is not None else 0.15,
    )
    return weights, pac


def cmd_audit(args) -> int:
    problems = bundle_io.validate_bundle(args.bundle_dir)
    if problems:
        _note(f"bundle {args.bundle_dir} failed validation")
        _emit({"problems": problems})
        return EXIT_DATA

    loaded = bundle_io.read_bundle(args.bundle_dir)
    content, content_tokens = loaded.content_set()

    with open(args.parse_json, encoding="utf-8") as fh:
        parsed = ParsedPrompt.from_json(fh.read())

    mismatches = []
    if len(content_tokens) != len(parsed.tokens):
        mismatches.append(
            f"bundle has {len(content_tokens)} content tokens, "
            f"parse has {len(parsed.tokens)}"
        )
    else:
        for bt, pt in zip(content_tokens, parsed.tokens):
            if bt.text != pt.text:
                mismatches.append(
                    f"token {pt.index}: bundle {bt.text!r} != parse {pt.text!r}"
                )
            elif bt.role != pt.role:
                # parse roles are authoritative; imported bundles may
                # carry placeholder roles for the parser to overwrite
                _note(
                    f"token {pt.index} ({pt.text!r}): manifest role "
                    f"{bt.role!r} overridden by parse role {pt.role!r}"
                )
    if mismatches:
        _emit({"problems": mismatches})
        return EXIT_DATA

    weights, pac = _loss_params(args)
    smoothed = content.smoothed(args.smoothing)
    breakdown = total_loss(parsed, smoothed, weights, pac)
    scores = score(smoothed, parsed, smoothing=None)
    _emit({"loss": breakdown.to_json_dict(), "scores": scores.to_json_dict()})
    return EXIT_OK


def cmd_sweep(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = SweepSpec.from_json_dict(json.load(fh))
    report = run_sweep(spec)
    blob = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(blob)
        _note(f"report written to {args.out}")
    else:
        sys.stdout.buffer.write(blob)
    if report.n_failed:
        _note(f"{report.n_failed} sweep cell(s) failed")
        return EXIT_ENGINE
    return EXIT_OK


def _render_pgm(grid: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255), linearly scaled from [0, max cell]."""
    height, width = grid.shape
    peak = float(grid.max())
    scaled = np.zeros_like(grid) if peak <= 0 else grid / peak * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes()


def cmd_render(args) -> int:
    loaded = bundle_io.read_bundle(args.bundle_dir)
    selected = list(zip(loaded.tokens, loaded.maps))
    if args.token is not None:
        if args.token.isdigit():
            wanted = [
                (t, m) for t, m in selected if t.index == int(args.token)
            ]
        else:
            wanted = [
                (t, m) for t, m in selected if t.text == args.token.lower()
            ]
        if not wanted:
            raise DomainError(f"token {args.token!r} not in bundle")
        selected = wanted

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tok, m in selected:
        name = Path(tok.file).stem + ".pgm"
        (out_dir / name).write_bytes(_render_pgm(m.grid))
        written.append(str(out_dir / name))
    _emit({"written": written})
    return EXIT_OK


def cmd_validate_bundle(args) -> int:
    problems = bundle_io.validate_bundle(args.bundle_dir)
    _emit({"ok": not problems, "problems": problems})
    return EXIT_DATA if problems else EXIT_OK


def cmd_pac_bound(args) -> int:
    cfg = PACConfig(n_samples=args.n, delta=args.delta)
    value = pac_bayes_bound(args.risk, args.kl, cfg)
    sys.stdout.write(f"{value:.12g}\n")
    return EXIT_OK


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-div", type=float, default=None)
    p.add_argument("--lambda-sim", type=float, default=None)
    p.add_argument("--lambda-out", type=float, default=None)
    p.add_argument("--lambda-pac", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--n-samples", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnprior",
        description="Attention-prior guidance over a toy denoiser",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a prompt into object groups")
    p.add_argument("prompt")
    p.add_argument("--lexicon", default=None, help="JSON word-class overrides")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("guide", help="run guided sampling, write artifacts")
    p.add_argument("prompt")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="GuidanceConfig JSON file")
    p.add_argument("--lexicon", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="intervention steps")
    p.add_argument("--alpha", type=float, default=None, help="step size")
    _add_loss_flags(p)
    p.add_argument("--direction-check", action="store_true")
    p.set_defaults(func=cmd_guide)

    p = sub.add_parser("audit", help="evaluate losses on a stored bundle")
    p.add_argument("bundle_dir")
    p.add_argument("parse_json")
    _add_loss_flags(p)
    p.add_argument("--smoothing", type=float, default=1e-10)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="run a hyperparameter sweep")
    p.add_argument("spec", help="SweepSpec JSON file")
    p.add_argument(
        "--format",
        choices=("json", "csv", "markdown-table"),
        default="json",
    )
    p.add_argument("--out", default=None, help="write report to file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="render bundle maps as PGM heatmaps")
    p.add_argument("bundle_dir")
    p.add_argument("--token", default=None, help="token text or index")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate-bundle", help="check a bundle's format")
    p.add_argument("bundle_dir")
    p.set_defaults(func=cmd_validate_bundle)

    p = sub.add_parser("pac-bound", help="evaluate the generalization bound")
    p.add_argument("--risk", type=float, default=0.0)
    p.add_argument("--kl", type=float, default=0.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.15)
    p.set_defaults(func=cmd_pac_bound)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EmptyPrompt, GrammarError, DomainError, InvalidDims,
            UnknownFormat) as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except BundleError as exc:
        _note(f"error: {exc}")
        if exc.problems:
            _emit({"problems": exc.problems})
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        _note(f"error: {exc}")
        return EXIT_DATA
    except EngineError as exc:
        _note(f"error: {exc}")
        return EXIT_ENGINE
    except AttnPriorError as exc:
        _note(f"error: {exc}")
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
