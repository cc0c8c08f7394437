"""Hook cross-attention layers of a diffusion pipeline during sampling.

The capture wraps every cross-attention module (``attn2`` in the
standard UNet naming, exposing ``to_q``/``to_k``/``to_v`` and
``heads``), recomputes the softmax attention probabilities from the
module's own projections on each forward call, and writes one
attention bundle per captured denoising step:

    out_dir/
      index.json        # step directories plus capture metadata
      prompt.txt        # sidecar so a parser can assign token roles
      step_000/
        manifest.json   # version, grid, dtype f32, byte order little
        token_000_*.f32 # H*W little-endian float32 cells, row-major
      step_001/ ...

Per-token maps are averaged over heads and over every layer whose
attention grid matches the target resolution, then renormalized over
the spatial cells so each stored map is a probability distribution.
Token roles are written as "outside" placeholders (the sidecar prompt
lets the consuming engine's parser overwrite them); tokenizer specials
(BOS/EOS) are flagged ``special`` so consumers exclude them.

This module performs no loss computation and never imports the engine;
the bundle directory layout is the only shared contract.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch


class ModelLoadError(RuntimeError):
    """Pipeline components could not be loaded."""


class ResolutionMismatch(RuntimeError):
    """No cross-attention layer matches the target resolution."""


@dataclass(frozen=True)
class CaptureConfig:
    """What to capture and where to write it."""

    prompt: str
    out_dir: str
    model_id: str | None = None
    total_steps: int = 50
    steps: tuple[int, ...] | None = None  # None = capture every step
    resolution: tuple[int, int] = (16, 16)
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise ValueError("resolution must be positive")
        if self.steps is not None:
            bad = [s for s in self.steps if not 0 <= s < self.total_steps]
            if bad:
                raise ValueError(f"capture steps out of range: {bad}")

    def captured_indices(self) -> set[int]:
        if self.steps is None:
            return set(range(self.total_steps))
        return set(self.steps)


_MARKERS = re.compile(r"(</w>$|^[Ġ▁])")


def _clean_token(text: str) -> str:
    """Strip BPE word markers so manifest texts match plain words."""
    return _MARKERS.sub("", text).lower()


def _encode_prompt(tokenizer, prompt: str):
    """Token ids, display texts, and special-token flags for a prompt."""
    encoded = tokenizer(prompt, return_tensors="pt")
    ids = encoded["input_ids"] if isinstance(encoded, dict) else encoded.input_ids
    id_list = [int(i) for i in ids[0]]
    texts = [_clean_token(t) for t in tokenizer.convert_ids_to_tokens(id_list)]
    special_ids = set(int(i) for i in tokenizer.all_special_ids)
    specials = [i in special_ids for i in id_list]
    return ids, texts, specials


def _encode_text(text_encoder, ids: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        out = text_encoder(ids)
    if hasattr(out, "last_hidden_state"):
        return out.last_hidden_state
    if isinstance(out, (tuple, list)):
        return out[0]
    return out


def _cross_attention_modules(unet) -> list[tuple[str, torch.nn.Module]]:
    found = []
    for name, module in unet.named_modules():
        if not name.split(".")[-1] == "attn2":
            continue
        if all(hasattr(module, a) for a in ("to_q", "to_k", "to_v", "heads")):
            found.append((name, module))
    return found


class _Recorder:
    """Swaps attention forwards to record softmax probabilities."""

    def __init__(self, modules: list[tuple[str, torch.nn.Module]]):
        self.modules = modules
        self.records: list[tuple[str, np.ndarray]] = []
        self._originals: dict[str, object] = {}

    def clear(self):
        self.records = []

    def __enter__(self):
        for name, module in self.modules:
            original = module.forward
            self._originals[name] = original

            def wrapped(hidden_states, *args,
                        _mod=module, _name=name, _orig=original, **kw):
                context = kw.get("encoder_hidden_states")
                if context is None and args:
                    context = args[0]
                if context is not None:
                    probs = _attention_probs(_mod, hidden_states, context)
                    self.records.append((_name, probs))
                return _orig(hidden_states, *args, **kw)

            module.forward = wrapped
        return self

    def __exit__(self, *exc):
        for name, module in self.modules:
            module.forward = self._originals[name]
        return False


def _attention_probs(module, hidden_states, context) -> np.ndarray:
    """softmax(q k^T / sqrt(head_dim)) per head; (heads, cells, tokens)."""
    with torch.no_grad():
        q = module.to_q(hidden_states)
        k = module.to_k(context)
        batch, cells, channels = q.shape
        heads = int(module.heads)
        head_dim = channels // heads
        q = q.reshape(batch, cells, heads, head_dim).transpose(1, 2)
        k = k.reshape(batch, -1, heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(head_dim)
        probs = torch.softmax(scores, dim=-1)
    return probs[0].cpu().double().numpy()


def _token_filename(index: int, text: str) -> str:
    safe = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "tok"
    return f"token_{index:03d}_{safe}.f32"


def _write_step_bundle(
    directory: Path,
    maps: np.ndarray,  # (tokens, cells) rows renormalized
    texts: list[str],
    specials: list[bool],
    height: int,
    width: int,
) -> None:
    """Write one bundle atomically (temp directory, then rename)."""
    tmp = directory.parent / f".tmp-{directory.name}"
    tmp.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (text, special) in enumerate(zip(texts, specials)):
        fname = _token_filename(index, text)
        cells = maps[index].astype("<f4")
        (tmp / fname).write_bytes(cells.tobytes())
        entries.append({
            "index": index,
            "text": text,
            "role": "outside",  # placeholder; parser assigns real roles
            "file": fname,
            "special": bool(special),
        })
    manifest = {
        "version": 1,
        "height": height,
        "width": width,
        "dtype": "f32",
        "byte_order": "little",
        "tokens": entries,
    }
    (tmp / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )
    if directory.exists():
        raise FileExistsError(f"step bundle already present: {directory}")
    os.replace(tmp, directory)


def capture_from_components(
    tokenizer, text_encoder, unet, scheduler, cfg: CaptureConfig
) -> Path:
    """Run a sampling loop over the given components, writing bundles.

    The components follow the standard pipeline surface: an HF-style
    tokenizer (``__call__``, ``convert_ids_to_tokens``,
    ``all_special_ids``), a text encoder returning hidden states, a
    UNet with ``config.sample_size``/``config.in_channels`` and
    cross-attention submodules named ``attn2``, and a scheduler with
    ``set_timesteps``/``timesteps``/``step``.

    Returns the capture directory (containing ``index.json``).
    """
    ids, texts, specials = _encode_prompt(tokenizer, cfg.prompt)
    embeds = _encode_text(text_encoder, ids)

    modules = _cross_attention_modules(unet)
    if not modules:
        raise ResolutionMismatch("unet exposes no attn2 cross-attention modules")

    height, width = cfg.resolution
    target_cells = height * width
    wanted = cfg.captured_indices()

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "prompt.txt").write_text(cfg.prompt + "\n", encoding="utf-8")

    generator = torch.Generator().manual_seed(cfg.seed)
    latents = torch.randn(
        (1, unet.config.in_channels, unet.config.sample_size,
         unet.config.sample_size),
        generator=generator,
    )

    scheduler.set_timesteps(cfg.total_steps)
    steps_meta = []
    with _Recorder(modules) as recorder:
        for step_index, t in enumerate(scheduler.timesteps):
            recorder.clear()
            with torch.no_grad():
                out = unet(latents, t, encoder_hidden_states=embeds)
            noise_pred = out.sample if hasattr(out, "sample") else out

            if step_index in wanted:
                matching = [
                    probs for _, probs in recorder.records
                    if probs.shape[1] == target_cells
                ]
                if not matching:
                    seen = sorted({p.shape[1] for _, p in recorder.records})
                    raise ResolutionMismatch(
                        f"no layer at {height}x{width} "
                        f"(={target_cells} cells); saw grids of {seen} cells"
                    )
                # average heads within each layer, then layers
                stacked = np.stack([p.mean(axis=0) for p in matching])
                mean_probs = stacked.mean(axis=0)  # (cells, tokens)
                per_token = mean_probs.T  # (tokens, cells)
                sums = per_token.sum(axis=1, keepdims=True)
                per_token = per_token / sums
                step_dir = out_dir / f"step_{step_index:03d}"
                _write_step_bundle(
                    step_dir, per_token, texts, specials, height, width
                )
                steps_meta.append({
                    "index": step_index,
                    "timestep": int(t),
                    "dir": step_dir.name,
                })

            stepped = scheduler.step(noise_pred, t, latents)
            latents = (
                stepped.prev_sample if hasattr(stepped, "prev_sample") else stepped
            )

    index = {
        "version": 1,
        "prompt": cfg.prompt,
        "model": cfg.model_id,
        "resolution": [height, width],
        "total_steps": cfg.total_steps,
        "seed": cfg.seed,
        "backend_deterministic": not latents.is_cuda,
        "steps": steps_meta,
    }
    (out_dir / "index.json").write_text(
        json.dumps(index, sort_keys=True, indent=2), encoding="utf-8"
    )
    return out_dir


def capture(cfg: CaptureConfig) -> Path:
    """Load the pipeline named by ``cfg.model_id`` locally and capture.

    Requires the optional pipeline dependencies and a locally available
    model; raises :class:`ModelLoadError` otherwise.
    """
    if not cfg.model_id:
        raise ModelLoadError("cfg.model_id is required to load a pipeline")
    try:
        from diffusers import DiffusionPipeline
    except ImportError as exc:
        raise ModelLoadError(
            "diffusers is not installed; install the 'pipelines' extra"
        ) from exc
    try:
        pipe = DiffusionPipeline.from_pretrained(cfg.model_id)
    except Exception as exc:
        raise ModelLoadError(f"could not load {cfg.model_id!r}: {exc}") from exc
    return capture_from_components(
        pipe.tokenizer, pipe.text_encoder, pipe.unet, pipe.scheduler, cfg
    )
