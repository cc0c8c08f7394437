"""Capture tests against a miniature diffusion pipeline.

The fake components mirror the standard pipeline surface (HF-style
tokenizer with specials, text encoder, UNet with ``attn2``
cross-attention at two resolutions, scheduler), so the hook path is the
same one a real pipeline exercises. Captured bundles are checked
through the engine's own CLI (``validate-bundle``/``audit``) — the
bundle format and the CLI are the only contracts shared with it.
"""

import json
import math
import subprocess
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from torch import nn

from attnexporter import (
    CaptureConfig,
    ModelLoadError,
    ResolutionMismatch,
    capture,
    capture_from_components,
)

PROMPT = "a purple crown and a green frog"


# --- miniature pipeline -----------------------------------------------------

class WordTokenizer:
    """Word-level tokenizer with BOS/EOS, HF-interface subset."""

    def __init__(self):
        self.vocab = {"<bos>": 0, "<eos>": 1}
        self.inverse = {0: "<bos>", 1: "<eos>"}
        self.all_special_ids = [0, 1]

    def _id(self, word):
        if word not in self.vocab:
            idx = len(self.vocab)
            self.vocab[word] = idx
            self.inverse[idx] = word
        return self.vocab[word]

    def __call__(self, text, return_tensors=None):
        ids = [0] + [self._id(w) for w in text.lower().split()] + [1]
        return {"input_ids": torch.tensor([ids])}

    def convert_ids_to_tokens(self, ids):
        return [self.inverse[int(i)] for i in ids]


class TextEncoder(nn.Module):
    def __init__(self, dim=8, vocab=64):
        super().__init__()
        torch.manual_seed(0)
        self.embed = nn.Embedding(vocab, dim)

    def forward(self, ids):
        return SimpleNamespace(last_hidden_state=self.embed(ids))


class CrossAttnBlock(nn.Module):
    """Duck-typed diffusers attention: to_q/to_k/to_v plus heads."""

    def __init__(self, channels, ctx_dim, heads=2):
        super().__init__()
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.heads = heads

    def forward(self, hidden_states, encoder_hidden_states=None):
        ctx = (encoder_hidden_states if encoder_hidden_states is not None
               else hidden_states)
        q, k, v = self.to_q(hidden_states), self.to_k(ctx), self.to_v(ctx)
        b, n, c = q.shape
        h, d = self.heads, c // self.heads
        q = q.reshape(b, n, h, d).transpose(1, 2)
        k = k.reshape(b, -1, h, d).transpose(1, 2)
        v = v.reshape(b, -1, h, d).transpose(1, 2)
        probs = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, n, c)
        return out


class Level(nn.Module):
    def __init__(self, channels, ctx_dim):
        super().__init__()
        self.attn1 = CrossAttnBlock(channels, channels)   # self-attention
        self.attn2 = CrossAttnBlock(channels, ctx_dim)    # cross-attention


class TinyUNet(nn.Module):
    """16x16 latent; cross-attention at 16x16 and at a pooled 8x8."""

    def __init__(self, channels=4, ctx_dim=8):
        super().__init__()
        torch.manual_seed(1)
        self.config = SimpleNamespace(sample_size=16, in_channels=channels)
        self.full = Level(channels, ctx_dim)
        self.down = Level(channels, ctx_dim)

    def forward(self, z, t, encoder_hidden_states=None):
        b, c, h, w = z.shape
        seq = z.flatten(2).transpose(1, 2)
        seq = seq + self.full.attn1(seq)
        seq = seq + self.full.attn2(seq, encoder_hidden_states=encoder_hidden_states)

        pooled = torch.nn.functional.avg_pool2d(z, 2)
        seq2 = pooled.flatten(2).transpose(1, 2)
        seq2 = seq2 + self.down.attn2(seq2, encoder_hidden_states=encoder_hidden_states)
        up = torch.nn.functional.interpolate(
            seq2.transpose(1, 2).reshape(b, c, h // 2, w // 2), scale_factor=2
        )
        out = seq.transpose(1, 2).reshape(b, c, h, w) + up
        return SimpleNamespace(sample=out)


class TinyScheduler:
    def set_timesteps(self, n):
        self.timesteps = torch.arange(n - 1, -1, -1)

    def step(self, noise_pred, t, latents):
        return SimpleNamespace(prev_sample=latents - 0.1 * noise_pred)


def components():
    return WordTokenizer(), TextEncoder(), TinyUNet(), TinyScheduler()


def do_capture(tmp_path, **overrides):
    cfg_kw = dict(
        prompt=PROMPT,
        out_dir=str(tmp_path / "capture"),
        total_steps=3,
        resolution=(16, 16),
        seed=5,
    )
    cfg_kw.update(overrides)
    cfg = CaptureConfig(**cfg_kw)
    return capture_from_components(*components(), cfg), cfg


def engine_cli(*argv, expect=0):
    proc = subprocess.run(
        ["attnprior", *argv], capture_output=True, text=True
    )
    assert proc.returncode == expect, (argv, proc.returncode, proc.stderr)
    return proc.stdout


# --- structure and format -----------------------------------------------------

def test_capture_writes_index_and_step_bundles(tmp_path):
    out, cfg = do_capture(tmp_path)
    index = json.loads((out / "index.json").read_text())
    assert index["prompt"] == PROMPT
    assert index["resolution"] == [16, 16]
    assert index["backend_deterministic"] is True
    assert [s["dir"] for s in index["steps"]] == [
        "step_000", "step_001", "step_002"
    ]
    assert (out / "prompt.txt").read_text().strip() == PROMPT
    for step in index["steps"]:
        assert (out / step["dir"] / "manifest.json").is_file()


def test_manifest_marks_specials_and_placeholder_roles(tmp_path):
    out, _ = do_capture(tmp_path)
    manifest = json.loads((out / "step_000" / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert manifest["dtype"] == "f32"
    assert manifest["byte_order"] == "little"
    tokens = manifest["tokens"]
    assert tokens[0]["text"] == "<bos>" and tokens[0]["special"] is True
    assert tokens[-1]["text"] == "<eos>" and tokens[-1]["special"] is True
    content = [t for t in tokens if not t["special"]]
    assert [t["text"] for t in content] == PROMPT.split()
    assert all(t["role"] == "outside" for t in tokens)


def test_per_token_maps_sum_to_one(tmp_path):
    out, _ = do_capture(tmp_path)
    manifest = json.loads((out / "step_001" / "manifest.json").read_text())
    for entry in manifest["tokens"]:
        cells = np.frombuffer(
            (out / "step_001" / entry["file"]).read_bytes(), dtype="<f4"
        )
        assert cells.shape == (256,)
        assert np.all(cells >= 0)
        assert abs(float(cells.sum()) - 1.0) < 1e-6


def test_capture_deterministic(tmp_path):
    a, _ = do_capture(tmp_path / "a")
    b, _ = do_capture(tmp_path / "b")
    for step in ("step_000", "step_002"):
        am = json.loads((a / step / "manifest.json").read_text())
        bm = json.loads((b / step / "manifest.json").read_text())
        assert am == bm
        for entry in am["tokens"]:
            assert (a / step / entry["file"]).read_bytes() == \
                (b / step / entry["file"]).read_bytes()


def test_capture_subset_of_steps(tmp_path):
    out, _ = do_capture(tmp_path, steps=(0, 2))
    index = json.loads((out / "index.json").read_text())
    assert [s["index"] for s in index["steps"]] == [0, 2]
    assert not (out / "step_001").exists()


def test_resolution_mismatch(tmp_path):
    with pytest.raises(ResolutionMismatch) as err:
        do_capture(tmp_path, resolution=(5, 5))
    assert "saw grids of" in str(err.value)


def test_pooled_resolution_capturable(tmp_path):
    out, _ = do_capture(tmp_path, resolution=(8, 8))
    manifest = json.loads((out / "step_000" / "manifest.json").read_text())
    assert manifest["height"] == 8 and manifest["width"] == 8
    entry = manifest["tokens"][0]
    cells = np.frombuffer(
        (out / "step_000" / entry["file"]).read_bytes(), dtype="<f4"
    )
    assert cells.shape == (64,)


def test_config_validation():
    with pytest.raises(ValueError):
        CaptureConfig(prompt="x", out_dir="y", total_steps=0)
    with pytest.raises(ValueError):
        CaptureConfig(prompt="x", out_dir="y", total_steps=2, steps=(5,))


def test_capture_requires_pipeline():
    # model loading needs the optional pipeline dependencies
    cfg = CaptureConfig(prompt="x", out_dir="y", model_id="some/model")
    if "diffusers" not in sys.modules:
        try:
            import diffusers  # noqa: F401
            pytest.skip("diffusers installed; load path exercised elsewhere")
        except ImportError:
            pass
    with pytest.raises(ModelLoadError):
        capture(cfg)
    with pytest.raises(ModelLoadError):
        capture(CaptureConfig(prompt="x", out_dir="y"))  # no model_id


# --- round trip through the engine CLI ----------------------------------------

def test_round_trip_validate_and_audit(tmp_path):
    out, _ = do_capture(tmp_path)
    parse_path = tmp_path / "parse.json"
    parse_path.write_text(
        engine_cli("parse", (out / "prompt.txt").read_text().strip())
    )
    for step_dir in sorted(p for p in out.iterdir() if p.is_dir()):
        ok = json.loads(engine_cli("validate-bundle", str(step_dir)))
        assert ok == {"ok": True, "problems": []}
        audited = json.loads(
            engine_cli("audit", str(step_dir), str(parse_path))
        )
        assert set(audited) == {"loss", "scores"}
        assert math.isfinite(audited["loss"]["total"])
        assert audited["scores"]["separation"] >= 0.0


def test_render_works_on_captured_bundle(tmp_path):
    out, _ = do_capture(tmp_path)
    heat = tmp_path / "heat"
    written = json.loads(engine_cli(
        "render", str(out / "step_000"), "--token", "crown",
        "--out-dir", str(heat),
    ))["written"]
    assert len(written) == 1
    assert Path(written[0]).read_bytes().startswith(b"P5\n16 16\n255\n")
