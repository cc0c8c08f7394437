"""Attention bundle format: write, validate, read, corruption handling."""

import json

import numpy as np
import pytest

from attnprior import (
    AttentionMap,
    AttentionSet,
    read_bundle,
    validate_bundle,
    write_bundle,
)
from attnprior.errors import BundleError


def sample_set(rng, n_tokens=4, h=8, w=8):
    return AttentionSet(
        maps=tuple(
            AttentionMap.from_weights(rng.random((h, w)) + 1e-6, i)
            for i in range(n_tokens)
        )
    )


TOKENS = [("a", "outside"), ("purple", "modifier"),
          ("crown", "noun"), ("and", "outside")]


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    attn = sample_set(rng)
    out = tmp_path / "bundle"
    write_bundle(out, attn, TOKENS)

    assert validate_bundle(out) == []
    loaded = read_bundle(out)
    assert loaded.height == 8 and loaded.width == 8
    assert [t.text for t in loaded.tokens] == ["a", "purple", "crown", "and"]
    assert [t.role for t in loaded.tokens] == [
        "outside", "modifier", "noun", "outside"
    ]
    for orig, back in zip(attn.maps, loaded.maps):
        # f32 quantization then renormalization
        assert np.allclose(orig.grid, back.grid, atol=1e-6)
        assert back.flat.sum() == pytest.approx(1.0, abs=1e-9)


def test_manifest_fields(tmp_path):
    rng = np.random.default_rng(1)
    out = write_bundle(tmp_path / "b", sample_set(rng), TOKENS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert manifest["dtype"] == "f32"
    assert manifest["byte_order"] == "little"
    assert manifest["height"] == 8 and manifest["width"] == 8
    entry = manifest["tokens"][1]
    assert entry == {
        "index": 1, "text": "purple", "role": "modifier",
        "file": entry["file"], "special": False,
    }


def test_missing_manifest(tmp_path):
    assert validate_bundle(tmp_path) == ["missing manifest.json"]


def test_truncated_token_file_named(tmp_path):
    rng = np.random.default_rng(2)
    out = write_bundle(tmp_path / "b", sample_set(rng), TOKENS)
    victim = json.loads((out / "manifest.json").read_text())["tokens"][2]["file"]
    blob = (out / victim).read_bytes()
    (out / victim).write_bytes(blob[:-8])
    problems = validate_bundle(out)
    assert any(victim in p for p in problems)
    with pytest.raises(BundleError):
        read_bundle(out)


def test_negative_cell_detected(tmp_path):
    rng = np.random.default_rng(3)
    out = write_bundle(tmp_path / "b", sample_set(rng), TOKENS)
    victim = json.loads((out / "manifest.json").read_text())["tokens"][0]["file"]
    cells = np.frombuffer((out / victim).read_bytes(), dtype="<f4").copy()
    cells[5] = -0.25
    (out / victim).write_bytes(cells.tobytes())
    problems = validate_bundle(out)
    assert any("negative cell" in p and victim in p for p in problems)


def test_non_finite_cell_detected(tmp_path):
    rng = np.random.default_rng(4)
    out = write_bundle(tmp_path / "b", sample_set(rng), TOKENS)
    victim = json.loads((out / "manifest.json").read_text())["tokens"][1]["file"]
    cells = np.frombuffer((out / victim).read_bytes(), dtype="<f4").copy()
    cells[0] = np.nan
    (out / victim).write_bytes(cells.tobytes())
    assert any("non-finite" in p for p in validate_bundle(out))


def test_bad_version_and_indices(tmp_path):
    rng = np.random.default_rng(5)
    out = write_bundle(tmp_path / "b", sample_set(rng), TOKENS)
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["version"] = 2
    manifest["tokens"][0]["index"] = 7
    (out / "manifest.json").write_text(json.dumps(manifest))
    problems = validate_bundle(out)
    assert any("version" in p for p in problems)
    assert any("consecutive" in p for p in problems)


def test_special_tokens_dropped_by_content_set(tmp_path):
    rng = np.random.default_rng(6)
    attn = sample_set(rng, n_tokens=4)
    tokens = [("<bos>", "outside", True), ("purple", "modifier", False),
              ("crown", "noun", False), ("<eos>", "outside", True)]
    out = write_bundle(tmp_path / "b", attn, tokens)
    loaded = read_bundle(out)
    content, content_tokens = loaded.content_set()
    assert [t.text for t in content_tokens] == ["purple", "crown"]
    assert [t.index for t in content_tokens] == [0, 1]
    assert content.n_tokens == 2
    assert np.allclose(content.for_token(0).grid, loaded.maps[1].grid)


def test_write_rejects_bad_role(tmp_path):
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        write_bundle(tmp_path / "b", sample_set(rng, 1), [("frog", "verb")])


def test_write_rejects_count_mismatch(tmp_path):
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError):
        write_bundle(tmp_path / "b", sample_set(rng, 2), [("frog", "noun")])
