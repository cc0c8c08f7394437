"""Attention bundle interchange format.

A bundle is a directory with ``manifest.json`` plus one raw binary file
per token holding H*W little-endian float32 cells, row-major. The
manifest carries grid dimensions and per-token metadata::

    {
      "version": 1,
      "height": 16, "width": 16,
      "dtype": "f32", "byte_order": "little",
      "tokens": [{"index": 0, "text": "a", "role": "outside",
                  "file": "token_000_a.f32", "special": false}, ...]
    }

``special`` marks excluded tokens (BOS/EOS from imported bundles); the
built-in engine never writes any. Maps are stored unsmoothed; loaders
renormalize and smooth before any KL computation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BundleError
from .maps import AttentionMap, AttentionSet

MANIFEST_NAME = "manifest.json"
_ROLES = {"noun", "modifier", "outside"}


@dataclass(frozen=True)
class BundleToken:
    index: int
    text: str
    role: str
    file: str
    special: bool = False


@dataclass(frozen=True)
class Bundle:
    """In-memory view of a loaded bundle (maps already renormalized)."""

    height: int
    width: int
    tokens: tuple[BundleToken, ...]
    maps: tuple[AttentionMap, ...]  # aligned with tokens

    def content_set(self) -> tuple[AttentionSet, tuple[BundleToken, ...]]:
        """Maps and tokens with specials dropped, reindexed from 0."""
        kept = [
            (t, m) for t, m in zip(self.tokens, self.maps) if not t.special
        ]
        if not kept:
            raise BundleError("bundle has no non-special tokens")
        toks = tuple(
            BundleToken(i, t.text, t.role, t.file, False)
            for i, (t, _) in enumerate(kept)
        )
        maps = tuple(
            AttentionMap(grid=m.grid, token_index=i)
            for i, (_, m) in enumerate(kept)
        )
        return AttentionSet(maps=maps), toks


def _token_filename(index: int, text: str) -> str:
    safe = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "tok"
    return f"token_{index:03d}_{safe}.f32"


def write_bundle(
    directory: str | Path,
    attn: AttentionSet,
    tokens: list[tuple[str, str]] | list[tuple[str, str, bool]],
) -> Path:
    """Write ``attn`` to ``directory`` as a bundle.

    Args:
        directory: Target directory, created if needed.
        attn: One map per token, positionally aligned with ``tokens``.
        tokens: (text, role) or (text, role, special) per token.

    Returns:
        The bundle directory path.
    """
    if len(tokens) != attn.n_tokens:
        raise ValueError(
            f"{len(tokens)} token entries for {attn.n_tokens} maps"
        )
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = []
    for index, spec in enumerate(tokens):
        text, role = spec[0], spec[1]
        special = bool(spec[2]) if len(spec) > 2 else False
        if role not in _ROLES:
            raise ValueError(f"unknown role {role!r} for token {text!r}")
        fname = _token_filename(index, text)
        cells = attn.for_token(index).flat.astype("<f4")
        (directory / fname).write_bytes(cells.tobytes())
        entries.append(
            {
                "index": index,
                "text": text,
                "role": role,
                "file": fname,
                "special": special,
            }
        )

    manifest = {
        "version": 1,
        "height": attn.height,
        "width": attn.width,
        "dtype": "f32",
        "byte_order": "little",
        "tokens": entries,
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )
    return directory


def validate_bundle(directory: str | Path) -> list[str]:
    """Check a bundle against its format contract.

    Returns a list of problems (empty means valid): manifest integrity,
    file lengths, finite non-negative cells, and a normalizable sum per
    map (the distribution constraints after renormalization).
    """
    directory = Path(directory)
    problems: list[str] = []
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        return [f"missing {MANIFEST_NAME}"]
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return [f"unreadable manifest: {exc}"]

    if manifest.get("version") != 1:
        problems.append(f"unsupported version {manifest.get('version')!r}")
    if manifest.get("dtype") != "f32":
        problems.append(f"unsupported dtype {manifest.get('dtype')!r}")
    if manifest.get("byte_order") != "little":
        problems.append(
            f"unsupported byte order {manifest.get('byte_order')!r}"
        )
    height, width = manifest.get("height"), manifest.get("width")
    if not (isinstance(height, int) and isinstance(width, int)
            and height > 0 and width > 0):
        problems.append(f"bad grid dimensions {height!r}x{width!r}")
        return problems

    tokens = manifest.get("tokens")
    if not isinstance(tokens, list) or not tokens:
        problems.append("manifest has no tokens")
        return problems

    indices = [t.get("index") for t in tokens]
    if indices != list(range(len(tokens))):
        problems.append(f"token indices not consecutive: {indices}")

    expected_bytes = 4 * height * width
    for entry in tokens:
        fname = entry.get("file")
        label = f"token {entry.get('index')} ({entry.get('text')!r})"
        if entry.get("role") not in _ROLES:
            problems.append(f"{label}: unknown role {entry.get('role')!r}")
        if not isinstance(fname, str):
            problems.append(f"{label}: missing file name")
            continue
        path = directory / fname
        if not path.is_file():
            problems.append(f"{fname}: file missing")
            continue
        blob = path.read_bytes()
        if len(blob) != expected_bytes:
            problems.append(
                f"{fname}: {len(blob)} bytes, expected {expected_bytes}"
            )
            continue
        cells = np.frombuffer(blob, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(cells)):
            bad = int(np.flatnonzero(~np.isfinite(cells))[0])
            problems.append(f"{fname}: non-finite cell {bad}")
            continue
        if np.any(cells < 0):
            bad = int(np.flatnonzero(cells < 0)[0])
            problems.append(f"{fname}: negative cell {bad}")
            continue
        if cells.sum() <= 0:
            problems.append(f"{fname}: cells sum to zero")
    return problems


def read_bundle(directory: str | Path) -> Bundle:
    """Load and renormalize a bundle; raises BundleError when invalid."""
    problems = validate_bundle(directory)
    if problems:
        raise BundleError(f"invalid bundle {directory}", problems)
    directory = Path(directory)
    manifest = json.loads(
        (directory / MANIFEST_NAME).read_text(encoding="utf-8")
    )
    height, width = manifest["height"], manifest["width"]
    tokens = []
    maps = []
    for entry in manifest["tokens"]:
        tokens.append(
            BundleToken(
                index=entry["index"],
                text=entry["text"],
                role=entry["role"],
                file=entry["file"],
                special=bool(entry.get("special", False)),
            )
        )
        cells = np.frombuffer(
            (directory / entry["file"]).read_bytes(), dtype="<f4"
        ).astype(np.float64)
        maps.append(
            AttentionMap.from_weights(
                cells.reshape(height, width), token_index=entry["index"]
            )
        )
    return Bundle(
        height=height, width=width, tokens=tuple(tokens), maps=tuple(maps)
    )
