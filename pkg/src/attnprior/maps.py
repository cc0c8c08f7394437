"""Attention maps as discrete probability distributions.

A per-token attention map is a non-negative H x W grid summing to 1 over
the spatial cells; every operation here preserves that contract. KL
machinery uses natural log throughout (all divergences in nats).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyGroup,
    NonFiniteInput,
    TokenOutOfRange,
    ZeroSupport,
)

SUM_TOL = 1e-9  # unit-sum tolerance for a valid distribution


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class AttentionMap:
    """Normalized non-negative distribution over an H x W grid."""

    grid: np.ndarray  # (H, W) float64, read-only
    token_index: int = -1

    def __post_init__(self):
        grid = _freeze(self.grid)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 2:
            raise DimensionMismatch(f"grid must be 2-D, got shape {grid.shape}")
        if not np.all(np.isfinite(grid)):
            raise NonFiniteInput("attention map has non-finite cells")
        if np.any(grid < 0):
            raise ValueError("attention map has negative cells")
        total = float(grid.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"attention map sums to {total!r}, not 1")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def n_cells(self) -> int:
        return self.grid.size

    @property
    def flat(self) -> np.ndarray:
        return self.grid.reshape(-1)

    @staticmethod
    def from_weights(
        weights: np.ndarray, token_index: int = -1
    ) -> "AttentionMap":
        """Renormalize non-negative weights into a valid map."""
        w = np.asarray(weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise NonFiniteInput("weights have non-finite cells")
        if np.any(w < 0):
            raise ValueError("weights have negative cells")
        total = w.sum()
        if total <= 0:
            raise ZeroSupport("weights sum to zero; cannot normalize")
        return AttentionMap(grid=w / total, token_index=token_index)

    @staticmethod
    def uniform(height: int, width: int, token_index: int = -1) -> "AttentionMap":
        cell = 1.0 / (height * width)
        return AttentionMap(
            grid=np.full((height, width), cell), token_index=token_index
        )


@dataclass(frozen=True)
class RawAttention:
    """Per-head cross-attention scores, shape (heads, H*W queries, tokens).

    ``normalized`` records whether softmax over the token axis has been
    applied; :func:`aggregate` requires it.
    """

    scores: np.ndarray
    height: int
    width: int
    feature_dim: int
    normalized: bool = False

    def __post_init__(self):
        scores = _freeze(self.scores)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 3:
            raise DimensionMismatch(
                f"scores must be (heads, queries, tokens), got {scores.shape}"
            )
        if scores.shape[1] != self.height * self.width:
            raise DimensionMismatch(
                f"{scores.shape[1]} queries != {self.height}x{self.width} grid"
            )
        if not np.all(np.isfinite(scores)):
            raise NonFiniteInput("attention scores are not finite")
        if self.normalized:
            rows = scores.sum(axis=2)
            if np.max(np.abs(rows - 1.0)) > SUM_TOL:
                raise ValueError("normalized scores do not sum to 1 per row")

    @property
    def n_heads(self) -> int:
        return self.scores.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True)
class AttentionSet:
    """One AttentionMap per prompt token, on a shared grid."""

    maps: tuple[AttentionMap, ...]

    def __post_init__(self):
        if not self.maps:
            raise EmptyGroup("attention set has no maps")
        h, w = self.maps[0].height, self.maps[0].width
        for m in self.maps:
            if (m.height, m.width) != (h, w):
                raise DimensionMismatch("maps in a set must share dimensions")

    @property
    def height(self) -> int:
        return self.maps[0].height

    @property
    def width(self) -> int:
        return self.maps[0].width

    @property
    def n_tokens(self) -> int:
        return len(self.maps)

    def for_token(self, index: int) -> AttentionMap:
        if not 0 <= index < len(self.maps):
            raise TokenOutOfRange(f"token {index} not in set of {len(self.maps)}")
        return self.maps[index]

    def smoothed(self, epsilon: float) -> "AttentionSet":
        return AttentionSet(maps=tuple(smooth(m, epsilon) for m in self.maps))

    @staticmethod
    def from_raw(raw: RawAttention) -> "AttentionSet":
        return AttentionSet(
            maps=tuple(aggregate(raw, i) for i in range(raw.n_tokens))
        )


def softmax_scores(raw: RawAttention) -> RawAttention:
    """Softmax over the token axis, per (head, spatial location) row.

    Numerically stabilized by max subtraction, so adding a constant to a
    row leaves the output unchanged.
    """
    if not np.all(np.isfinite(raw.scores)):
        raise NonFiniteInput("attention scores are not finite")
    shifted = raw.scores - raw.scores.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=2, keepdims=True)
    return RawAttention(
        scores=probs,
        height=raw.height,
        width=raw.width,
        feature_dim=raw.feature_dim,
        normalized=True,
    )


def aggregate(raw: RawAttention, token: int) -> AttentionMap:
    """Average one token's column over heads and renormalize spatially.

    The softmax normalizes over tokens per location; the per-token map
    needs the opposite normalization (a distribution over cells), so the
    head-averaged column is rescaled to sum to 1.
    """
    if not raw.normalized:
        raise ValueError("aggregate requires softmax-normalized scores")
    if not 0 <= token < raw.n_tokens:
        raise TokenOutOfRange(f"token {token} not in 0..{raw.n_tokens - 1}")
    column = raw.scores[:, :, token].mean(axis=0)
    grid = column.reshape(raw.height, raw.width)
    return AttentionMap.from_weights(grid, token_index=token)


def smooth(m: AttentionMap, epsilon: float) -> AttentionMap:
    """Mix with the uniform map: (A + eps) / (1 + eps*|cells|).

    Gives the map full support so KL terms are finite; the uniform map is
    a fixed point and the argmax is preserved.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid = (m.grid + epsilon) / (1.0 + epsilon * m.n_cells)
    return AttentionMap(grid=grid, token_index=m.token_index)


def _check_pair(p: AttentionMap, q: AttentionMap) -> None:
    if (p.height, p.width) != (q.height, q.width):
        raise DimensionMismatch(
            f"{p.height}x{p.width} vs {q.height}x{q.width} maps"
        )
    if np.any(q.grid <= 0):
        raise ZeroSupport("q has zero cells; smooth before computing KL")


def kl(p: AttentionMap, q: AttentionMap) -> float:
    """D_KL(p || q) in nats; 0 <= result, 0 iff p == q."""
    _check_pair(p, q)
    pf, qf = p.flat, q.flat
    mask = pf > 0  # 0 * ln(0/q) = 0
    return float(np.sum(pf[mask] * np.log(pf[mask] / qf[mask])))


def sym_kl(p: AttentionMap, q: AttentionMap) -> float:
    """Symmetric KL: both directed divergences computed, then averaged."""
    return 0.5 * (kl(p, q) + kl(q, p))


def entropy(p: AttentionMap) -> float:
    """Shannon entropy in nats, with the 0*ln(0) = 0 convention."""
    pos = p.flat[p.flat > 0]
    return float(-np.sum(pos * np.log(pos)))


def kl_to_uniform(p: AttentionMap) -> float:
    """D_KL(p || U) = ln|cells| - H(p); in [0, ln|cells|]."""
    return float(np.log(p.n_cells)) - entropy(p)


def combine_object(attn: AttentionSet, group) -> AttentionMap:
    """Combined map for an object group: mean of member maps, renormalized.

    Reduces to the single token's map for singleton groups and stays a
    valid distribution for any group size.
    """
    members = sorted(group.member_indices)
    if not members:
        raise EmptyGroup("object group has no member tokens")
    stacked = np.stack([attn.for_token(i).grid for i in members])
    return AttentionMap.from_weights(stacked.mean(axis=0))
