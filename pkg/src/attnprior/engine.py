"""Differentiable toy denoiser with guided sampling.

A deliberately small stand-in for a diffusion U-Net: a latent grid, one
genuine cross-attention block (per-head Q K^T / sqrt(m) against token
embeddings), a linear noise-prediction head, and a DDPM-style schedule.
Small enough that the analytic gradient of the guidance loss with
respect to every latent scalar can be checked against central finite
differences in seconds.

The guided step follows the single-denoising-step recipe: predict noise
and attention, aggregate per-token maps, evaluate the weighted loss,
update the latent along the negative gradient during the first K steps,
then apply the schedule's posterior-mean update with seeded noise.

Gradient chain (hand-derived, verified by the finite-difference suite):
loss -> smoothed maps -> spatial renormalization -> head average ->
softmax over tokens -> scores -> Q projection -> latent. Noise
prediction does not enter the loss, so its path carries no gradient.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .diagnostics import score
from .errors import (
    EmptyTokenList,
    InvalidDims,
    NonFiniteInput,
    ScheduleExhausted,
)
from .losses import (
    DegenerateLoss,
    LossBreakdown,
    LossWeights,
    PACConfig,
    total_loss,
)
from .maps import AttentionMap, AttentionSet, RawAttention, softmax_scores
from .prompts import ParsedPrompt, parse

# Sub-stream tags for the seeded generator, so each draw site is a pure
# function of (seed, tag, step) and independent of the intervention count.
_STREAM_INIT = 0
_STREAM_STEP_NOISE = 1


class CrossAttention(NamedTuple):
    """Unnormalized features and softmaxed scores of one forward pass."""

    features: RawAttention
    scores: RawAttention


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with cumulative alpha products."""

    betas: np.ndarray  # (T,)
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @staticmethod
    def linear(total_steps: int, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        if total_steps < 1:
            raise InvalidDims("schedule needs at least one step")
        betas = np.linspace(beta_start, beta_end, total_steps)
        alphas = 1.0 - betas
        return NoiseSchedule(
            betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas)
        )

    @property
    def total_steps(self) -> int:
        return len(self.betas)


@dataclass(frozen=True)
class ToyModel:
    """Seeded projection matrices and deterministic token embeddings."""

    height: int
    width: int
    channels: int
    feature_dim: int
    n_heads: int
    embed_dim: int
    seed: int
    w_q: np.ndarray  # (heads, channels, feature_dim)
    w_k: np.ndarray  # (heads, embed_dim, feature_dim)
    w_v: np.ndarray  # (embed_dim, channels)
    w_res: np.ndarray  # (channels, channels)

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def embed_token(self, text: str) -> np.ndarray:
        """Embedding for a word: hash of (seed, text) seeds the draw."""
        digest = hashlib.sha256(f"{self.seed}:{text}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.embed_dim)

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            raise EmptyTokenList("need at least one token")
        return np.stack([self.embed_token(t) for t in tokens])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.w_q, self.w_k, self.w_v, self.w_res):
            h.update(arr.tobytes())
        return h.hexdigest()


def init_model(
    height: int = 16,
    width: int = 16,
    channels: int = 4,
    feature_dim: int = 8,
    n_heads: int = 2,
    embed_dim: int = 16,
    seed: int = 0,
) -> ToyModel:
    """Build a ToyModel with 1/sqrt(fan_in)-scaled seeded weights."""
    dims = (height, width, channels, feature_dim, n_heads, embed_dim)
    if any(d < 1 for d in dims):
        raise InvalidDims(f"all dimensions must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    w_q = rng.standard_normal((n_heads, channels, feature_dim)) / math.sqrt(channels)
    w_k = rng.standard_normal((n_heads, embed_dim, feature_dim)) / math.sqrt(embed_dim)
    w_v = rng.standard_normal((embed_dim, channels)) / math.sqrt(embed_dim)
    w_res = rng.standard_normal((channels, channels)) / math.sqrt(channels)
    return ToyModel(
        height=height,
        width=width,
        channels=channels,
        feature_dim=feature_dim,
        n_heads=n_heads,
        embed_dim=embed_dim,
        seed=seed,
        w_q=w_q,
        w_k=w_k,
        w_v=w_v,
        w_res=w_res,
    )


@dataclass(frozen=True)
class LatentState:
    """Latent tensor at timestep t, with the schedule it evolves under."""

    z: np.ndarray  # (height, width, channels)
    t: int
    schedule: NoiseSchedule

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)):
            raise NonFiniteInput("latent has non-finite entries")
        if not 0 <= self.t <= self.schedule.total_steps:
            raise ScheduleExhausted(
                f"t={self.t} outside 0..{self.schedule.total_steps}"
            )

    def checksum(self) -> str:
        return hashlib.sha256(self.z.tobytes()).hexdigest()


@dataclass(frozen=True)
class GuidanceConfig:
    """Sampling and guidance hyperparameters.

    ``step_size_decay`` optionally scales the step size linearly to zero
    over the run; by default the step size is constant.
    """

    step_size: float = 20.0
    total_steps: int = 50
    intervention_steps: int = 25
    weights: LossWeights = field(default_factory=LossWeights)
    pac: PACConfig = field(default_factory=PACConfig)
    smoothing: float = 1e-10
    seed: int = 0
    step_size_decay: bool = False
    grad_clip: float = 1e3

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidDims("total_steps must be >= 1")
        if not 0 <= self.intervention_steps <= self.total_steps:
            raise InvalidDims("need 0 <= intervention_steps <= total_steps")
        if self.step_size < 0:
            raise InvalidDims("step_size must be >= 0")
        if self.smoothing <= 0:
            raise InvalidDims("smoothing must be positive")

    def step_size_at(self, step_index: int) -> float:
        if not self.step_size_decay:
            return self.step_size
        return self.step_size * (1.0 - step_index / self.total_steps)

    def to_json_dict(self) -> dict:
        return {
            "step_size": self.step_size,
            "total_steps": self.total_steps,
            "intervention_steps": self.intervention_steps,
            "weights": self.weights.to_json_dict(),
            "pac": self.pac.to_json_dict(),
            "smoothing": self.smoothing,
            "seed": self.seed,
            "step_size_decay": self.step_size_decay,
            "grad_clip": self.grad_clip,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "GuidanceConfig":
        total = data.get("total_steps", 50)
        return GuidanceConfig(
            step_size=data.get("step_size", 20.0),
            total_steps=total,
            intervention_steps=data.get("intervention_steps", total // 2),
            weights=LossWeights.from_json_dict(data.get("weights", {})),
            pac=PACConfig.from_json_dict(data.get("pac", {})),
            smoothing=data.get("smoothing", 1e-10),
            seed=data.get("seed", 0),
            step_size_decay=data.get("step_size_decay", False),
            grad_clip=data.get("grad_clip", 1e3),
        )


@dataclass(frozen=True)
class StepRecord:
    """Per-step trace entry; grad_norm is None on unguided steps."""

    step_index: int
    t: int
    loss: LossBreakdown
    grad_norm: float | None
    separation: float
    binding: float
    checksum: str

    def to_json_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "t": self.t,
            "loss": self.loss.to_json_dict(),
            "grad_norm": self.grad_norm,
            "separation": self.separation,
            "binding": self.binding,
            "checksum": self.checksum,
        }


@dataclass
class GuidanceTrace:
    records: list[StepRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json_dict(), sort_keys=True) + "\n"
            for r in self.records
        )

    def checksum(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


def _rng(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, step])


def cross_attention(
    model: ToyModel, z: np.ndarray, tokens: list[str]
) -> CrossAttention:
    """Per-head scores between latent cells and token embeddings."""
    if not tokens:
        raise EmptyTokenList("need at least one token")
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("latent has non-finite entries")
    zf = z.reshape(model.n_cells, model.channels)
    embeds = model.embed_tokens(tokens)
    scale = 1.0 / math.sqrt(model.feature_dim)
    per_head = []
    for h in range(model.n_heads):
        q = zf @ model.w_q[h]  # (cells, m)
        k = embeds @ model.w_k[h]  # (tokens, m)
        per_head.append(q @ k.T * scale)
    features = RawAttention(
        scores=np.stack(per_head),
        height=model.height,
        width=model.width,
        feature_dim=model.feature_dim,
        normalized=False,
    )
    return CrossAttention(features=features, scores=softmax_scores(features))


def predict_noise(
    model: ToyModel, z: np.ndarray, t: int, tokens: list[str]
) -> tuple[np.ndarray, CrossAttention]:
    """Noise estimate and the attention that produced it.

    The head is time-independent (the toy carries no timestep
    embedding): a residual channel mix of the latent plus the
    head-averaged attention applied to projected token values.
    """
    attn = cross_attention(model, z, tokens)
    zf = z.reshape(model.n_cells, model.channels)
    probs = attn.scores.scores.mean(axis=0)  # (cells, tokens)
    values = model.embed_tokens(tokens) @ model.w_v  # (tokens, channels)
    eps = zf @ model.w_res + probs @ values
    return eps.reshape(z.shape), attn


def attention_maps(
    model: ToyModel, z: np.ndarray, tokens: list[str]
) -> AttentionSet:
    """Aggregated (unsmoothed) per-token maps for the current latent."""
    attn = cross_attention(model, z, tokens)
    return AttentionSet.from_raw(attn.scores)


def evaluate_total(
    model: ToyModel,
    z: np.ndarray,
    tokens: list[str],
    parsed: ParsedPrompt,
    cfg: GuidanceConfig,
) -> LossBreakdown:
    """Loss breakdown on the smoothed maps induced by ``z``."""
    smoothed = attention_maps(model, z, tokens).smoothed(cfg.smoothing)
    return total_loss(parsed, smoothed, cfg.weights, cfg.pac)


def _loss_and_grad(
    model: ToyModel,
    z: np.ndarray,
    tokens: list[str],
    parsed: ParsedPrompt,
    cfg: GuidanceConfig,
) -> tuple[LossBreakdown, np.ndarray, AttentionSet]:
    """Forward pass plus the analytic gradient of the total loss in z.

    Returns (breakdown, gradient with z's shape, smoothed AttentionSet).
    """
    n_cells, n_tokens = model.n_cells, len(tokens)
    zf = z.reshape(n_cells, model.channels)
    embeds = model.embed_tokens(tokens)
    scale = 1.0 / math.sqrt(model.feature_dim)

    # Forward, keeping per-head intermediates for the backward pass.
    keys, probs_h = [], []
    for h in range(model.n_heads):
        k = embeds @ model.w_k[h]
        s = (zf @ model.w_q[h]) @ k.T * scale
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        probs_h.append(e / e.sum(axis=1, keepdims=True))
        keys.append(k)
    probs = np.mean(probs_h, axis=0)  # (cells, tokens)

    col_sums = probs.sum(axis=0)  # per token, over cells
    norm_cols = probs / col_sums  # a_i = c_i / T_i, columns
    denom = 1.0 + cfg.smoothing * n_cells
    smoothed_cols = (norm_cols + cfg.smoothing) / denom  # per-token maps

    smoothed = AttentionSet(
        maps=tuple(
            AttentionMap(
                grid=smoothed_cols[:, i].reshape(model.height, model.width),
                token_index=i,
            )
            for i in range(n_tokens)
        )
    )

    # Combined object maps: renormalized means over group members.
    groups = parsed.groups
    members = [sorted(g.member_indices) for g in groups]
    group_means = [smoothed_cols[:, m].mean(axis=1) for m in members]
    group_sums = [gm.sum() for gm in group_means]
    object_cols = [gm / gs for gm, gs in zip(group_means, group_sums)]

    breakdown = total_loss(parsed, smoothed, cfg.weights, cfg.pac)

    # Backward: accumulate d(total)/d(smoothed map) per token and per
    # combined object map, then undo each forward stage in turn.
    grad_tok = np.zeros((n_cells, n_tokens))
    grad_obj = [np.zeros(n_cells) for _ in groups]

    def d_sym(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # sym_kl = (kl(p,q) + kl(q,p)) / 2, elementwise partials
        dp = 0.5 * (np.log(p / q) + 1.0 - q / p)
        dq = 0.5 * (np.log(q / p) + 1.0 - p / q)
        return dp, dq

    w = cfg.weights
    n_groups = len(groups)

    # divergence over combined maps
    if n_groups >= 2 and w.lambda_div != 0.0:
        n_pairs = n_groups * (n_groups - 1) // 2
        coeff = -w.lambda_div / n_pairs
        for i in range(n_groups):
            for j in range(i + 1, n_groups):
                dp, dq = d_sym(object_cols[i], object_cols[j])
                grad_obj[i] += coeff * dp
                grad_obj[j] += coeff * dq

    # similarity over per-token maps
    if w.lambda_sim != 0.0:
        for g in groups:
            pairs = sorted(g.pairs)
            if not pairs:
                continue
            coeff = w.lambda_sim / len(pairs)
            for i, j in pairs:
                dp, dq = d_sym(smoothed_cols[:, i], smoothed_cols[:, j])
                grad_tok[:, i] += coeff * dp
                grad_tok[:, j] += coeff * dq

    # outside: hard max routes the gradient through the argmax token
    object_tokens = sorted(parsed.object_token_set)
    outside_tokens = sorted(parsed.outside)
    if outside_tokens and object_tokens and w.lambda_out != 0.0:
        coeff = -w.lambda_out / len(object_tokens)
        for i in object_tokens:
            best_j, best = outside_tokens[0], -math.inf
            for j in outside_tokens:
                p, q = smoothed_cols[:, i], smoothed_cols[:, j]
                value = 0.5 * float(
                    np.sum(p * np.log(p / q)) + np.sum(q * np.log(q / p))
                )
                if value > best:
                    best_j, best = j, value
            dp, dq = d_sym(smoothed_cols[:, i], smoothed_cols[:, best_j])
            grad_tok[:, i] += coeff * dp
            grad_tok[:, best_j] += coeff * dq

    # bound penalty through the mean KL-to-uniform of combined maps
    if n_groups >= 1 and w.lambda_pac != 0.0:
        d_agg = sum(
            float(np.sum(oc * np.log(oc * n_cells))) for oc in object_cols
        ) / n_groups
        # pac = -sqrt((D + c) / (2N)); d pac / d D
        dpac_dd = -1.0 / (
            2.0 * math.sqrt(2.0 * cfg.pac.n_samples * (d_agg + cfg.pac.log_term))
        )
        coeff = w.lambda_pac * dpac_dd / n_groups
        for k, oc in enumerate(object_cols):
            grad_obj[k] += coeff * (np.log(oc) + 1.0)

    # combined maps -> member token maps (renormalized mean)
    for k, g in enumerate(groups):
        gk = grad_obj[k]
        if not np.any(gk):
            continue
        s = group_sums[k]
        inner = (gk - float(gk @ object_cols[k])) / s
        for i in members[k]:
            grad_tok[:, i] += inner / len(members[k])

    # smoothing is affine
    grad_tok /= denom

    # spatial renormalization per token column
    for i in range(n_tokens):
        gi = grad_tok[:, i]
        grad_tok[:, i] = (gi - float(gi @ norm_cols[:, i])) / col_sums[i]

    # head average, softmax rows, score projection, Q projection
    grad_z = np.zeros_like(zf)
    g_probs = grad_tok / model.n_heads
    for h in range(model.n_heads):
        p = probs_h[h]
        g_scores = p * (g_probs - (g_probs * p).sum(axis=1, keepdims=True))
        grad_z += ((g_scores @ keys[h]) * scale) @ model.w_q[h].T
    return breakdown, grad_z.reshape(z.shape), smoothed


def grad_total_loss(
    model: ToyModel,
    z: np.ndarray,
    tokens: list[str],
    parsed: ParsedPrompt,
    cfg: GuidanceConfig,
) -> np.ndarray:
    """Analytic gradient of the total loss with respect to the latent."""
    _, grad, _ = _loss_and_grad(model, z, tokens, parsed, cfg)
    return grad


def guidance_step(
    model: ToyModel,
    state: LatentState,
    tokens: list[str],
    parsed: ParsedPrompt,
    cfg: GuidanceConfig,
    step_index: int,
) -> tuple[LatentState, StepRecord]:
    """One denoising step with optional latent guidance.

    Noise prediction and attention come from the pre-update latent; the
    latent moves along the negative loss gradient only while
    ``step_index < intervention_steps``, then the posterior-mean update
    with per-step seeded noise produces the next state.
    """
    if state.t < 1:
        raise ScheduleExhausted("state is already fully denoised")

    z = state.z
    eps_hat, attn = predict_noise(model, z, state.t, tokens)

    step_size = cfg.step_size_at(step_index)
    guided = step_index < cfg.intervention_steps and step_size > 0
    if guided:
        breakdown, grad, smoothed = _loss_and_grad(model, z, tokens, parsed, cfg)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm > cfg.grad_clip:
            grad = grad * (cfg.grad_clip / grad_norm)
        z = z - step_size * grad
    else:
        smoothed = AttentionSet.from_raw(attn.scores).smoothed(cfg.smoothing)
        breakdown = total_loss(parsed, smoothed, cfg.weights, cfg.pac)
        grad_norm = None

    # DDPM posterior mean with the pre-update noise estimate
    sched = state.schedule
    t = state.t
    beta = sched.betas[t - 1]
    alpha = sched.alphas[t - 1]
    abar = sched.alpha_bars[t - 1]
    mean = (z - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if t > 1:
        abar_prev = sched.alpha_bars[t - 2]
        sigma = math.sqrt((1.0 - abar_prev) / (1.0 - abar) * beta)
        noise = _rng(cfg.seed, _STREAM_STEP_NOISE, t).standard_normal(z.shape)
        z_next = mean + sigma * noise
    else:
        z_next = mean

    new_state = LatentState(z=z_next, t=t - 1, schedule=sched)
    scores = score(smoothed, parsed, smoothing=None)
    record = StepRecord(
        step_index=step_index,
        t=t,
        loss=breakdown,
        grad_norm=grad_norm,
        separation=scores.separation,
        binding=scores.binding,
        checksum=new_state.checksum(),
    )
    return new_state, record


def sample(
    model: ToyModel,
    prompt: str,
    cfg: GuidanceConfig,
    parsed: ParsedPrompt | None = None,
) -> tuple[LatentState, GuidanceTrace, AttentionSet]:
    """Run the full guided trajectory from seeded Gaussian noise.

    Returns the final latent (t = 0), the per-step trace, and the
    unsmoothed attention set induced by the final latent.
    """
    parsed = parsed if parsed is not None else parse(prompt)
    tokens = [t.text for t in parsed.tokens]

    schedule = NoiseSchedule.linear(cfg.total_steps)
    z0 = _rng(cfg.seed, _STREAM_INIT).standard_normal(
        (model.height, model.width, model.channels)
    )
    state = LatentState(z=z0, t=cfg.total_steps, schedule=schedule)

    trace = GuidanceTrace()
    for i in range(cfg.total_steps):
        state, record = guidance_step(model, state, tokens, parsed, cfg, i)
        trace.records.append(record)

    final_maps = attention_maps(model, state.z, tokens)
    return state, trace, final_maps
