"""Guidance loss components over attention-map distributions.

Four components drive the latent updates:

* divergence: negated mean pairwise symmetric KL between combined
  object maps, over all unordered object pairs;
* similarity: per-object mean symmetric KL over modifier-noun pairs,
  summed over objects;
* outside: negated mean, over object tokens, of the maximum symmetric
  KL to any outside token (hard max, ties to the lowest outside index);
* a bound-derived penalty -sqrt((D + ln(2*sqrt(N)/delta)) / (2N)) with
  D an aggregate KL-to-uniform of the object maps.

Weights are applied verbatim, signs included; ``direction_report``
states which way each configured sign actually pushes. Degenerate
inputs (a single object, no outside tokens) yield a
:class:`DegenerateLoss` marker rather than a silent zero so callers can
flag them; the total treats them as zero contribution.

All functions expect smoothed (strictly positive) maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DomainError,
    ExponentSumViolation,
    MissingMap,
    OverlappingSupports,
)
from .maps import (
    AttentionMap,
    AttentionSet,
    combine_object,
    entropy,
    kl_to_uniform,
    sym_kl,
)
from .prompts import ParsedPrompt

EXPONENT_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    """Signed component weights; defaults follow the reference runs."""

    lambda_div: float = -1.25
    lambda_sim: float = 2.0
    lambda_out: float = 0.15
    lambda_pac: float = -0.15

    def __post_init__(self):
        for name in ("lambda_div", "lambda_sim", "lambda_out", "lambda_pac"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def to_json_dict(self) -> dict:
        return {
            "lambda_div": self.lambda_div,
            "lambda_sim": self.lambda_sim,
            "lambda_out": self.lambda_out,
            "lambda_pac": self.lambda_pac,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "LossWeights":
        return LossWeights(
            lambda_div=data.get("lambda_div", -1.25),
            lambda_sim=data.get("lambda_sim", 2.0),
            lambda_out=data.get("lambda_out", 0.15),
            lambda_pac=data.get("lambda_pac", -0.15),
        )


@dataclass(frozen=True)
class PACConfig:
    """Sample count and confidence parameter of the bound penalty."""

    n_samples: int = 1000
    delta: float = 0.15

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise DomainError("delta must lie in (0, 1)")

    @property
    def log_term(self) -> float:
        """ln(2*sqrt(N)/delta), the confidence part of the penalty."""
        return math.log(2.0 * math.sqrt(self.n_samples) / self.delta)

    def to_json_dict(self) -> dict:
        return {"n_samples": self.n_samples, "delta": self.delta}

    @staticmethod
    def from_json_dict(data: dict) -> "PACConfig":
        return PACConfig(
            n_samples=data.get("n_samples", 1000),
            delta=data.get("delta", 0.15),
        )


@dataclass(frozen=True)
class DegenerateLoss:
    """Marker returned when a component is undefined for the input."""

    reason: str


@dataclass(frozen=True)
class PairTerm:
    """One pairwise contribution, for diagnostics."""

    component: str  # "div" | "sim" | "out"
    i: int  # group index for div, token index otherwise
    j: int
    value: float

    def to_json_dict(self) -> dict:
        return {
            "component": self.component,
            "i": self.i,
            "j": self.j,
            "value": self.value,
        }


@dataclass(frozen=True)
class LossBreakdown:
    """Component values, their weighted total, and diagnostics.

    Degenerate components are recorded as 0 with a flag. ``total`` is
    the exact weighted sum of the stored component values.
    """

    div: float
    sim: float
    out: float
    pac: float
    total: float
    flags: tuple[str, ...] = ()
    per_pair: tuple[PairTerm, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "div": self.div,
            "sim": self.sim,
            "out": self.out,
            "pac": self.pac,
            "total": self.total,
            "flags": list(self.flags),
            "per_pair": [p.to_json_dict() for p in self.per_pair],
        }


def divergence_loss(
    object_maps: list[AttentionMap],
) -> float | DegenerateLoss:
    """Negated mean pairwise symmetric KL between combined object maps."""
    value, _ = _divergence(object_maps)
    return value


def _divergence(
    object_maps: list[AttentionMap],
) -> tuple[float | DegenerateLoss, list[PairTerm]]:
    n = len(object_maps)
    if n < 2:
        return DegenerateLoss("TooFewObjects"), []
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            terms.append(
                PairTerm("div", i, j, sym_kl(object_maps[i], object_maps[j]))
            )
    total = sum(t.value for t in terms)
    return -total / len(terms), terms


def similarity_loss(parsed: ParsedPrompt, attn: AttentionSet) -> float:
    """Sum over objects of the mean modifier-noun symmetric KL."""
    value, _ = _similarity(parsed, attn)
    return value


def _similarity(
    parsed: ParsedPrompt, attn: AttentionSet
) -> tuple[float, list[PairTerm]]:
    total = 0.0
    terms: list[PairTerm] = []
    for group in parsed.groups:
        pairs = sorted(group.pairs)
        if not pairs:
            continue  # unattributed object contributes 0
        group_sum = 0.0
        for i, j in pairs:
            value = sym_kl(_map_for(attn, parsed, i), _map_for(attn, parsed, j))
            terms.append(PairTerm("sim", i, j, value))
            group_sum += value
        total += group_sum / len(pairs)
    return total, terms


def outside_loss(
    parsed: ParsedPrompt, attn: AttentionSet
) -> float | DegenerateLoss:
    """Negated mean, over object tokens, of the max symmetric KL to outside."""
    value, _ = _outside(parsed, attn)
    return value


def _outside(
    parsed: ParsedPrompt, attn: AttentionSet
) -> tuple[float | DegenerateLoss, list[PairTerm]]:
    object_tokens = sorted(parsed.object_token_set)
    outside_tokens = sorted(parsed.outside)
    if not outside_tokens:
        return DegenerateLoss("EmptyOutsideSet"), []
    if not object_tokens:
        return DegenerateLoss("EmptyObjectSet"), []
    terms: list[PairTerm] = []
    total = 0.0
    for i in object_tokens:
        p = _map_for(attn, parsed, i)
        best_j, best = outside_tokens[0], -math.inf
        for j in outside_tokens:  # ascending, so ties keep the lowest j
            value = sym_kl(p, _map_for(attn, parsed, j))
            if value > best:
                best_j, best = j, value
        terms.append(PairTerm("out", i, best_j, best))
        total += best
    return -total / len(object_tokens), terms


def _map_for(attn: AttentionSet, parsed: ParsedPrompt, index: int) -> AttentionMap:
    if index >= attn.n_tokens:
        text = parsed.tokens[index].text if index < len(parsed.tokens) else "?"
        raise MissingMap(f"no attention map for token {index} ({text!r})")
    return attn.for_token(index)


def pac_penalty(d_kl: float, cfg: PACConfig) -> float:
    """sqrt((d_kl + ln(2*sqrt(N)/delta)) / (2N)); the bound's penalty term.

    Rounding-level negative divergences (down to -1e-9) are clamped to
    zero; anything lower is a genuine domain error.
    """
    if d_kl < -1e-9:
        raise DomainError("d_kl must be non-negative")
    d_kl = max(d_kl, 0.0)
    return math.sqrt((d_kl + cfg.log_term) / (2.0 * cfg.n_samples))


def aggregate_uniform_divergence(object_maps: list[AttentionMap]) -> float:
    """Default aggregate D: mean KL-to-uniform over the object maps."""
    if not object_maps:
        return 0.0
    return sum(kl_to_uniform(m) for m in object_maps) / len(object_maps)


def pac_regularizer(
    object_maps: list[AttentionMap],
    cfg: PACConfig,
    d_value: float | None = None,
) -> float:
    """Bound-derived penalty, strictly negative for any valid config.

    ``d_value`` overrides the default mean KL-to-uniform aggregate, e.g.
    with :func:`decomposed_kl`'s weighted sum.
    """
    d = aggregate_uniform_divergence(object_maps) if d_value is None else d_value
    return -pac_penalty(d, cfg)


def pac_bayes_bound(
    empirical_risk: float, kl_qp: float, cfg: PACConfig
) -> float:
    """Generalization bound: empirical risk plus the penalty term."""
    if not 0.0 <= empirical_risk <= 1.0:
        raise DomainError("empirical_risk must lie in [0, 1]")
    if kl_qp < 0:
        raise DomainError("kl_qp must be non-negative")
    return empirical_risk + pac_penalty(kl_qp, cfg)


def total_loss(
    parsed: ParsedPrompt,
    attn: AttentionSet,
    weights: LossWeights | None = None,
    cfg: PACConfig | None = None,
) -> LossBreakdown:
    """Evaluate all four components and their weighted sum.

    ``attn`` must hold smoothed per-token maps. Degenerate components
    contribute 0 and are flagged.
    """
    weights = weights or LossWeights()
    cfg = cfg or PACConfig()

    object_maps = [combine_object(attn, g) for g in parsed.groups]
    flags: list[str] = []
    per_pair: list[PairTerm] = []

    div, div_terms = _divergence(object_maps)
    if isinstance(div, DegenerateLoss):
        flags.append(f"div_degenerate:{div.reason}")
        div = 0.0
    per_pair.extend(div_terms)

    sim, sim_terms = _similarity(parsed, attn)
    per_pair.extend(sim_terms)

    out, out_terms = _outside(parsed, attn)
    if isinstance(out, DegenerateLoss):
        flags.append(f"out_degenerate:{out.reason}")
        out = 0.0
    per_pair.extend(out_terms)

    pac = pac_regularizer(object_maps, cfg)

    total = (
        weights.lambda_div * div
        + weights.lambda_sim * sim
        + weights.lambda_out * out
        + weights.lambda_pac * pac
    )
    return LossBreakdown(
        div=div,
        sim=sim,
        out=out,
        pac=pac,
        total=total,
        flags=tuple(flags),
        per_pair=tuple(per_pair),
    )


def direction_report(weights: LossWeights) -> dict[str, str]:
    """State which way each configured sign pushes under gradient descent.

    With the component formulas as defined here, descent on the weighted
    total increases object separation iff lambda_div > 0, tightens
    modifier-noun binding iff lambda_sim > 0, pushes object tokens away
    from outside tokens iff lambda_out > 0, and moves maps away from
    uniformity iff lambda_pac > 0.
    """

    def sign(value: float, positive: str, negative: str) -> str:
        if value > 0:
            return positive
        if value < 0:
            return negative
        return "inactive"

    return {
        "div": sign(weights.lambda_div, "separates-objects", "merges-objects"),
        "sim": sign(weights.lambda_sim, "binds-modifiers", "unbinds-modifiers"),
        "out": sign(
            weights.lambda_out, "repels-outside-tokens", "attracts-outside-tokens"
        ),
        "pac": sign(weights.lambda_pac, "away-from-uniform", "toward-uniform"),
    }


# --- factorized structured distribution ----------------------------------

@dataclass(frozen=True)
class FactorComponent:
    """One region map of the structured distribution.

    ``group`` selects the exponent class: 0 = divergence, 1 = similarity,
    2 = outside. The map's nonzero cells are its support; supports of
    distinct components must be disjoint.
    """

    map: AttentionMap
    group: int

    def __post_init__(self):
        if self.group not in (0, 1, 2):
            raise DomainError("component group must be 0, 1 or 2")

    @property
    def support(self):
        return self.map.flat > 0


def _check_components(
    components: list[FactorComponent], exponents: tuple[float, float, float]
) -> None:
    if len(exponents) != 3:
        raise ExponentSumViolation("need exactly three exponents")
    if any(e < 0 for e in exponents):
        raise ExponentSumViolation("exponents must be non-negative")
    if abs(sum(exponents) - 1.0) > EXPONENT_TOL:
        raise ExponentSumViolation(
            f"exponents sum to {sum(exponents)!r}, not 1"
        )
    if not components:
        return
    n_cells = components[0].map.n_cells
    covered = None
    for idx, comp in enumerate(components):
        if comp.map.n_cells != n_cells:
            raise OverlappingSupports("components must share the grid")
        mask = comp.support
        if covered is None:
            covered = mask.copy()
        else:
            if bool((covered & mask).any()):
                raise OverlappingSupports(
                    f"component {idx} overlaps an earlier support"
                )
            covered |= mask


def factorized_log_prob(
    components: list[FactorComponent],
    exponents: tuple[float, float, float],
    cell: int,
) -> float:
    """Unnormalized log-density of the factorized distribution at a cell.

    Returns sum over components whose support contains the cell of
    exponent_class * ln(component(cell)); 0 when no support contains it.
    """
    _check_components(components, exponents)
    value = 0.0
    for comp in components:
        weight = comp.map.flat[cell]
        if weight > 0:
            value += exponents[comp.group] * math.log(weight)
    return value


def component_kl_to_uniform(comp: FactorComponent) -> float:
    """KL of a component to the uniform distribution on its own support.

    Each component is a distribution over its region, so the reference
    uniform spreads over the region's cells, not the whole grid; a
    region-uniform component therefore scores 0.
    """
    support_size = int(comp.support.sum())
    return math.log(support_size) - entropy(comp.map)


def decomposed_kl(
    components: list[FactorComponent],
    exponents: tuple[float, float, float],
) -> tuple[float, list[float]]:
    """Class-weighted sum of per-component KLs to uniform.

    Returns the weighted sum alpha*S0 + beta*S1 + gamma*S2 and the
    per-class subtotals [S0, S1, S2], where each subtotal sums
    region-relative KL-to-uniform over that class's component maps.
    """
    _check_components(components, exponents)
    subtotals = [0.0, 0.0, 0.0]
    for comp in components:
        subtotals[comp.group] += component_kl_to_uniform(comp)
    weighted = sum(e * s for e, s in zip(exponents, subtotals))
    return weighted, subtotals
