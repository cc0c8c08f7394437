"""Diagnostic scores over a prompt's attention maps.

These mirror the magnitudes the loss components measure, unsigned and
unweighted, so runs can be compared without entangling the configured
weight signs: separation (mean pairwise symmetric KL between combined
object maps), binding (mean modifier-noun symmetric KL; lower = tighter
binding), outside_leak (mean over object tokens of the max symmetric KL
to an outside token), and uniformity (mean KL-to-uniform of the
combined maps).
"""

from __future__ import annotations

from dataclasses import dataclass

from .maps import AttentionSet, combine_object, kl_to_uniform, sym_kl
from .prompts import ParsedPrompt


@dataclass(frozen=True)
class DiagnosticScores:
    separation: float
    binding: float
    outside_leak: float
    uniformity: float

    def to_json_dict(self) -> dict:
        return {
            "separation": self.separation,
            "binding": self.binding,
            "outside_leak": self.outside_leak,
            "uniformity": self.uniformity,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "DiagnosticScores":
        return DiagnosticScores(
            separation=data["separation"],
            binding=data["binding"],
            outside_leak=data["outside_leak"],
            uniformity=data["uniformity"],
        )


def score(
    attn: AttentionSet,
    parsed: ParsedPrompt,
    smoothing: float | None = 1e-10,
) -> DiagnosticScores:
    """Compute the four diagnostic scores.

    Pass ``smoothing=None`` when ``attn`` is already smoothed.
    """
    if smoothing is not None:
        attn = attn.smoothed(smoothing)

    combined = [combine_object(attn, g) for g in parsed.groups]

    sep_terms = [
        sym_kl(combined[i], combined[j])
        for i in range(len(combined))
        for j in range(i + 1, len(combined))
    ]
    separation = sum(sep_terms) / len(sep_terms) if sep_terms else 0.0

    bind_terms = [
        sym_kl(attn.for_token(i), attn.for_token(j))
        for g in parsed.groups
        for i, j in sorted(g.pairs)
    ]
    binding = sum(bind_terms) / len(bind_terms) if bind_terms else 0.0

    object_tokens = sorted(parsed.object_token_set)
    outside_tokens = sorted(parsed.outside)
    if object_tokens and outside_tokens:
        leak_terms = [
            max(
                sym_kl(attn.for_token(i), attn.for_token(j))
                for j in outside_tokens
            )
            for i in object_tokens
        ]
        outside_leak = sum(leak_terms) / len(leak_terms)
    else:
        outside_leak = 0.0

    uniformity = sum(kl_to_uniform(m) for m in combined) / len(combined)

    return DiagnosticScores(
        separation=separation,
        binding=binding,
        outside_leak=outside_leak,
        uniformity=uniformity,
    )
