"""attnprior: attention-prior guidance at desk scale.

Parse prompts into modifier/noun object groups, treat per-token
cross-attention maps as probability distributions, evaluate the four
KL-based guidance losses and the bound-derived regularizer, and run
gradient-guided denoising steps against a small fully differentiable
toy model whose analytic gradients are verified by finite differences.
"""

from .bundle import Bundle, BundleToken, read_bundle, validate_bundle, write_bundle
from .diagnostics import DiagnosticScores, score
from .engine import (
    CrossAttention,
    GuidanceConfig,
    GuidanceTrace,
    LatentState,
    NoiseSchedule,
    StepRecord,
    ToyModel,
    attention_maps,
    cross_attention,
    evaluate_total,
    grad_total_loss,
    guidance_step,
    init_model,
    predict_noise,
    sample,
)
from .harness import (
    DEFAULT_SWEEP_PROMPTS,
    DEFAULT_SWEEP_SEEDS,
    SweepCell,
    SweepReport,
    SweepSpec,
    ValueSummary,
    emit_report,
    run_sweep,
)
from .losses import (
    DegenerateLoss,
    FactorComponent,
    LossBreakdown,
    LossWeights,
    PACConfig,
    PairTerm,
    component_kl_to_uniform,
    decomposed_kl,
    direction_report,
    divergence_loss,
    factorized_log_prob,
    outside_loss,
    pac_bayes_bound,
    pac_penalty,
    pac_regularizer,
    similarity_loss,
    total_loss,
)
from .maps import (
    AttentionMap,
    AttentionSet,
    RawAttention,
    aggregate,
    combine_object,
    entropy,
    kl,
    kl_to_uniform,
    smooth,
    softmax_scores,
    sym_kl,
)
from .prompts import (
    DEFAULT_LEXICON,
    ObjectGroup,
    ParsedPrompt,
    Token,
    WordLexicon,
    parse,
    tokenize,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMap",
    "AttentionSet",
    "Bundle",
    "BundleToken",
    "CrossAttention",
    "DEFAULT_LEXICON",
    "DEFAULT_SWEEP_PROMPTS",
    "DEFAULT_SWEEP_SEEDS",
    "DegenerateLoss",
    "DiagnosticScores",
    "FactorComponent",
    "GuidanceConfig",
    "GuidanceTrace",
    "LatentState",
    "LossBreakdown",
    "LossWeights",
    "NoiseSchedule",
    "ObjectGroup",
    "PACConfig",
    "PairTerm",
    "ParsedPrompt",
    "RawAttention",
    "StepRecord",
    "SweepCell",
    "SweepReport",
    "SweepSpec",
    "Token",
    "ToyModel",
    "ValueSummary",
    "WordLexicon",
    "aggregate",
    "attention_maps",
    "combine_object",
    "component_kl_to_uniform",
    "cross_attention",
    "decomposed_kl",
    "direction_report",
    "divergence_loss",
    "emit_report",
    "entropy",
    "evaluate_total",
    "factorized_log_prob",
    "grad_total_loss",
    "guidance_step",
    "init_model",
    "kl",
    "kl_to_uniform",
    "outside_loss",
    "pac_bayes_bound",
    "pac_penalty",
    "pac_regularizer",
    "parse",
    "predict_noise",
    "read_bundle",
    "run_sweep",
    "sample",
    "score",
    "similarity_loss",
    "smooth",
    "softmax_scores",
    "sym_kl",
    "tokenize",
    "total_loss",
    "validate",
    "validate_bundle",
    "write_bundle",
]
