"""Python bindings for the procache streaming token-cache library."""

from ._procache import (
    AttentionEngine,
    AttentionWeights,
    DivergenceError,
    InterleavedCache,
    StructuralError,
    Token,
    TokenKind,
    budget_report,
    connector_gradcheck,
    default_config,
    fit_affine,
    fit_growth,
    full_recompute,
    giou,
    grad_check,
    group_consecutive,
    hungarian_match,
    loss_lm,
    loss_total,
    make_attention_weights,
    run_strategy,
    scene_from_json,
    should_verbalize,
    train_toy,
    validate_config,
)

__all__ = [name for name in dir() if not name.startswith("_")]
