"""Dual-encoder contrastive alignment engine.

Thin python surface over the C++ core: matrix/loss primitives, fvecs IO,
vocabulary building, the trained model (checkpoints, joint-space embeddings,
zero-shot prediction), brute-force retrieval, and the full CLI entry point.
"""

from ._core import (
    MAX_TOKENS,
    EngineError,
    Model,
    __version__,
    avg_topk_cosine,
    build_vocab,
    cross_entropy_rows,
    default_config_json,
    l2_normalize_rows,
    make_synthetic_dataset,
    read_fvecs,
    retrieve_topk,
    run_cli,
    similarity_logits,
    softmax_rows,
    symmetric_loss,
    tokenize,
    write_fvecs,
)

__all__ = [
    "MAX_TOKENS",
    "EngineError",
    "Model",
    "__version__",
    "avg_topk_cosine",
    "build_vocab",
    "cross_entropy_rows",
    "default_config_json",
    "l2_normalize_rows",
    "make_synthetic_dataset",
    "read_fvecs",
    "retrieve_topk",
    "run_cli",
    "similarity_logits",
    "softmax_rows",
    "symmetric_loss",
    "tokenize",
    "write_fvecs",
]
