"""Subject-consistent story-to-image rendering primitives."""

from ._core import (
    DreamstoryError,
    build_plan,
    correspondence,
    derive_seed,
    masked_softmax,
    mmca_fuse,
    mmsa,
    otsu,
    run_story,
    semantic_map,
    token_dropout,
    vanilla_attention,
)

__all__ = [
    "DreamstoryError",
    "build_plan",
    "correspondence",
    "derive_seed",
    "masked_softmax",
    "mmca_fuse",
    "mmsa",
    "otsu",
    "run_story",
    "semantic_map",
    "token_dropout",
    "vanilla_attention",
]
