"""Temporal sentiment-trend analysis over threaded school forum data.

Pipeline: ingest comment dumps and school covariates, build per-school
reply graphs, cap oversized graphs by seeded BFS sampling, score messages
with a graph attention network stacked against upstream transformer
probabilities, and estimate the year-over-year trend with a random-
intercept logistic mixed model, FDR-adjusted inference, and report files.
"""

from .corpus import (
    Corpus,
    RawComment,
    SchoolCovariates,
    Window,
    descriptive_stats,
    filter_window,
    load_covariates,
    parse_comments,
)
from .gat import (
    EmbeddingMatrix,
    GatConfig,
    GatParams,
    SentimentProbs,
    gat_forward,
    gat_gradient,
    gat_train,
)
from .glmm import (
    GlmmDesign,
    GlmmFit,
    OddsRatioTable,
    aghq_loglik,
    build_design,
    fit_glmm,
    laplace_loglik,
    wald_table,
)
from .report import NegativeShareTable, PValueSet, bh_adjust, negative_share
from .stacking import StackModel, StackObservation, fit_stack, predict_stack
from .thread_graph import MessageGraph, SampledSubgraph, build_graph, sample_capped

__version__ = "0.1.0"

__all__ = [
    "Corpus", "RawComment", "SchoolCovariates", "Window",
    "parse_comments", "filter_window", "load_covariates", "descriptive_stats",
    "MessageGraph", "SampledSubgraph", "build_graph", "sample_capped",
    "EmbeddingMatrix", "GatConfig", "GatParams", "SentimentProbs",
    "gat_forward", "gat_gradient", "gat_train",
    "StackModel", "StackObservation", "fit_stack", "predict_stack",
    "GlmmDesign", "GlmmFit", "OddsRatioTable",
    "build_design", "laplace_loglik", "aghq_loglik", "fit_glmm", "wald_table",
    "PValueSet", "NegativeShareTable", "bh_adjust", "negative_share",
]
