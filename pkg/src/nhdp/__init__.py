"""Multi-level nonparametric admixture modeling.

Documents are admixtures of entities, entities are admixtures of
topics, and so on for any number of levels; the number of dishes at
every level is inferred rather than fixed.  The package provides two
Gibbs inference schemes (a token-level direct scheme for arbitrary
depth and a seating-based franchise scheme for the two tractable
shapes), exact enumeration oracles for small corpora, held-out
perplexity and entity-recovery evaluation, a synthetic-corpus
generator, scikit-learn style estimators, and a CLI
(train / eval / bench / synth).
"""

from .corpus import (
    AuthorLabels,
    Corpus,
    ParseError,
    author_vote_split,
    load_bow_corpus,
    load_jsonl_corpus,
    mask_authors,
    save_jsonl_corpus,
)
from .estimators import FranchiseGibbs, NestedHDPGibbs, TrainResult, run_chain
from .evaluation import (
    MetricRecord,
    benchmark_schemes,
    extract_contributions,
    nmi_from_similarity,
    nmi_hidden_authors,
    perplexity,
    perplexity_report,
    write_metrics_csv,
)
from .gibbs_crf import HdpCrfState, U2CrfState, crf_sweep
from .gibbs_direct import SweepStats, sweep
from .oracle import ExactPosterior, TruncSpec, enumerate_posterior, finite_predictive, finite_forward_sampler
from .randdist import Rng
from .state import (
    CheckpointError,
    Hyper,
    InvariantError,
    ModelState,
    PosteriorSample,
    load_checkpoint,
    new_state,
    save_checkpoint,
    validate,
)
from .synth import SynthConfig, SynthData, generate

__version__ = "0.1.0"

__all__ = [
    "AuthorLabels",
    "Corpus",
    "ParseError",
    "author_vote_split",
    "load_bow_corpus",
    "load_jsonl_corpus",
    "mask_authors",
    "save_jsonl_corpus",
    "FranchiseGibbs",
    "NestedHDPGibbs",
    "TrainResult",
    "run_chain",
    "MetricRecord",
    "benchmark_schemes",
    "extract_contributions",
    "nmi_from_similarity",
    "nmi_hidden_authors",
    "perplexity",
    "perplexity_report",
    "write_metrics_csv",
    "HdpCrfState",
    "U2CrfState",
    "crf_sweep",
    "SweepStats",
    "sweep",
    "ExactPosterior",
    "TruncSpec",
    "enumerate_posterior",
    "finite_predictive",
    "finite_forward_sampler",
    "Rng",
    "CheckpointError",
    "Hyper",
    "InvariantError",
    "ModelState",
    "PosteriorSample",
    "load_checkpoint",
    "new_state",
    "save_checkpoint",
    "validate",
    "SynthConfig",
    "SynthData",
    "generate",
    "__version__",
]
