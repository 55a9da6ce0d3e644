"""Ranked tokeniser training, log-probability collection, and discontinuity
estimation of the effect of vocabulary membership."""

__version__ = "0.1.0"

from .tokeniser import (
    Merge,
    RankedVocabulary,
    Tokeniser,
    TokeniserError,
    UnknownSymbolError,
    apply_merge,
    load_vocab,
    pretokenise,
    save_vocab,
    train_ranked_vocab,
)
from .lm import (
    EOS,
    ExternalLogProbBackend,
    LMError,
    NgramBackend,
    PerfectOracleBackend,
    SyntheticLanguage,
    UniformBackend,
    load_external_logprobs,
    perfect_oracle,
    train_ngram,
)
from .outcomes import (
    AGGREGATE_STATS,
    CandidateSubword,
    OutcomeRecord,
    OutcomesError,
    aggregate,
    collect_outcomes,
    enumerate_candidates,
    exclude_nested,
    read_outcomes_csv,
    write_outcomes_csv,
)
from .rd import (
    LocalRegressionResult,
    RDDataset,
    RDError,
    RDFit,
    dataset_from_outcomes,
    fit_rd,
    local_regression_check,
    uniform_model_bound_check,
    window_sweep,
    write_fit_report,
    write_fitted_values_csv,
)

__all__ = [
    "Merge",
    "RankedVocabulary",
    "Tokeniser",
    "TokeniserError",
    "UnknownSymbolError",
    "apply_merge",
    "load_vocab",
    "pretokenise",
    "save_vocab",
    "train_ranked_vocab",
    "EOS",
    "ExternalLogProbBackend",
    "LMError",
    "NgramBackend",
    "PerfectOracleBackend",
    "SyntheticLanguage",
    "UniformBackend",
    "load_external_logprobs",
    "perfect_oracle",
    "train_ngram",
    "AGGREGATE_STATS",
    "CandidateSubword",
    "OutcomeRecord",
    "OutcomesError",
    "aggregate",
    "collect_outcomes",
    "enumerate_candidates",
    "exclude_nested",
    "read_outcomes_csv",
    "write_outcomes_csv",
    "LocalRegressionResult",
    "RDDataset",
    "RDError",
    "RDFit",
    "dataset_from_outcomes",
    "fit_rd",
    "local_regression_check",
    "uniform_model_bound_check",
    "window_sweep",
    "write_fit_report",
    "write_fitted_values_csv",
]
