from .bootstrap import bootstrap_ci
from .clustering import clustering_agreement, kmeans
from .linear import cox_partial_loglik, fit_coxnet, fit_logistic_probe
from .metrics import balanced_accuracy, concordance_index, macro_auc, quadratic_weighted_kappa
from .prompting import (
    PromptSet,
    build_prompts,
    build_survival_prompts,
    prompt_classify,
    prompt_risk_score,
)
from .retrieval import map_at_k
from .splits import Split, SplitSpec, make_fewshot, make_splits
from .survival import kaplan_meier, logrank

__all__ = [
    "bootstrap_ci", "clustering_agreement", "kmeans", "cox_partial_loglik", "fit_coxnet",
    "fit_logistic_probe", "balanced_accuracy", "concordance_index", "macro_auc",
    "quadratic_weighted_kappa", "PromptSet", "build_prompts", "build_survival_prompts",
    "prompt_classify", "prompt_risk_score", "map_at_k", "Split", "SplitSpec", "make_fewshot",
    "make_splits", "kaplan_meier", "logrank",
]
