"""Zero-inflated Poisson regression and sequential imputation of missing
counts in longitudinal panels."""

from .ancova import BartlettEstimates, ImputationDecision, bartlett_estimates, impute_cells
from .datasets import load_corn, load_corn_missing
from .estimators import ZIPImputer, ZIPRegressor
from .exceptions import DataStateError, DesignError, ParseError, TimeStepError, ZIPError
from .pipeline import PanelData, PipelineConfig, PipelineResult, pca_scores, run_pipeline
from .simulation import SimConfig, bench_corn, run_comparison, simulate_panel
from .weighted_em import candidate_support, fit_weighted_em
from .zip_core import FitControl, FitResult, ZipParams, fit_scoring, fisher_info, loglik, score

__version__ = "0.1.0"
