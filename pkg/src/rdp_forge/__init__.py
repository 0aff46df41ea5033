"""Learn regular decision processes from offline episodes, then plan on them."""
from .cms import Sketch, sketch_merge, sketch_new, sketch_query, sketch_update
from .environments import (
    BehaviorPolicy,
    GroundTruthRdp,
    generate_dataset,
    ground_truth_rdp,
    make_env,
    optimal_return,
    uniform_policy,
)
from .exceptions import (
    BudgetExceededError,
    ConfigurationError,
    DatasetFormatError,
    EnumerationCapError,
    FamilySizeError,
    IncompatibleSketchError,
    RdpForgeError,
    UndefinedEstimateError,
    UnsupportedEnvironmentError,
    UsageError,
)
from .languages import build_family, contains, estimate_prob
from .learner import AdactH, LearnedRdp, adact_h, learn_stats
from .metrics import ExactStore, SketchStore, TesterConfig, lang_metric, prefix_linf, prefix_linf_cms
from .planner import RegularPlanner, estimate_outputs, evaluate_policy, value_iteration
from .trace import AlphabetSpec, Dataset, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "AdactH", "AlphabetSpec", "BehaviorPolicy", "BudgetExceededError", "ConfigurationError", "Dataset",
    "DatasetFormatError", "EnumerationCapError", "ExactStore", "FamilySizeError", "GroundTruthRdp",
    "IncompatibleSketchError", "LearnedRdp", "RdpForgeError", "RegularPlanner", "Sketch", "SketchStore",
    "TesterConfig", "UndefinedEstimateError", "UnsupportedEnvironmentError", "UsageError", "adact_h",
    "build_family", "contains", "estimate_outputs", "estimate_prob", "evaluate_policy", "generate_dataset",
    "ground_truth_rdp", "lang_metric", "learn_stats", "load_dataset", "make_env", "optimal_return",
    "prefix_linf", "prefix_linf_cms", "save_dataset", "sketch_merge", "sketch_new", "sketch_query",
    "sketch_update", "uniform_policy", "value_iteration",
]
