"""featgen: dual-agent reinforcement-learning feature generation for
column-typed tabular data."""

from .agents import (DiscriminationAgent, EpsilonSchedule, GenerationAgent,
                     OpChoice, QNetAgent, ReplayBuffer, Transition)
from .embedding import EncodingConfig, encode_dataset, feature_encoding
from .errors import ConfigError, FeatgenError, NoPartnerError, SchemaError
from .evaluator import (LearnerConfig, Score, evaluate_cv, f1_score,
                        one_minus_rae)
from .mutualinfo import entropy, mutual_information
from .rewards import (RewardBreakdown, RewardWeights, discrimination_reward,
                      generation_reward)
from .search import (SearchConfig, SearchResult, WorkingFeature, apply_actions,
                     order_report, run_ablation, run_search)
from .tabular import (ColumnKind, Dataset, FoldPlan, SchemaSpec, Task,
                      column_descriptor, load_csv, parse_schema, read_schema,
                      split_folds)
from .transforms import (FeatureExpression, apply_binary, apply_unary,
                         bin_with_tree, cross, expression_order,
                         parse_expression, select_partner)

__version__ = "0.1.0"

__all__ = [
    "ColumnKind", "ConfigError", "Dataset", "DiscriminationAgent",
    "EncodingConfig", "EpsilonSchedule", "FeatgenError", "FeatureExpression",
    "FoldPlan", "GenerationAgent", "LearnerConfig", "NoPartnerError",
    "OpChoice", "QNetAgent", "ReplayBuffer", "RewardBreakdown",
    "RewardWeights", "SchemaError", "SchemaSpec", "Score", "SearchConfig",
    "SearchResult", "Task", "Transition", "WorkingFeature", "apply_actions",
    "apply_binary", "apply_unary", "bin_with_tree", "column_descriptor",
    "cross", "discrimination_reward", "encode_dataset", "entropy",
    "evaluate_cv", "expression_order", "f1_score", "feature_encoding",
    "generation_reward", "load_csv", "mutual_information", "one_minus_rae",
    "order_report", "parse_expression", "parse_schema", "read_schema",
    "run_ablation", "run_search", "select_partner", "split_folds",
]
