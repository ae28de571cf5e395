from .config import RunConfig, load_config
from .evaluation import EvalReport, evaluate_split, rpn_quality
from .stages import load_splits, run_stage
from .training import finetune_on_proposals, pretrain_classifier, train_fewshot_classifier, train_rpn

__all__ = [
    "EvalReport",
    "RunConfig",
    "evaluate_split",
    "finetune_on_proposals",
    "load_config",
    "load_splits",
    "pretrain_classifier",
    "rpn_quality",
    "run_stage",
    "train_fewshot_classifier",
    "train_rpn",
]
