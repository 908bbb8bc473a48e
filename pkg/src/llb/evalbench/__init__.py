from .dataset import DatasetError, VideoSequence, load_davis_dir, write_davis_dir
from .evaluate import EvalReport, evaluate, evaluate_model
from .metrics import boundary_f, jaccard
from .synthetic import gen_dataset, gen_synthetic

__all__ = [
    "DatasetError", "EvalReport", "VideoSequence", "boundary_f", "evaluate", "evaluate_model",
    "gen_dataset", "gen_synthetic", "jaccard", "load_davis_dir", "write_davis_dir",
]
