"""Joint transduction/induction video object segmentation with discriminative
label generation and gated branch fusion."""
from .config import LLBConfig, load_config
from .model import LLBModel

__version__ = "0.1.0"

__all__ = ["LLBConfig", "LLBModel", "load_config"]
