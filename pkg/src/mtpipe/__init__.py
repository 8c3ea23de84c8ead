"""mtpipe: instruction datasets, batch generation, and evaluation for MT experiments."""

__version__ = "0.1.0"

from mtpipe.corpus import (
    FilterConfig,
    LangPair,
    ParallelSegment,
    filter_segment,
    mixture_iterator,
    sample_pool,
)
from mtpipe.templates import PromptSpec, TemplateId, completion_for, parse, render

__all__ = [
    "FilterConfig",
    "LangPair",
    "ParallelSegment",
    "PromptSpec",
    "TemplateId",
    "completion_for",
    "filter_segment",
    "mixture_iterator",
    "parse",
    "render",
    "sample_pool",
    "__version__",
]
