"""Desk-scale laboratory for finetuning prior-fitted tabular in-context learners."""

from .task import TaskType

__version__ = "0.1.0"

__all__ = ["TaskType", "__version__"]
