"""Data ingestion, baselines, aggregation and the experiment CLI."""

from .config import RunConfig, build_datasets, load_config, synthetic_dataset
from .io import Column, SchemaConfig, TabularDataset, load_csv, preprocess
from .mlp import MLPConfig, train_mlp_baseline
from .report import ReportRow, aggregate, percentiles, relative_improvement
from .subsample import level_sizes, nested_levels, subsample_study

__all__ = [
    "Column",
    "MLPConfig",
    "ReportRow",
    "RunConfig",
    "SchemaConfig",
    "TabularDataset",
    "aggregate",
    "build_datasets",
    "level_sizes",
    "load_config",
    "load_csv",
    "nested_levels",
    "percentiles",
    "preprocess",
    "relative_improvement",
    "subsample_study",
    "synthetic_dataset",
    "train_mlp_baseline",
]
