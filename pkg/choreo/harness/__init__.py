"""Agent assembly, phase runners, metrics sinks and the CLI."""

from choreo.harness.agent import ChoreoAgent
from choreo.harness.bench import GaussianMixture, run_codebook_bench, train_codebook
from choreo.harness.logging_setup import configure_logging
from choreo.harness.metrics import JsonlMetricsSink, MemoryMetricsSink, MetricsSink
from choreo.harness.runner import FinetuneRunner, PretrainRunner, run_finetune, run_pretrain

__all__ = [
    "ChoreoAgent",
    "GaussianMixture",
    "run_codebook_bench",
    "train_codebook",
    "configure_logging",
    "JsonlMetricsSink",
    "MemoryMetricsSink",
    "MetricsSink",
    "FinetuneRunner",
    "PretrainRunner",
    "run_finetune",
    "run_pretrain",
]
