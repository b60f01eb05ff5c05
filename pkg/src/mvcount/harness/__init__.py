"""Metrics, experiment configuration, training and evaluation protocols."""
from mvcount.harness.config import ExperimentConfig, load_config, parse_config
from mvcount.harness.data import Sample, eval_suite, make_sample, training_pool
from mvcount.harness.evaluation import EvalReport, ablate, evaluate, inspect_weights, write_weight_csv
from mvcount.harness.metrics import mae, nae
from mvcount.harness.protocols import gen_data, grad_check, micro_config
from mvcount.harness.training import build_model, load_model, predict_counts, train

__all__ = [
    "ExperimentConfig", "load_config", "parse_config", "Sample", "eval_suite", "make_sample", "training_pool",
    "EvalReport", "ablate", "evaluate", "inspect_weights", "write_weight_csv", "mae", "nae", "gen_data",
    "grad_check", "micro_config", "build_model", "load_model", "predict_counts", "train",
]
