"""Dual-view crystal graph model: invariant + equivariant encoders with a
two-expert fusion head, denoising/contrastive pretraining, and a supervised
property pipeline."""

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .errors import DataError, NumericError
from .graph import GraphError, PeriodicGraph, build_graph, reference_vectors
from .model import MGTModel
from .pipeline import (Normalizer, Record, evaluate_records, finetune,
                       load_checkpoint, load_jsonl, predict_records,
                       regression_metrics, save_checkpoint, split_dataset,
                       transfer_encoder_params)
from .pretrain import inject_noise, nt_xent, run_pretraining
from .structures import (CrystalStructure, GroupAction, StructureError,
                         apply_group_action, parse_poscar, serialize_poscar)
from .tensor import Tensor, set_default_dtype

__all__ = [
    "ConfigError", "RunConfig", "apply_overrides", "load_config",
    "DataError", "NumericError",
    "GraphError", "PeriodicGraph", "build_graph", "reference_vectors",
    "MGTModel",
    "Normalizer", "Record", "evaluate_records", "finetune",
    "load_checkpoint", "load_jsonl", "predict_records",
    "regression_metrics", "save_checkpoint", "split_dataset",
    "transfer_encoder_params",
    "inject_noise", "nt_xent", "run_pretraining",
    "CrystalStructure", "GroupAction", "StructureError",
    "apply_group_action", "parse_poscar", "serialize_poscar",
    "Tensor", "set_default_dtype",
]

__version__ = "0.1.0"
