"""Desk-scale RNA inverse-folding workbench.

Structures and energies (:mod:`~rnaforge.structure`, :mod:`~rnaforge.thermo`),
an exact folding engine (:mod:`~rnaforge.folding`), a structure-prompted
policy with constrained decoding (:mod:`~rnaforge.policy`,
:mod:`~rnaforge.decoding`), corpus construction (:mod:`~rnaforge.data`),
supervised and GRPO training (:mod:`~rnaforge.training`) and a benchmark
harness (:mod:`~rnaforge.bench`), with scikit-learn style estimators in
:mod:`~rnaforge.estimators`.
"""

from .decoding import DecodeRequest, admissible_set, best_of_n, sample
from .errors import RNAForgeError
from .estimators import FoldEvaluator, LMDesigner, LocalSearchDesigner, TargetInitDesigner
from .folding import (boltzmann_prob, count_mfe, fold, fold_summary, log_partition_function,
                      mfe, ned, pair_probabilities, partition_function)
from .policy import Policy, PolicyConfig, load_checkpoint, log_prob, save_checkpoint, \
    target_init_sample
from .structure import Structure, StructureSet, d_edit, d_min_norm, d_struct, \
    design_space_size, is_valid_design, parse_structure
from .thermo import EnergyParams, energy, load_params, parse_params, zero_params

__version__ = "0.1.0"

__all__ = [
    "DecodeRequest", "EnergyParams", "FoldEvaluator", "LMDesigner", "LocalSearchDesigner",
    "Policy", "PolicyConfig", "RNAForgeError", "Structure",
    "StructureSet", "admissible_set", "best_of_n", "boltzmann_prob", "count_mfe", "d_edit",
    "d_min_norm", "d_struct", "design_space_size", "energy", "fold", "fold_summary",
    "is_valid_design", "load_checkpoint", "load_params", "log_partition_function", "log_prob",
    "mfe", "ned", "pair_probabilities", "parse_params", "parse_structure",
    "partition_function", "sample", "save_checkpoint", "target_init_sample",
    "TargetInitDesigner", "zero_params",
]
