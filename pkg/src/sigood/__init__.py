"""Test-time graph OOD detection: a frozen GIN encoder plus a prompt generator tuned
on an energy-preference loss, with dataset tooling and an evaluation harness."""

__version__ = "0.1.0"

from .data import SynthSpec, anomaly_split, mix_test_set, parse_tu_dataset, synth_dataset, write_tu_dataset
from .detector import DetectionResult, DetectorConfig, calibrate_tau, detect, run_detector, sigood_step
from .energy import node_energy, partition_nodes, positive_energy, energy_variation
from .epo import EpoConfig, epo_loss, verify_reward_derivation
from .evaluation import BenchmarkConfig, auc, export_score_distribution, run_benchmark
from .gnn import FrozenModel, PretrainConfig, encode, load_model, pretrain, save_model
from .graph import Dataset, Graph, LabeledGraph, build_graph
from .prompt import PromptGenParams, generate_prompt, init_prompt_params, inject_prompt
