"""Benchmark problems: quarter vehicle model and Van der Pol oscillator."""
from .common import TrainingProblem, TrainingResult, load_data, save_data, train
from .qvm import QvmConfig, build_qvm_training, generate_qvm_data, train_qvm
from .road import RoadProfile, generate_road
from .sweep import SweepReport, sensitivity_sweep
from .vdp import VdpConfig, build_vdp_training, generate_vdp_data, train_vdp

__all__ = [
    "TrainingProblem", "TrainingResult", "load_data", "save_data", "train", "QvmConfig",
    "build_qvm_training", "generate_qvm_data", "train_qvm", "RoadProfile", "generate_road",
    "SweepReport", "sensitivity_sweep", "VdpConfig", "build_vdp_training", "generate_vdp_data",
    "train_vdp",
]
