from .checkpoint import Checkpoint, CheckpointError
from .model import Condition, ConditionEncoder, Denoiser, DenoiserConfig, build_denoiser
from .sample import guided_epsilon, sample, sample_tensors
from .schedule import NoiseSchedule, forward_noise, make_schedule
from .train import TrainHyper, TrainingDiverged, TrainResult, epsilon_loss, train

__all__ = [
    "Checkpoint", "CheckpointError", "Condition", "ConditionEncoder", "Denoiser", "DenoiserConfig",
    "NoiseSchedule", "TrainHyper", "TrainResult", "TrainingDiverged", "build_denoiser", "epsilon_loss",
    "forward_noise", "guided_epsilon", "make_schedule", "sample", "sample_tensors", "train",
]
