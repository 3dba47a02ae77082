from .dae import (DadaeModel, DaeModel, DaeSpec, DenoisingAutoEncoder, DomainAdaptiveDAE,
                  GradientReversal, TrainConfig, TrainingDiverged, denoise, grl_transform,
                  train_dadae, train_dae)
from .mlp import Mlp, MlpSpec, forward, grad

__all__ = [
    "DadaeModel", "DaeModel", "DaeSpec", "DenoisingAutoEncoder", "DomainAdaptiveDAE",
    "GradientReversal", "TrainConfig", "TrainingDiverged", "denoise", "grl_transform",
    "train_dadae", "train_dae", "Mlp", "MlpSpec", "forward", "grad",
]
