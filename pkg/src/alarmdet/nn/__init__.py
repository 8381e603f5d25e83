from .engine import (LayerSpec, Network, NetworkError, TrainConfig, TrainingDiverged, backward_update,
                     balance_training_set, build_network, gradient_check, train)
from .inputs import build_class_specific_input, build_generic_input, stack_context

__all__ = ["LayerSpec", "Network", "NetworkError", "TrainConfig", "TrainingDiverged", "backward_update",
           "balance_training_set", "build_network", "gradient_check", "train",
           "build_class_specific_input", "build_generic_input", "stack_context"]
