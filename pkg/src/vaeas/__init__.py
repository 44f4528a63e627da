"""VAE with an auxiliary softmax classifier that estimates I(z, x) and D(q(z) || p(z))."""
from .classifier import AuxClassifier, LabelCode, MiReport, assign_labels
from .data import Dataset, load_dataset, load_idx, synth_random_images
from .mathops import SeededRng
from .training import TrainResult, train
from .vae import RunConfig, VaeModel

__all__ = [
    "AuxClassifier", "LabelCode", "MiReport", "assign_labels", "Dataset", "load_dataset", "load_idx",
    "synth_random_images", "SeededRng", "TrainResult", "train", "RunConfig", "VaeModel",
]
__version__ = "0.1.0"
