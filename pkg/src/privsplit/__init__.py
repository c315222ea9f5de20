"""Privacy-preserving split inference.

A trained classifier is cut in two: the client runs the front layers and sends
an obfuscated intermediate feature, the server runs the rest.  The feature is
made less useful for identifying the person behind it by Siamese fine-tuning,
PCA truncation and Gaussian noise, while keeping the approved task accurate.
"""
from .data import Dataset, SynthConfig, generate, load_csv, save_csv, split_train_test
from .embedding import EmbeddingConfig, EmbeddingModels, SplitModel, evaluate_embedding, split_network
from .errors import PrivSplitError
from .estimators import FeedForwardClassifier, GaussianNoise, PCAReducer, PrivacyEmbedding
from .experiments import ExperimentConfig, compare_variants, run_pipeline
from .nn import Network, TrainConfig, init_network, train_classifier
from .pca import PcaTransform, fit_pca
from .privacy import accuracy_privacy_curve, privacy_of_point, privacy_total, transfer_attack
from .siamese import SiameseConfig, contrastive_loss, finetune_siamese

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SynthConfig", "generate", "load_csv", "save_csv", "split_train_test",
    "EmbeddingConfig", "EmbeddingModels", "SplitModel", "evaluate_embedding", "split_network",
    "PrivSplitError",
    "FeedForwardClassifier", "GaussianNoise", "PCAReducer", "PrivacyEmbedding",
    "ExperimentConfig", "compare_variants", "run_pipeline",
    "Network", "TrainConfig", "init_network", "train_classifier",
    "PcaTransform", "fit_pca",
    "accuracy_privacy_curve", "privacy_of_point", "privacy_total", "transfer_attack",
    "SiameseConfig", "contrastive_loss", "finetune_siamese",
]
