"""asymforge: asymmetry-driven synthetic data for multi-modal brain MRI,
distillation-based post-training, and incomplete-modality Dice evaluation."""

__version__ = "0.1.0"
