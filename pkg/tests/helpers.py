from roma.config import ExperimentConfig


def tiny_config(**overrides) -> ExperimentConfig:
    """A config small enough for a training run to finish in about a second."""
    base = {
        "data.k_classes": 4, "data.per_class": 12, "data.test_per_class": 6, "data.dim": 8,
        "encoder.backbone_widths": [16], "encoder.projector_dim": 8,
        "train.epochs": 2, "train.batch_size": 16, "train.diag_samples": 32,
        "eval.probe_epochs": 5, "eval.knn_k": 5,
    }
    base.update(overrides)
    return ExperimentConfig().replace(**base)
