from demgan.cgan.evaluate import CheckpointPredictor, evaluate_model
from demgan.cgan.losses import discriminator_loss, generator_loss
from demgan.cgan.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UNetGenerator,
    discriminator_forward,
    generator_forward,
)
from demgan.cgan.train import (
    ModelCheckpoint,
    TrainingStageConfig,
    load_checkpoint,
    save_checkpoint,
    train_on_arrays,
    train_stage,
)

__all__ = [
    "CheckpointPredictor",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "ModelCheckpoint",
    "PatchDiscriminator",
    "TrainingStageConfig",
    "UNetGenerator",
    "discriminator_forward",
    "discriminator_loss",
    "evaluate_model",
    "generator_forward",
    "generator_loss",
    "load_checkpoint",
    "save_checkpoint",
    "train_on_arrays",
    "train_stage",
]
