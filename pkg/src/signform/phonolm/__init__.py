"""Phone-level LSTM language models: architecture, training, persistence."""

from .archive import ModelArchive, load_model, save_model
from .model import (
    LMConfig,
    LMParameters,
    PerWordLoss,
    condition_init,
    encode_signs,
    evaluate,
    forward,
    init_params,
    log_prob,
    log_softmax2,
    loss_and_grads,
    micro_bits_per_phone,
    pack_batch,
)
from .training import OptSettings, TrainResult, train, train_on_indices

__all__ = [
    "LMConfig", "LMParameters", "PerWordLoss", "condition_init",
    "encode_signs", "evaluate", "forward", "init_params", "log_prob",
    "log_softmax2", "loss_and_grads", "micro_bits_per_phone", "pack_batch",
    "ModelArchive", "load_model", "save_model",
    "OptSettings", "TrainResult", "train", "train_on_indices",
]
