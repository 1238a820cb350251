"""Hash-grid latent features and the attribute decoder."""

from .checkpoint import CheckpointError, load_checkpoint, load_field, read_tensors, save_checkpoint, save_field, write_tensors
from .decoder import MLP, DecodeCache, Decoder, DecoderConfig, FieldOutputs, sigmoid, softplus
from .fourier import fourier_embed, fourier_embed_grad
from .hashgrid import PRIMES, EncodeCache, HashGrid, HashGridConfig, hash_corners
from .model import DEFAULT_FHAT_GRID, FieldCache, LatentField
from .optim import AdamState, adam_step

__all__ = [
    "CheckpointError", "load_checkpoint", "load_field", "read_tensors", "save_checkpoint", "save_field",
    "write_tensors", "MLP", "DecodeCache", "Decoder", "DecoderConfig", "FieldOutputs", "sigmoid", "softplus",
    "fourier_embed", "fourier_embed_grad", "PRIMES", "EncodeCache", "HashGrid", "HashGridConfig", "hash_corners",
    "DEFAULT_FHAT_GRID", "FieldCache", "LatentField", "AdamState", "adam_step",
]
