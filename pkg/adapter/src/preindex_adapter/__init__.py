"""Bridge torch models into the preindex toolkit's file formats.

The adapter only serializes: activations, labels, images, weight snapshots,
and retraining logs. All estimator math lives in the toolkit.
"""

from .dump import DumpError, DumpManifest, dump_activations, load_image_folder
from .hooks import ActivationRecorder, UnknownLayer, available_layers
from .pidx import PidxError, read_tensor, tensor_bytes, write_tensor
from .retrainlog import LogSchemaError, LogWriter, torch_weights

__all__ = [
    "ActivationRecorder",
    "DumpError",
    "DumpManifest",
    "LogSchemaError",
    "LogWriter",
    "PidxError",
    "UnknownLayer",
    "available_layers",
    "dump_activations",
    "load_image_folder",
    "read_tensor",
    "tensor_bytes",
    "torch_weights",
    "write_tensor",
]

__version__ = "0.1.0"
