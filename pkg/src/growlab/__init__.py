"""growlab: desk-scale progressive-growth training for decoder-only LMs.

The package is a small laboratory for the growth strategy of training:
start narrow and shallow, train, expand the network function-preservingly,
and keep training, so early tokens are consumed at a fraction of the final
model's cost. Everything runs on CPU with numpy.

Modules
-------
numerics     reverse-mode autodiff over numpy arrays
model        decoder-only transformer with masked structural growth hooks
growth       width/depth/head expansion operators and preservation checks
optim        AdamW with per-group learning-rate multipliers
data         sample sources, ratio mixing, binary corpus format
checkpoint   full training state serialization
trainer      stage loop and multi-stage growth plans
stability    coordinate checks, proxy grid search, width transfer,
             loss-scaling fits
costmodel    FLOPs/walltime/energy accounting and published-run registry
evalgen      synthetic in-context evaluation task generators and scoring
tokenizer    byte-level vocabulary with document/teacher special tokens
config       strict TOML run configuration
cli          the ``growlab`` command
"""

__version__ = "0.1.0"

from . import (checkpoint, config, costmodel, data, evalgen, growth, model,
               numerics, optim, stability, tokenizer, trainer)
from .errors import (
    CheckpointFormatError,
    ChecksumError,
    ConfigError,
    GradientError,
    GrowlabError,
    GrowthError,
    MaskError,
    ShapeError,
    TrainingDiverged,
)

__all__ = [
    "__version__",
    "checkpoint",
    "config",
    "costmodel",
    "data",
    "evalgen",
    "growth",
    "model",
    "numerics",
    "optim",
    "stability",
    "tokenizer",
    "trainer",
    "GrowlabError",
    "ConfigError",
    "ShapeError",
    "MaskError",
    "GradientError",
    "GrowthError",
    "CheckpointFormatError",
    "ChecksumError",
    "TrainingDiverged",
]
