"""Two-stage video inpainting: a 3D network on a downsampled volume guides a
full-resolution 2D network."""
from .config import LossReport, Phase, Split, Strategy, TrainConfig
from .errors import (ChecksumError, EmptyDataset, EmptyInput, EmptyMask,
                     IndivisibleSize, InpaintError, ShapeMismatch, TooFewFrames,
                     VersionError)
from .model import ModelBundle
from .net3d import Variant

__version__ = "0.1.0"
