"""Spiking networks with a temporal shift between timesteps."""
from .errors import (ConfigError, ContractError, DimensionError, FormatError, IngestionError, TrainingError,
                     TSSNNError)
from .kernels import BACKEND_NAME
from .lif import LIFParams
from .network import Network, NetworkSpec, build, load_checkpoint, preset, save_checkpoint
from .tensor import GradTape, Tensor, backward
from .tshift import ShiftConfig, SplitPoints

__version__ = "0.1.0"
