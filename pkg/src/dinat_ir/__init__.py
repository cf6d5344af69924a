"""DiNAT-IR: dilated neighborhood attention restoration network on a numpy autodiff core."""
from .attention import AttentionConfig, dina_attend, dense_oracle, neighbor_map, rel_index
from .channel import cam, casa
from .errors import (ConfigError, ContractError, DataError, DimensionError, DinatError,
                     FormatError, GeometryError, NumericalError)
from .model import ModelConfig, build_model, param_count
from .tensor import Parameter, Tape, Tensor, backward, no_grad
from .train import TrainConfig, train_loop

__version__ = "0.1.0"
