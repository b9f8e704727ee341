"""ESDNet moiré removal on a small numpy autodiff engine."""

from .errors import ContractError, FormatError, NaNError
from .loss import LossConfig, total_loss
from .metrics import psnr, ssim
from .model import ModelConfig, ModelParams, build_model, forward, param_count, tiled_infer
from .synth import MoireParams, gen_dataset
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"
