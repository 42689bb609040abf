from . import engine
from .engine import Node, backward, debug_mode, leaf, set_debug
from .train import (SgdConfig, load_checkpoint, loss_and_grad, predict, predict_proba,
                    save_checkpoint, train)
from .unet import DEFAULT_WIDTHS, UNetLiteParams, init_params, param_shapes, unet_lite_forward

__all__ = [
    "engine", "Node", "backward", "debug_mode", "leaf", "set_debug",
    "SgdConfig", "load_checkpoint", "loss_and_grad", "predict", "predict_proba",
    "save_checkpoint", "train",
    "DEFAULT_WIDTHS", "UNetLiteParams", "init_params", "param_shapes", "unet_lite_forward",
]
