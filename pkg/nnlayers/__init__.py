# nnlayers/__init__.py
"""
神经网络层模块
包含层、参数集、损失函数与优化器
"""

from .params import ModelParams, BoundParams
from .layers import (Layer, Conv2D, Dense, MaxPool, Dropout, BatchNorm, Upsample,
                     TransposeConv2D, Flatten, Reshape, Activation, LayerStack,
                     build_layer, LAYER_KINDS, MODES)
from .losses import cross_entropy, mse, bce
from .optimizers import OptimizerConfig, Optimizer, optimizer_step

__all__ = ['ModelParams', 'BoundParams',
           'Layer', 'Conv2D', 'Dense', 'MaxPool', 'Dropout', 'BatchNorm', 'Upsample',
           'TransposeConv2D', 'Flatten', 'Reshape', 'Activation', 'LayerStack',
           'build_layer', 'LAYER_KINDS', 'MODES',
           'cross_entropy', 'mse', 'bce',
           'OptimizerConfig', 'Optimizer', 'optimizer_step']
