# tensorcore/__init__.py
"""
张量核心模块
包含带反向模式自动微分的稠密张量、梯度带、基本算子与可复现随机数流
"""

from .tensor import Tensor, float64_mode, default_dtype
from .tape import GradTape, Gradients, backward, no_grad, current_tape
from .rng import Rng, gaussian
from . import ops

__all__ = ['Tensor', 'float64_mode', 'default_dtype',
           'GradTape', 'Gradients', 'backward', 'no_grad', 'current_tape',
           'Rng', 'gaussian', 'ops']
