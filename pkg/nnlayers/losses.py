"""
损失函数

所有损失返回形状 [1] 的标量张量；reduction 为 'mean'（按元素或按样本平均）或 'sum'。
"""

import numpy as np

from common.errors import ShapeError
from tensorcore import Tensor, ops

BCE_EPS = 1e-6
REDUCTIONS = ('mean', 'sum')


def _check_reduction(reduction):
    if reduction not in REDUCTIONS:
        raise ValueError(f"不支持的归约方式: {reduction}")


def _as_target(target, like):
    """目标图像作为常量参与计算"""
    if isinstance(target, Tensor):
        return target
    return Tensor._wrap(np.asarray(target, dtype=like.dtype))


def cross_entropy(logits, onehot, reduction='mean'):
    """
    softmax 交叉熵

    Args:
        logits: (N, m) 张量
        onehot: (N, m) one-hot 目标
        reduction: 'mean' 为批均值，'sum' 为批内求和

    Returns:
        Tensor: −log softmax(logits)[y]
    """
    _check_reduction(reduction)
    return ops.softmax_cross_entropy(logits, onehot, reduction)


def mse(x, x_rec, reduction='mean'):
    """
    平方误差 Σ(x − x′)²，'mean' 时除以元素个数

    Raises:
        ShapeError: 形状不一致
    """
    _check_reduction(reduction)
    target = _as_target(x, x_rec)
    if target.shape != x_rec.shape:
        raise ShapeError(f"mse: 形状不匹配 {list(target.shape)} vs {list(x_rec.shape)}")
    diff = ops.sub(target, x_rec)
    squared = ops.mul(diff, diff)
    return ops.mean(squared) if reduction == 'mean' else ops.sum(squared)


def bce(x, x_rec, reduction='mean', eps=BCE_EPS):
    """
    二元交叉熵 −[x log x′ + (1 − x) log(1 − x′)]

    x′ 先被裁剪到 [eps, 1 − eps]，保证对数有定义。

    Args:
        x: 目标像素，取值 [0, 1]
        x_rec: 重建像素
        reduction: 归约方式
        eps: 裁剪量

    Raises:
        ShapeError: 形状不一致
    """
    _check_reduction(reduction)
    target = _as_target(x, x_rec)
    if target.shape != x_rec.shape:
        raise ShapeError(f"bce: 形状不匹配 {list(target.shape)} vs {list(x_rec.shape)}")
    clamped = ops.clip(x_rec, eps, 1.0 - eps)
    pos = ops.mul(target, ops.log(clamped))
    neg = ops.mul(ops.sub(1.0, target), ops.log(ops.sub(1.0, clamped)))
    per_element = ops.neg(ops.add(pos, neg))
    return ops.mean(per_element) if reduction == 'mean' else ops.sum(per_element)
