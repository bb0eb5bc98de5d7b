"""
梯度带

算子只在活动的 GradTape 上下文中被记录；记录顺序即拓扑顺序，
backward 逆序遍历每条记录恰好一次，完成后梯度带被重置。
"""

import threading
from collections import namedtuple
from contextlib import contextmanager

import numpy as np

from common.errors import TapeError
from .tensor import Tensor

TapeEntry = namedtuple('TapeEntry', ['output', 'inputs', 'backward_fn'])

_local = threading.local()


def _stack():
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def current_tape():
    """
    获取当前线程的活动梯度带

    Returns:
        GradTape | None: 处于 no_grad 或没有活动梯度带时返回 None
    """
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """在上下文内暂停记录"""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Gradients(dict):
    """梯度映射 {张量 uid: 梯度张量}"""

    def of(self, tensor):
        """
        取指定张量的梯度

        Args:
            tensor: 参与求导的张量

        Returns:
            Tensor: 与 tensor 同形状的梯度

        Raises:
            TapeError: 张量不在梯度带上
        """
        if tensor.uid not in self:
            raise TapeError(f"张量 {tensor!r} 不在梯度带上，无法取得梯度")
        return self[tensor.uid]


class GradTape:
    """梯度带，按执行顺序记录基本算子"""

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        if exc_type is not None:
            self.reset()
        return False

    def record(self, output, inputs, backward_fn):
        """记录一个算子"""
        output._tape = self
        self.entries.append(TapeEntry(output, tuple(inputs), backward_fn))

    def reset(self):
        """清空记录"""
        for entry in self.entries:
            entry.output._tape = None
        self.entries = []

    def backward(self, loss):
        """
        反向传播

        Args:
            loss: 标量损失张量（形状 [1]）

        Returns:
            Gradients: 所有 requires_grad 且与 loss 相连的张量的梯度

        Raises:
            TapeError: loss 非标量或不在本梯度带上
        """
        if loss.size != 1:
            raise TapeError(f"loss 必须是标量，当前形状 {list(loss.shape)}")
        if loss._tape is not self:
            raise TapeError("loss 不在梯度带上（未在 GradTape 上下文中计算，或梯度带已被消费）")

        grads = {loss.uid: np.ones(loss.shape, dtype=loss.dtype)}
        tensors = {loss.uid: loss}

        for entry in reversed(self.entries):
            out_grad = grads.get(entry.output.uid)
            if out_grad is None:
                continue
            input_grads = entry.backward_fn(out_grad)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
                if tensor.uid in grads:
                    grads[tensor.uid] = grads[tensor.uid] + grad
                else:
                    grads[tensor.uid] = grad
                    tensors[tensor.uid] = tensor

        self.reset()
        return Gradients({uid: Tensor._wrap(grad) for uid, grad in grads.items()
                          if tensors[uid].requires_grad})


def backward(loss):
    """
    对 loss 所在的梯度带执行反向传播

    Args:
        loss: 标量损失张量

    Returns:
        Gradients: 梯度映射
    """
    tape = loss._tape
    if tape is None:
        if loss.size != 1:
            raise TapeError(f"loss 必须是标量，当前形状 {list(loss.shape)}")
        raise TapeError("loss 不在梯度带上")
    return tape.backward(loss)
