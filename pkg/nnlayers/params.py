"""
参数集

ModelParams 以有序字典保存命名的 numpy 数组（可训练参数与 BatchNorm 滑动统计量）。
前向计算前通过 bind() 包装为张量，包装共享底层数组，不修改共享张量的标志位。
"""

import numpy as np

from common.errors import ShapeError
from tensorcore import Tensor


class ModelParams:
    """命名参数集 θ 或 (θ, φ)"""

    def __init__(self):
        self.arrays = {}
        self.buffers = set()

    def add(self, name, array, trainable=True):
        """
        添加参数

        Args:
            name: 参数名，形如 'conv1.weight'
            array: 参数值
            trainable: False 表示滑动统计量等非训练缓冲区
        """
        if name in self.arrays:
            raise ShapeError(f"参数名重复: {name}")
        self.arrays[name] = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
        if not trainable:
            self.buffers.add(name)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __len__(self):
        return len(self.arrays)

    def names(self):
        return list(self.arrays.keys())

    def trainable_names(self):
        return [name for name in self.arrays if name not in self.buffers]

    def count(self):
        """可训练参数总数"""
        return int(sum(self.arrays[name].size for name in self.trainable_names()))

    def copy(self):
        clone = ModelParams()
        clone.arrays = {name: array.copy() for name, array in self.arrays.items()}
        clone.buffers = set(self.buffers)
        return clone

    def as_dtype(self, dtype):
        """返回转换精度后的副本（有限差分校验使用 float64）"""
        clone = ModelParams()
        clone.arrays = {name: array.astype(dtype) for name, array in self.arrays.items()}
        clone.buffers = set(self.buffers)
        return clone

    def bind(self, trainable=False):
        """
        包装为前向计算用的张量

        Args:
            trainable: True 时可训练参数参与求导

        Returns:
            BoundParams: 共享底层数组的张量视图
        """
        return BoundParams(self, trainable)

    def equals(self, other):
        """逐位比较两个参数集"""
        if self.names() != other.names() or self.buffers != other.buffers:
            return False
        return all(np.array_equal(self.arrays[n], other.arrays[n]) and
                   self.arrays[n].dtype == other.arrays[n].dtype for n in self.arrays)

    @classmethod
    def from_arrays(cls, arrays, buffers=()):
        params = cls()
        buffers = set(buffers)
        for name, array in arrays.items():
            params.add(name, array, trainable=name not in buffers)
        return params


class BoundParams:
    """绑定到一次前向计算的参数张量"""

    def __init__(self, params, trainable):
        self.params = params
        self.tensors = {
            name: Tensor._wrap(array, requires_grad=trainable and name not in params.buffers)
            for name, array in params.arrays.items()
        }

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise ShapeError(f"缺少参数: {name}")

    def buffer(self, name):
        return self.params.arrays[name]

    def update_buffer(self, name, value):
        """原地更新缓冲区（仅训练线程调用）"""
        self.params.arrays[name][...] = value

    def trainable(self):
        """可训练参数张量 {name: Tensor}"""
        return {name: tensor for name, tensor in self.tensors.items()
                if name not in self.params.buffers}
