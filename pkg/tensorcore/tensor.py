"""
张量类

行主序 n 维数组，默认 32 位浮点；参与梯度带记录时 requires_grad 为 True。
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from common.errors import ShapeError

_uid_counter = itertools.count(1)
_state = threading.local()


def default_dtype():
    """当前线程创建张量使用的浮点类型"""
    return getattr(_state, 'dtype', np.float32)


@contextmanager
def float64_mode():
    """
    在上下文内以 64 位浮点创建张量

    仅用于有限差分校验，训练与推理始终使用 32 位浮点。
    """
    previous = default_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    """稠密张量"""

    __slots__ = ('data', 'requires_grad', 'uid', '_tape')

    def __init__(self, data, requires_grad=False):
        array = np.array(data, dtype=default_dtype())
        self._init_from_array(array, requires_grad)

    @classmethod
    def _wrap(cls, array, requires_grad=False):
        """不复制地包装算子结果"""
        tensor = cls.__new__(cls)
        tensor._init_from_array(np.asarray(array), requires_grad)
        return tensor

    def _init_from_array(self, array, requires_grad):
        if array.ndim == 0:
            array = array.reshape(1)
        if array.size == 0:
            raise ShapeError(f"张量形状必须全部为正: {array.shape}")
        self.data = np.ascontiguousarray(array)
        self.requires_grad = bool(requires_grad)
        self.uid = next(_uid_counter)
        self._tape = None

    # =============================================================================
    # 属性
    # =============================================================================

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        """返回数据副本"""
        return self.data.copy()

    def item(self):
        """返回标量值"""
        if self.size != 1:
            raise ShapeError(f"只有单元素张量可以转换为标量，当前形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """返回不参与求导的副本"""
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{flag})"

    # =============================================================================
    # 运算符重载
    # =============================================================================

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)
