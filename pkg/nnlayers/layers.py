"""
神经网络层

每个层由一个可 JSON 序列化的描述字典构建（build_layer），
输出形状只取决于输入形状与超参数；dropout 与 batchnorm 的行为由显式的 mode 决定。
"""

import math

import numpy as np

from common.errors import ShapeError, DomainError
from tensorcore import ops

LAYER_KINDS = ('conv2d', 'dense', 'maxpool', 'dropout', 'batchnorm', 'upsample',
               'transpose-conv2d', 'flatten', 'reshape', 'activation')
MODES = ('train', 'eval')
ACTIVATIONS = ('relu', 'sigmoid', 'tanh', 'linear')


def apply_activation(x, name):
    """按名称施加激活函数"""
    if name == 'relu':
        return ops.relu(x)
    if name == 'sigmoid':
        return ops.sigmoid(x)
    if name == 'tanh':
        return ops.tanh(x)
    if name in (None, 'linear'):
        return x
    raise ValueError(f"不支持的激活函数: {name}")


def he_uniform(rng, shape, fan_in):
    """He-uniform 初始化"""
    limit = math.sqrt(6.0 / fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * np.float32(limit)


def check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"不支持的模式: {mode}（可选 {MODES}）")


class Layer:
    """层基类"""

    kind = None

    def __init__(self, name):
        self.name = name

    def output_shape(self, input_shape):
        """
        单样本输出形状

        Args:
            input_shape: 单样本输入形状（不含批维）

        Returns:
            tuple: 单样本输出形状
        """
        return tuple(input_shape)

    def param_count(self, input_shape):
        """可训练参数个数"""
        return 0

    def init_params(self, input_shape, rng, params):
        """在 params 中登记本层参数（默认无参数）"""

    def forward(self, x, bound, mode, rng=None):
        raise NotImplementedError

    def describe(self):
        """可 JSON 序列化的描述字典"""
        return {'kind': self.kind, 'name': self.name}


class Conv2D(Layer):
    """二维卷积层（'same' 填充，步长 1）"""

    kind = 'conv2d'

    def __init__(self, name, filters, kernel=3, activation='relu'):
        super().__init__(name)
        self.filters = int(filters)
        self.kernel = int(kernel)
        self.activation = activation

    def _check_input(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"{self.name}: 卷积层需要 H×W×C 输入，当前 {list(input_shape)}")

    def output_shape(self, input_shape):
        self._check_input(input_shape)
        h, w, _ = input_shape
        return (h, w, self.filters)

    def init_params(self, input_shape, rng, params):
        self._check_input(input_shape)
        channels = input_shape[2]
        fan_in = self.kernel * self.kernel * channels
        params.add(f"{self.name}.weight",
                   he_uniform(rng, (self.kernel, self.kernel, channels, self.filters), fan_in))
        params.add(f"{self.name}.bias", np.zeros(self.filters, dtype=np.float32))

    def forward(self, x, bound, mode, rng=None):
        out = ops.conv2d(x, bound[f"{self.name}.weight"])
        out = ops.add_bias(out, bound[f"{self.name}.bias"])
        return apply_activation(out, self.activation)

    def param_count(self, input_shape):
        self._check_input(input_shape)
        return self.kernel * self.kernel * input_shape[2] * self.filters + self.filters

    def describe(self):
        return {'kind': self.kind, 'name': self.name, 'filters': self.filters,
                'kernel': self.kernel, 'activation': self.activation}


class TransposeConv2D(Conv2D):
    """转置卷积层（'same' 填充，步长 1）"""

    kind = 'transpose-conv2d'

    def init_params(self, input_shape, rng, params):
        self._check_input(input_shape)
        channels = input_shape[2]
        fan_in = self.kernel * self.kernel * channels
        params.add(f"{self.name}.weight",
                   he_uniform(rng, (self.kernel, self.kernel, self.filters, channels), fan_in))
        params.add(f"{self.name}.bias", np.zeros(self.filters, dtype=np.float32))

    def forward(self, x, bound, mode, rng=None):
        out = ops.conv2d_transpose(x, bound[f"{self.name}.weight"])
        out = ops.add_bias(out, bound[f"{self.name}.bias"])
        return apply_activation(out, self.activation)


class Dense(Layer):
    """全连接层"""

    kind = 'dense'

    def __init__(self, name, units, activation='relu', zero_init=False):
        super().__init__(name)
        self.units = int(units)
        self.activation = activation
        self.zero_init = bool(zero_init)

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"{self.name}: 全连接层需要展平的输入，当前 {list(input_shape)}")
        return (self.units,)

    def init_params(self, input_shape, rng, params):
        self.output_shape(input_shape)
        fan_in = input_shape[0]
        if self.zero_init:
            weight = np.zeros((fan_in, self.units), dtype=np.float32)
        else:
            weight = he_uniform(rng, (fan_in, self.units), fan_in)
        params.add(f"{self.name}.weight", weight)
        params.add(f"{self.name}.bias", np.zeros(self.units, dtype=np.float32))

    def forward(self, x, bound, mode, rng=None):
        out = ops.matmul(x, bound[f"{self.name}.weight"])
        out = ops.add_bias(out, bound[f"{self.name}.bias"])
        return apply_activation(out, self.activation)

    def param_count(self, input_shape):
        self.output_shape(input_shape)
        return input_shape[0] * self.units + self.units

    def describe(self):
        desc = {'kind': self.kind, 'name': self.name, 'units': self.units,
                'activation': self.activation}
        if self.zero_init:
            desc['zero_init'] = True
        return desc


class MaxPool(Layer):
    """2×2 最大池化"""

    kind = 'maxpool'

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"{self.name}: 池化层需要 H×W×C 输入，当前 {list(input_shape)}")
        h, w, c = input_shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: 池化需要偶数空间尺寸，当前 {h}×{w}")
        return (h // 2, w // 2, c)

    def forward(self, x, bound, mode, rng=None):
        return ops.maxpool2x2(x)


class Upsample(Layer):
    """最近邻 2 倍上采样"""

    kind = 'upsample'

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"{self.name}: 上采样需要 H×W×C 输入，当前 {list(input_shape)}")
        h, w, c = input_shape
        return (h * 2, w * 2, c)

    def forward(self, x, bound, mode, rng=None):
        return ops.upsample2x(x)


class Dropout(Layer):
    """倒置 dropout：train 模式下保留的激活除以保留概率，eval 模式为恒等"""

    kind = 'dropout'

    def __init__(self, name, rate):
        super().__init__(name)
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"{name}: dropout 比例必须在 [0, 1) 内，当前 {rate}")
        self.rate = rate

    def forward(self, x, bound, mode, rng=None):
        check_mode(mode)
        if mode == 'eval' or self.rate == 0.0:
            return x
        if rng is None:
            raise DomainError(f"{self.name}: train 模式的 dropout 需要随机数流")
        keep = 1.0 - self.rate
        mask = (rng.uniform(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return ops.mul(x, mask)

    def describe(self):
        return {'kind': self.kind, 'name': self.name, 'rate': self.rate}


class BatchNorm(Layer):
    """批归一化，train 模式更新滑动均值/方差，eval 模式使用滑动统计量"""

    kind = 'batchnorm'

    def __init__(self, name, momentum=0.9, eps=1e-5):
        super().__init__(name)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def init_params(self, input_shape, rng, params):
        channels = input_shape[-1]
        params.add(f"{self.name}.gamma", np.ones(channels, dtype=np.float32))
        params.add(f"{self.name}.beta", np.zeros(channels, dtype=np.float32))
        params.add(f"{self.name}.running_mean", np.zeros(channels, dtype=np.float32), trainable=False)
        params.add(f"{self.name}.running_var", np.ones(channels, dtype=np.float32), trainable=False)

    def forward(self, x, bound, mode, rng=None):
        check_mode(mode)
        mean_name, var_name = f"{self.name}.running_mean", f"{self.name}.running_var"
        training = mode == 'train'
        out, batch_mean, batch_var = ops.batchnorm(
            x, bound[f"{self.name}.gamma"], bound[f"{self.name}.beta"],
            running_mean=bound.buffer(mean_name), running_var=bound.buffer(var_name),
            training=training, eps=self.eps)
        if training:
            m = self.momentum
            bound.update_buffer(mean_name, m * bound.buffer(mean_name) + (1 - m) * batch_mean)
            bound.update_buffer(var_name, m * bound.buffer(var_name) + (1 - m) * batch_var)
        return out

    def param_count(self, input_shape):
        return 2 * input_shape[-1]

    def describe(self):
        return {'kind': self.kind, 'name': self.name, 'momentum': self.momentum, 'eps': self.eps}


class Flatten(Layer):
    """展平为一维特征"""

    kind = 'flatten'

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, bound, mode, rng=None):
        return ops.reshape(x, (x.shape[0], -1))


class Reshape(Layer):
    """变形为指定的单样本形状"""

    kind = 'reshape'

    def __init__(self, name, target_shape):
        super().__init__(name)
        self.target_shape = tuple(int(s) for s in target_shape)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.target_shape)):
            raise ShapeError(f"{self.name}: 无法把 {list(input_shape)} 变形为 {list(self.target_shape)}")
        return self.target_shape

    def forward(self, x, bound, mode, rng=None):
        return ops.reshape(x, (x.shape[0],) + self.target_shape)

    def describe(self):
        return {'kind': self.kind, 'name': self.name, 'target_shape': list(self.target_shape)}


class Activation(Layer):
    """独立的激活层"""

    kind = 'activation'

    def __init__(self, name, fn='relu'):
        super().__init__(name)
        if fn not in ACTIVATIONS:
            raise ValueError(f"不支持的激活函数: {fn}")
        self.fn = fn

    def forward(self, x, bound, mode, rng=None):
        return apply_activation(x, self.fn)

    def describe(self):
        return {'kind': self.kind, 'name': self.name, 'fn': self.fn}


_LAYER_CLASSES = {cls.kind: cls for cls in (Conv2D, Dense, MaxPool, Dropout, BatchNorm, Upsample,
                                            TransposeConv2D, Flatten, Reshape, Activation)}


def build_layer(desc):
    """
    由描述字典构建层

    Args:
        desc: 形如 {'kind': 'conv2d', 'name': 'conv1', 'filters': 32}

    Returns:
        Layer: 层实例
    """
    desc = dict(desc)
    kind = desc.pop('kind', None)
    if kind not in _LAYER_CLASSES:
        raise ValueError(f"不支持的层类型: {kind}")
    return _LAYER_CLASSES[kind](**desc)


class LayerStack:
    """按顺序组合的层"""

    def __init__(self, descriptors):
        self.layers = [build_layer(d) for d in descriptors]

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def trace(self, input_shape):
        """
        形状追踪

        Returns:
            list[tuple]: (层名, 层类型, 输出形状, 参数个数) 列表
        """
        rows = []
        shape = tuple(input_shape)
        for layer in self.layers:
            count = layer.param_count(shape)
            shape = layer.output_shape(shape)
            rows.append((layer.name, layer.kind, shape, count))
        return rows

    def init_params(self, input_shape, rng, params):
        shape = tuple(input_shape)
        for index, layer in enumerate(self.layers):
            layer.init_params(shape, rng.split(index), params)
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, bound, mode, rng=None):
        check_mode(mode)
        for index, layer in enumerate(self.layers):
            layer_rng = rng.split(index) if rng is not None else None
            x = layer.forward(x, bound, mode, layer_rng)
        return x

    def describe(self):
        return [layer.describe() for layer in self.layers]
