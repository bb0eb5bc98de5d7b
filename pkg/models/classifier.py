"""
CNN 分类器

f(x; θ)：把 [0,1] 像素的 NHWC 图像批映射为 logits，预测标签为 argmax。
"""

import numpy as np

from common.errors import ShapeError
from nnlayers import ModelParams
from tensorcore import Tensor, Rng, no_grad

PREDICT_BATCH = 256


def init_classifier(spec, seed):
    """
    按规格初始化参数（He-uniform 权重，零偏置）

    Args:
        spec: ClassifierSpec
        seed: 随机种子

    Returns:
        ModelParams: 参数集 θ
    """
    params = ModelParams()
    spec.stack().init_params(spec.input_shape, Rng(seed, (0,)), params)
    return params


def as_batch(x, input_shape, what='输入'):
    """把 numpy 数组或张量转为张量，并校验单样本形状"""
    tensor = x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float32))
    if tensor.ndim != len(input_shape) + 1 or tuple(tensor.shape[1:]) != tuple(input_shape):
        raise ShapeError(f"{what}形状 {list(tensor.shape)} 与模型输入 [N, {', '.join(map(str, input_shape))}] 不符")
    return tensor


class Classifier:
    """绑定了参数的分类器"""

    def __init__(self, spec, params):
        self.spec = spec
        self.params = params
        self.stack = spec.stack()

    @property
    def num_classes(self):
        return self.spec.num_classes

    def forward(self, x, mode='eval', rng=None, bound=None):
        """
        前向计算

        Args:
            x: (N, H, W, C) 图像批
            mode: 'train' 或 'eval'
            rng: train 模式下 dropout 使用的随机数流
            bound: 已绑定的参数（训练时传入可求导的绑定）

        Returns:
            Tensor: (N, m) logits
        """
        x = as_batch(x, self.spec.input_shape)
        bound = bound if bound is not None else self.params.bind()
        return self.stack.forward(x, bound, mode, rng)

    def logits(self, images, batch_size=PREDICT_BATCH):
        """eval 模式的 logits（numpy），分批计算"""
        images = np.asarray(images, dtype=np.float32)
        if images.shape[0] == 0:
            return np.zeros((0, self.num_classes), dtype=np.float32)
        outputs = []
        bound = self.params.bind()
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                outputs.append(self.forward(images[start:start + batch_size], 'eval', bound=bound).numpy())
        return np.concatenate(outputs, axis=0)

    def predict(self, images, batch_size=PREDICT_BATCH):
        """预测标签 ŷ = argmax f(x; θ)"""
        return self.logits(images, batch_size).argmax(axis=1)

    @classmethod
    def create(cls, spec, seed):
        return cls(spec, init_classifier(spec, seed))


def classifier_forward(spec, params, x, mode='eval', rng=None):
    """对 (spec, params) 执行一次前向，返回 logits 张量"""
    return Classifier(spec, params).forward(x, mode, rng)
