"""
模型规格与训练报告

ClassifierSpec / VaeSpec 是可 JSON 序列化的架构描述，构造时即校验形状链。
"""

import json
from dataclasses import dataclass, field, asdict

from common.errors import ShapeError, DomainError, ConfigError
from nnlayers import LayerStack

CLASSIFIER_DATASETS = ('mnist', 'cifar10', 'synthetic-hires')
RECON_LOSSES = ('mse', 'bce')


@dataclass
class ClassifierSpec:
    """CNN 分类器 f(x; θ) 的架构描述"""

    name: str
    dataset: str
    input_shape: tuple
    layers: list
    num_classes: int

    kind = 'classifier'

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = [dict(d) for d in self.layers]
        if self.dataset not in CLASSIFIER_DATASETS:
            raise ConfigError(f"不支持的数据集标签: {self.dataset}")
        if self.num_classes < 2:
            raise DomainError(f"类别数必须 ≥ 2，当前 {self.num_classes}")
        output = self.stack().output_shape(self.input_shape)
        if output != (self.num_classes,):
            raise ShapeError(f"{self.name}: 分类器输出形状 {list(output)} 与类别数 {self.num_classes} 不符")

    def stack(self):
        return LayerStack(self.layers)

    def to_dict(self):
        data = asdict(self)
        data['kind'] = self.kind
        data['input_shape'] = list(self.input_shape)
        return data


@dataclass
class VaeSpec:
    """
    VAE 的架构描述

    编码器最后一层全连接宽度为 2·d（前半为均值，后半为对数方差），
    解码器把长度 d 的隐向量映射回输入形状。
    """

    name: str
    input_shape: tuple
    encoder: list
    latent_dim: int
    decoder: list
    beta: float = 1.0
    noise_clip: tuple = (-5.0, 5.0)
    recon_loss: str = 'mse'
    capacity: float = 0.0

    kind = 'vae'

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.encoder = [dict(d) for d in self.encoder]
        self.decoder = [dict(d) for d in self.decoder]
        self.noise_clip = tuple(float(v) for v in self.noise_clip)
        if self.recon_loss not in RECON_LOSSES:
            raise ConfigError(f"不支持的重建损失: {self.recon_loss}")
        if self.beta < 0:
            raise DomainError(f"β 必须 ≥ 0，当前 {self.beta}")
        if self.capacity < 0:
            raise DomainError(f"容量 C 必须 ≥ 0，当前 {self.capacity}")
        lo, hi = self.noise_clip
        if lo > hi:
            raise DomainError(f"非法的噪声裁剪区间 [{lo}, {hi}]")

        encoded = self.encoder_stack().output_shape(self.input_shape)
        if encoded != (2 * self.latent_dim,):
            raise ShapeError(f"{self.name}: 编码器输出 {list(encoded)} 应为 2·d = {2 * self.latent_dim}")
        decoded = self.decoder_stack().output_shape((self.latent_dim,))
        if decoded != self.input_shape:
            raise ShapeError(f"{self.name}: 解码器输出 {list(decoded)} 与输入形状 {list(self.input_shape)} 不符")

    def encoder_stack(self):
        return LayerStack(self.encoder)

    def decoder_stack(self):
        return LayerStack(self.decoder)

    @property
    def patch_size(self):
        """输入的空间边长（正方形输入）"""
        return self.input_shape[0]

    def to_dict(self):
        data = asdict(self)
        data['kind'] = self.kind
        data['input_shape'] = list(self.input_shape)
        data['noise_clip'] = list(self.noise_clip)
        return data


def spec_from_dict(data):
    """
    由字典恢复模型规格

    Args:
        data: to_dict() 的输出

    Returns:
        ClassifierSpec | VaeSpec

    Raises:
        ConfigError: 未知的模型类型或缺少字段
    """
    data = dict(data)
    kind = data.pop('kind', None)
    try:
        if kind == ClassifierSpec.kind:
            return ClassifierSpec(**data)
        if kind == VaeSpec.kind:
            return VaeSpec(**data)
    except TypeError as e:
        raise ConfigError(f"模型规格字段错误: {e}")
    raise ConfigError(f"未知的模型类型: {kind}")


def describe(spec):
    """
    形状追踪表

    Args:
        spec: ClassifierSpec 或 VaeSpec

    Returns:
        list[dict]: 每层一行 {'part', 'name', 'kind', 'shape', 'params'}
    """
    if spec.kind == ClassifierSpec.kind:
        parts = [('classifier', spec.stack(), spec.input_shape)]
    else:
        parts = [('encoder', spec.encoder_stack(), spec.input_shape),
                 ('decoder', spec.decoder_stack(), (spec.latent_dim,))]
    rows = []
    for part, stack, input_shape in parts:
        for name, kind, shape, count in stack.trace(input_shape):
            rows.append({'part': part, 'name': name, 'kind': kind,
                         'shape': list(shape), 'params': count})
    return rows


@dataclass
class TrainReport:
    """训练报告，损失数组每个 epoch 一项"""

    model: str
    seed: int
    initial_loss: float = float('nan')
    recon_loss: list = field(default_factory=list)
    kl_loss: list = field(default_factory=list)
    classifier_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    wall_time: float = 0.0
    final_metric: float = float('nan')
    stopped_early: bool = False

    @property
    def epochs(self):
        return len(self.epoch_seconds)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)
