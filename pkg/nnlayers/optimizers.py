"""
优化器（SGD 与 Adam）

参数在训练线程中原地更新；SGD 的速度项与 Adam 的一阶/二阶矩按参数名保存，与参数同形状。
SGD 更新 v ← μ·v + g，θ ← θ − lr·v（μ = 0 时为普通 SGD）。
"""

from dataclasses import dataclass, asdict

import numpy as np

from common.errors import ShapeError, DomainError

OPTIMIZER_KINDS = ('sgd', 'adam')


@dataclass
class OptimizerConfig:
    """优化器配置"""

    kind: str = 'adam'
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"不支持的优化器: {self.kind}")
        if self.lr <= 0:
            raise DomainError(f"学习率必须为正，当前 {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"动量必须在 [0, 1) 内，当前 {self.momentum}")

    def to_dict(self):
        return asdict(self)


class Optimizer:
    """带状态的优化器"""

    def __init__(self, config=None):
        self.config = config or OptimizerConfig()
        self.step_count = 0
        self.m = {}
        self.v = {}

    @property
    def kind(self):
        return self.config.kind

    def _moments(self, name, param):
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        return self.m[name], self.v[name]

    def step(self, params, grads):
        """
        执行一次更新

        Args:
            params: ModelParams
            grads: {参数名: 梯度数组或张量}；缺失的参数视为零梯度

        Returns:
            ModelParams: 原地更新后的同一参数集
        """
        cfg = self.config
        self.step_count += 1
        t = self.step_count

        for name in params.trainable_names():
            param = params[name]
            grad = grads.get(name)
            if grad is None:
                grad = np.zeros_like(param)
            grad = np.asarray(getattr(grad, 'data', grad), dtype=param.dtype)
            if grad.shape != param.shape:
                raise ShapeError(f"参数 {name} 形状 {list(param.shape)} 与梯度 {list(grad.shape)} 不匹配")

            if cfg.kind == 'sgd':
                if cfg.momentum:
                    velocity, _ = self._moments(name, param)
                    velocity *= cfg.momentum
                    velocity += grad
                    grad = velocity
                param -= param.dtype.type(cfg.lr) * grad
                continue

            m, v = self._moments(name, param)
            m *= cfg.beta1
            m += (1 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            param -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(param.dtype)

        return params


def optimizer_step(params, grads, optimizer):
    """对 params 执行一次 optimizer 更新"""
    return optimizer.step(params, grads)
