"""
白盒梯度攻击模块
包含 FGSM 与 I-FGSM 的实现

攻击只读取分类器参数，从不读取防御状态。
"""

import hashlib
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from common.errors import ShapeError, DomainError, ConfigError, FormatError
from common.parallel import ordered_map
from nnlayers import cross_entropy
from tensorcore import Tensor, GradTape, ops

logger = logging.getLogger(__name__)

ATTACK_KINDS = ('fgsm', 'ifgsm')

# 各数据集的 ε 预设范围（归一化像素单位）
EPSILON_RANGES = {
    'mnist': (0.0, 0.12),
    'cifar10': (0.0, 0.1),
    'synthetic-hires': (0.005, 0.09),
}


@dataclass
class AttackConfig:
    """攻击配置"""

    kind: str = 'fgsm'
    epsilon: float = 0.0
    iterations: int = 1
    clip_lo: float = 0.0
    clip_hi: float = 1.0
    chunk_size: int = 64

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"不支持的攻击: {self.kind}")
        if self.epsilon < 0:
            raise DomainError(f"ε 必须 ≥ 0，当前 {self.epsilon}")
        if self.kind == 'ifgsm' and self.iterations < 1:
            raise DomainError(f"I-FGSM 的迭代次数必须 ≥ 1，当前 {self.iterations}")
        if self.clip_lo >= self.clip_hi:
            raise DomainError(f"非法的像素裁剪区间 [{self.clip_lo}, {self.clip_hi}]")
        if self.chunk_size < 1:
            raise DomainError(f"chunk_size 必须 ≥ 1，当前 {self.chunk_size}")

    def with_epsilon(self, epsilon):
        data = asdict(self)
        data['epsilon'] = float(epsilon)
        return AttackConfig(**data)

    def to_dict(self):
        return asdict(self)


def check_epsilon_range(epsilon, dataset_tag):
    """
    ε 超出数据集预设范围时记录警告

    Returns:
        bool: ε 是否在范围内（未知数据集视为在范围内）
    """
    if dataset_tag not in EPSILON_RANGES:
        return True
    lo, hi = EPSILON_RANGES[dataset_tag]
    if lo <= epsilon <= hi:
        return True
    logger.warning(f"ε={epsilon} 超出 {dataset_tag} 的预设范围 [{lo}, {hi}]")
    return False


def l2_ratios(originals, perturbed, strict=True):
    """
    逐图相对 L2 差 ‖xᵢ − x̂ᵢ‖₂ / ‖xᵢ‖₂（64 位累加）

    Args:
        originals: (N, ...) 原图
        perturbed: (N, ...) 扰动后的图像
        strict: 为 False 时零范数原图的比值记为 nan

    Returns:
        np.ndarray: (N,) float64

    Raises:
        ShapeError: 数量或形状不一致
        DomainError: strict 且存在零范数原图
    """
    originals = np.asarray(originals)
    perturbed = np.asarray(perturbed)
    if originals.shape != perturbed.shape:
        raise ShapeError(f"原图形状 {list(originals.shape)} 与扰动图形状 {list(perturbed.shape)} 不一致")
    n = originals.shape[0]
    x = originals.reshape(n, -1).astype(np.float64)
    diff = x - perturbed.reshape(n, -1).astype(np.float64)
    norms = np.sqrt(np.sum(x * x, axis=1))
    zero = np.flatnonzero(norms == 0)
    if zero.size and strict:
        raise DomainError(f"原图 #{int(zero[0])} 的 L2 范数为 0，相对差无定义")
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(norms > 0, np.sqrt(np.sum(diff * diff, axis=1)) / norms, np.nan)


@dataclass
class AdversarialBatch:
    """对抗样本批次"""

    originals: np.ndarray
    perturbed: np.ndarray
    labels: np.ndarray
    l2_ratios: np.ndarray
    failures: list = field(default_factory=list)

    def __len__(self):
        return int(self.labels.shape[0])

    def linf(self):
        """逐图 ‖x̂ − x‖∞"""
        if len(self) == 0:
            return np.zeros(0)
        return np.abs(self.perturbed - self.originals).reshape(len(self), -1).max(axis=1)

    def fingerprint(self):
        """对抗图像的 SHA-256 指纹，用于确认多个防御列共享同一批次"""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.perturbed, dtype=np.float32).tobytes())
        digest.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return digest.hexdigest()

    def save(self, path):
        """保存为 .npz"""
        failed = np.array([f['index'] for f in self.failures], dtype=np.int64)
        reasons = np.array([f['reason'] for f in self.failures], dtype=str)
        np.savez(path, originals=self.originals, perturbed=self.perturbed, labels=self.labels,
                 l2_ratios=self.l2_ratios, failed=failed, reasons=reasons)
        logger.info(f"已保存 {len(self)} 个对抗样本到 {path}")

    @classmethod
    def load(cls, path):
        try:
            with np.load(path) as data:
                failures = [{'index': int(i), 'reason': str(r)}
                            for i, r in zip(data['failed'], data['reasons'])]
                return cls(data['originals'], data['perturbed'], data['labels'],
                           data['l2_ratios'], failures)
        except (OSError, KeyError, ValueError) as e:
            raise FormatError(f"加载对抗样本文件失败 {path}: {e}")


class GradientAttacker:
    """白盒梯度攻击器，支持 FGSM 与 I-FGSM"""

    @staticmethod
    def input_gradient(classifier, x, y):
        """
        ∇ₓ ℓ(f(x; θ), e_y)，eval 模式

        批内交叉熵求和，因此每行梯度等于该图像自身损失的梯度。

        Args:
            classifier: Classifier
            x: (N, H, W, C) numpy 图像
            y: (N,) 真实标签

        Returns:
            tuple: (梯度数组, 逐图是否有限的布尔数组)
        """
        onehot = ops.one_hot(y, classifier.num_classes)
        with GradTape() as tape:
            x_tensor = Tensor._wrap(np.array(x, dtype=np.float32), requires_grad=True)
            loss = cross_entropy(classifier.forward(x_tensor, 'eval'), onehot, reduction='sum')
        grad = tape.backward(loss).of(x_tensor).numpy()
        finite = np.isfinite(grad.reshape(grad.shape[0], -1)).all(axis=1)
        return grad, finite

    @staticmethod
    def fgsm(classifier, x, y, epsilon, clip=(0.0, 1.0)):
        """
        x̂ = clip(x + ε · sign(∇ₓℓ))，恰好一次梯度计算

        Args:
            classifier: Classifier
            x: (N, H, W, C) 图像
            y: (N,) 标签
            epsilon: 每像素预算
            clip: 像素范围

        Returns:
            tuple: (x̂, 梯度非有限而被跳过的下标列表)
        """
        return GradientAttacker.ifgsm(classifier, x, y, epsilon, 1, clip)

    @staticmethod
    def ifgsm(classifier, x, y, epsilon, iterations, clip=(0.0, 1.0)):
        """
        x_{m+1} = clip(x_m + (ε/M) · sign(∇ₓℓ(f(x_m)))), 返回 x_M

        Args:
            classifier: Classifier
            x: (N, H, W, C) 图像
            y: (N,) 标签
            epsilon: 总预算 ε
            iterations: 迭代次数 M（≥ 1）
            clip: 像素范围，每次迭代都裁剪

        Returns:
            tuple: (x̂, 被跳过的下标列表)；被跳过的图像保持原样
        """
        if iterations < 1:
            raise DomainError(f"迭代次数必须 ≥ 1，当前 {iterations}")
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"图像数 {x.shape[0]} 与标签数 {y.shape[0]} 不一致")
        lo, hi = clip
        step = np.float32(epsilon / iterations)
        current = x.copy()
        ok = np.ones(x.shape[0], dtype=bool)

        for _ in range(iterations):
            grad, finite = GradientAttacker.input_gradient(classifier, current, y)
            ok &= finite
            stepped = np.clip(current + step * np.sign(grad), lo, hi).astype(np.float32)
            current = np.where(ok.reshape((-1,) + (1,) * (x.ndim - 1)), stepped, x)

        return current, [int(i) for i in np.flatnonzero(~ok)]

    @classmethod
    def run_attack(cls, kind, classifier, x, y, epsilon, iterations=1, clip=(0.0, 1.0)):
        """
        统一的攻击接口

        Args:
            kind: 攻击名称 ('fgsm' 或 'ifgsm')

        Returns:
            tuple: (x̂, 被跳过的下标列表)
        """
        if kind.lower() == 'fgsm':
            return cls.fgsm(classifier, x, y, epsilon, clip)
        elif kind.lower() in ('ifgsm', 'i-fgsm'):
            return cls.ifgsm(classifier, x, y, epsilon, iterations, clip)
        else:
            raise ValueError(f"不支持的攻击: {kind}")


def fgsm(classifier, x, y, epsilon):
    return GradientAttacker.fgsm(classifier, x, y, epsilon)[0]


def ifgsm(classifier, x, y, epsilon, iterations):
    return GradientAttacker.ifgsm(classifier, x, y, epsilon, iterations)[0]


def attack_batch(config, classifier, images, labels, parallelism=1, dataset_tag=None):
    """
    对数据切片逐图攻击

    切片按固定的 config.chunk_size 分块，并行度只影响块的调度，
    因此任意并行度下输出逐位一致。

    Args:
        config: AttackConfig
        classifier: Classifier（只读共享）
        images: (N, H, W, C)
        labels: (N,)
        parallelism: 线程数
        dataset_tag: 用于 ε 范围检查的数据集标签

    Returns:
        AdversarialBatch
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ShapeError(f"图像数 {images.shape[0]} 与标签数 {labels.shape[0]} 不一致")
    if dataset_tag is not None:
        check_epsilon_range(config.epsilon, dataset_tag)
    n = images.shape[0]
    if n == 0:
        return AdversarialBatch(images.copy(), images.copy(), labels.copy(), np.zeros(0))

    chunks = [(start, min(start + config.chunk_size, n)) for start in range(0, n, config.chunk_size)]

    def attack_chunk(bounds):
        start, stop = bounds
        try:
            perturbed, skipped = GradientAttacker.run_attack(
                config.kind, classifier, images[start:stop], labels[start:stop],
                config.epsilon, config.iterations, (config.clip_lo, config.clip_hi))
            return perturbed, [{'index': start + i, 'reason': '梯度非有限'} for i in skipped]
        except (ArithmeticError, FloatingPointError) as e:
            return images[start:stop].copy(), [{'index': start + i, 'reason': str(e)}
                                                for i in range(stop - start)]

    results = ordered_map(attack_chunk, chunks, parallelism)
    perturbed = np.concatenate([r[0] for r in results], axis=0)
    failures = [f for r in results for f in r[1]]
    if failures:
        logger.warning(f"{config.kind} ε={config.epsilon}: {len(failures)} 张图像攻击失败，保持原图")
    return AdversarialBatch(images.copy(), perturbed, labels.copy(),
                            l2_ratios(images, perturbed, strict=False), failures)
