"""
可复现随机数流

基于 numpy 的计数器型 Philox 位生成器；(seed, stream-id) 完全决定输出序列。
"""

import numpy as np

from common.errors import DomainError
from .tensor import Tensor

DEFAULT_NOISE_CLIP = (-5.0, 5.0)


class Rng:
    """带流划分的随机数生成器"""

    def __init__(self, seed, stream=()):
        self.seed = int(seed) % (1 << 64)
        self.stream = tuple(int(s) for s in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def split(self, stream_id):
        """
        派生独立子流

        Args:
            stream_id: 子流编号

        Returns:
            Rng: 由 (seed, stream + (stream_id,)) 决定的新生成器
        """
        return Rng(self.seed, self.stream + (int(stream_id),))

    def normal(self, shape):
        """标准正态样本（float32）"""
        return self.generator.standard_normal(size=tuple(shape), dtype=np.float32)

    def uniform(self, shape):
        """[0, 1) 均匀样本（float32）"""
        return self.generator.random(size=tuple(shape), dtype=np.float32)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={list(self.stream)})"


def gaussian(rng, shape, clip_lo=DEFAULT_NOISE_CLIP[0], clip_hi=DEFAULT_NOISE_CLIP[1]):
    """
    生成裁剪后的标准正态噪声张量

    Args:
        rng: Rng 实例
        shape: 输出形状
        clip_lo, clip_hi: 裁剪区间，None 表示不裁剪

    Returns:
        Tensor: 每个元素被裁剪到 [clip_lo, clip_hi] 的 i.i.d. 标准正态样本

    Raises:
        DomainError: 裁剪区间非法
    """
    samples = rng.normal(shape)
    if clip_lo is None and clip_hi is None:
        return Tensor(samples)
    if clip_lo is None or clip_hi is None or clip_lo > clip_hi:
        raise DomainError(f"非法的噪声裁剪区间 [{clip_lo}, {clip_hi}]")
    return Tensor(np.clip(samples, clip_lo, clip_hi))
