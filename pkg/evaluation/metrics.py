"""
评估指标
"""

import logging

import numpy as np

from common.errors import ShapeError
from algorithms.attacks import l2_ratios
from algorithms.defenses import apply_chain
from tensorcore import Rng

logger = logging.getLogger(__name__)


def l2_relative_diff(originals, perturbed):
    """
    平均相对 L2 差 (1/N) Σ ‖xᵢ − x̂ᵢ‖₂ / ‖xᵢ‖₂

    是逐图比值的平均，而不是范数平均之比。

    Args:
        originals: (N, ...) 原图
        perturbed: (N, ...) 扰动后的图像

    Returns:
        float: 平均相对差；N = 0 时为 nan
    """
    ratios = l2_ratios(originals, perturbed)
    if ratios.size == 0:
        return float('nan')
    return float(np.sum(ratios) / ratios.size)


def top1_accuracy(classifier, images, labels, chain=None, rng=None, parallelism=1):
    """
    Top-1 准确率：argmax f(T(x); θ) = y 的比例

    Args:
        classifier: Classifier
        images: (N, H, W, C)
        labels: (N,)
        chain: 可选的 DefenseChain，None 表示无防御
        rng: 防御链的随机数流（缺省为 Rng(0)）
        parallelism: 防御链的并行度

    Returns:
        float: 准确率；N = 0 时为 nan
    """
    labels = np.asarray(labels, dtype=np.int64)
    images = np.asarray(images, dtype=np.float32)
    if images.shape[0] != labels.shape[0]:
        raise ShapeError(f"图像数 {images.shape[0]} 与标签数 {labels.shape[0]} 不一致")
    if labels.shape[0] == 0:
        return float('nan')
    if chain is not None:
        images = apply_chain(chain, images, rng if rng is not None else Rng(0), parallelism)
    predictions = classifier.predict(images)
    return float(np.mean(predictions == labels))


def psnr(reference, test, peak=1.0):
    """峰值信噪比（dB），两图相同时为 inf"""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ShapeError(f"PSNR: 形状不一致 {list(reference.shape)} vs {list(test.shape)}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0:
        return float('inf')
    return float(10.0 * np.log10(peak * peak / mse))
