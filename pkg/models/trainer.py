"""
训练循环

分类器与 VAE 的单写者训练；给定种子时，参数与报告逐位可复现。
"""

import logging
import time

import numpy as np
from tqdm import tqdm

from common.errors import ShapeError, DomainError
from nnlayers import OptimizerConfig, Optimizer, optimizer_step, cross_entropy
from tensorcore import GradTape, Rng, no_grad, ops
from .classifier import Classifier, init_classifier
from .specs import TrainReport
from .vae import Vae, init_vae

logger = logging.getLogger(__name__)

EVAL_SIZE = 1000


def _gradients_by_name(bound, grads):
    """把 uid 索引的梯度映射为参数名索引"""
    return {name: grads[tensor.uid] for name, tensor in bound.trainable().items()
            if tensor.uid in grads}


def _batches(count, batch_size):
    return [(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]


# =============================================================================
# 分类器
# =============================================================================

def classifier_eval_loss(classifier, images, labels, batch_size=256):
    """eval 模式下的平均交叉熵（64 位累加）"""
    total = 0.0
    onehot = ops.one_hot(labels, classifier.num_classes)
    bound = classifier.params.bind()
    with no_grad():
        for start, stop in _batches(images.shape[0], batch_size):
            logits = classifier.forward(images[start:stop], 'eval', bound=bound)
            total += cross_entropy(logits, onehot[start:stop], reduction='sum').item()
    return total / images.shape[0]


def train_classifier(spec, dataset, optimizer_config=None, epochs=1, seed=0,
                     batch_size=64, params=None, progress=True):
    """
    训练分类器

    Args:
        spec: ClassifierSpec
        dataset: 带 images (N,H,W,C) 与 labels (N,) 的数据集
        optimizer_config: OptimizerConfig，缺省为 Adam(lr=1e-3)
        epochs: 训练轮数（≥ 1）
        seed: 随机种子（初始化、打乱顺序与 dropout 各用独立子流）
        batch_size: 批大小
        params: 可选的初始参数，缺省时按种子初始化
        progress: 是否显示进度条

    Returns:
        tuple: (ModelParams, TrainReport)

    Raises:
        DomainError: 数据集为空或 epochs < 1
    """
    images = np.asarray(dataset.images, dtype=np.float32)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise DomainError("训练集为空")
    if epochs < 1:
        raise DomainError(f"epochs 必须 ≥ 1，当前 {epochs}")
    if images.shape[1:] != spec.input_shape:
        raise ShapeError(f"训练图像形状 {list(images.shape[1:])} 与模型输入 {list(spec.input_shape)} 不符")

    root = Rng(seed)
    params = params.copy() if params is not None else init_classifier(spec, seed)
    classifier = Classifier(spec, params)
    optimizer = Optimizer(optimizer_config or OptimizerConfig())
    onehot = ops.one_hot(labels, spec.num_classes)
    eval_images, eval_labels = images[:EVAL_SIZE], labels[:EVAL_SIZE]

    report = TrainReport(model=spec.name, seed=int(seed))
    report.initial_loss = classifier_eval_loss(classifier, eval_images, eval_labels)
    logger.info(f"开始训练 {spec.name}: {images.shape[0]} 张图像, {epochs} 个 epoch, "
                f"初始损失 {report.initial_loss:.4f}")
    started = time.perf_counter()

    for epoch in range(epochs):
        epoch_start = time.perf_counter()
        order = root.split(1).split(epoch).permutation(images.shape[0])
        dropout_rng = root.split(2).split(epoch)
        total = 0.0
        batches = _batches(images.shape[0], batch_size)
        for index, (start, stop) in enumerate(tqdm(batches, desc=f"epoch {epoch + 1}/{epochs}",
                                                   leave=False, disable=not progress)):
            idx = order[start:stop]
            bound = params.bind(trainable=True)
            with GradTape() as tape:
                logits = classifier.forward(images[idx], 'train', dropout_rng.split(index), bound)
                loss = cross_entropy(logits, onehot[idx])
            total += loss.item() * (stop - start)
            grads = tape.backward(loss)
            optimizer_step(params, _gradients_by_name(bound, grads), optimizer)

        report.classifier_loss.append(total / images.shape[0])
        report.eval_loss.append(classifier_eval_loss(classifier, eval_images, eval_labels))
        report.epoch_seconds.append(time.perf_counter() - epoch_start)
        logger.info(f"{spec.name} epoch {epoch + 1}/{epochs}: 训练损失 {report.classifier_loss[-1]:.4f}, "
                    f"评估损失 {report.eval_loss[-1]:.4f}, 耗时 {report.epoch_seconds[-1]:.1f}s")

    report.wall_time = time.perf_counter() - started
    report.final_metric = float(np.mean(classifier.predict(eval_images) == eval_labels))
    logger.info(f"{spec.name} 训练完成: 训练集前 {eval_images.shape[0]} 张准确率 {report.final_metric:.4f}")
    return params, report


# =============================================================================
# VAE
# =============================================================================

def sample_patches(images, patch_size, count, rng):
    """
    从图像中随机裁剪 patch_size×patch_size 的图像块

    Args:
        images: (N, H, W, C)
        patch_size: 块边长
        count: 块数量
        rng: Rng

    Returns:
        np.ndarray: (count, p, p, C)

    Raises:
        ShapeError: 块大小超出源图像
    """
    n, h, w, _ = images.shape
    if patch_size > h or patch_size > w:
        raise ShapeError(f"图像块大小 {patch_size} 超出源图像 {h}×{w}")
    which = rng.integers(0, n, size=count)
    rows = rng.integers(0, h - patch_size + 1, size=count)
    cols = rng.integers(0, w - patch_size + 1, size=count)
    return np.stack([images[k, r:r + patch_size, c:c + patch_size, :]
                     for k, r, c in zip(which, rows, cols)]).astype(np.float32)


class TrainingSource:
    """VAE 训练数据来源：整图或随机图像块"""

    def __init__(self, images, input_shape, patches_per_epoch=None):
        self.images = np.asarray(images, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DomainError("VAE 训练集为空")
        if self.images.shape[3] != input_shape[2]:
            raise ShapeError(f"通道数 {self.images.shape[3]} 与 VAE 输入 {list(input_shape)} 不符")
        self.patch_size = input_shape[0]
        self.whole = self.images.shape[1:] == tuple(input_shape)
        if not self.whole and (self.patch_size > self.images.shape[1] or self.patch_size > self.images.shape[2]):
            raise ShapeError(f"图像块大小 {self.patch_size} 超出源图像 "
                             f"{self.images.shape[1]}×{self.images.shape[2]}")
        self.count = self.images.shape[0] if self.whole else (patches_per_epoch or self.images.shape[0])

    def epoch(self, rng):
        """一个 epoch 的训练样本（已打乱）"""
        if self.whole:
            return self.images[rng.permutation(self.count)]
        return sample_patches(self.images, self.patch_size, self.count, rng)

    def eval_batch(self, rng, size=256):
        if self.whole:
            return self.images[:size]
        return sample_patches(self.images, self.patch_size, min(size, self.count), rng)


def early_stop_reached(recon_history, tau, window):
    """
    重建项在 window 个 epoch 内的相对变化是否小于 τ

    Args:
        recon_history: 每个 epoch 的重建项
        tau: 阈值
        window: 比较窗口（epoch 数）

    Returns:
        bool
    """
    if tau is None or len(recon_history) <= window:
        return False
    previous, current = recon_history[-1 - window], recon_history[-1]
    change = abs(current - previous) / max(abs(previous), 1e-12)
    return change < tau


def vae_eval_loss(vae, batch, rng):
    with no_grad():
        _, components = vae.loss(batch, rng, mode='eval')
    return components


def train_vae(spec, images, optimizer_config=None, epochs=1, seed=0, batch_size=32,
              patches_per_epoch=None, early_stop_tau=None, early_stop_window=1,
              params=None, progress=True):
    """
    训练 VAE

    Args:
        spec: VaeSpec
        images: (N, H, W, C) 训练图像；空间尺寸大于 VAE 输入时按随机图像块训练
        optimizer_config: OptimizerConfig，缺省为 Adam(lr=1e-3)
        epochs: 最大训练轮数
        seed: 随机种子
        batch_size: 批大小
        patches_per_epoch: 图像块模式下每个 epoch 采样的块数（缺省为图像数）
        early_stop_tau: 重建项相对变化阈值 τ，None 表示不提前停止
        early_stop_window: 比较窗口
        params: 可选的初始参数
        progress: 是否显示进度条

    Returns:
        tuple: (ModelParams, TrainReport)
    """
    if epochs < 1:
        raise DomainError(f"epochs 必须 ≥ 1，当前 {epochs}")
    source = TrainingSource(getattr(images, 'images', images), spec.input_shape, patches_per_epoch)

    root = Rng(seed)
    params = params.copy() if params is not None else init_vae(spec, seed)
    vae = Vae(spec, params)
    optimizer = Optimizer(optimizer_config or OptimizerConfig())
    eval_batch = source.eval_batch(root.split(3))

    report = TrainReport(model=spec.name, seed=int(seed))
    report.initial_loss = vae_eval_loss(vae, eval_batch, root.split(4))['loss']
    mode_text = '整图' if source.whole else f"{source.patch_size}×{source.patch_size} 图像块"
    logger.info(f"开始训练 {spec.name}（{mode_text}）: 每个 epoch {source.count} 个样本, "
                f"β={spec.beta}, 初始损失 {report.initial_loss:.4f}")
    started = time.perf_counter()

    for epoch in range(epochs):
        epoch_start = time.perf_counter()
        samples = source.epoch(root.split(1).split(epoch))
        noise_rng = root.split(2).split(epoch)
        recon_total = kl_total = 0.0
        batches = _batches(samples.shape[0], batch_size)
        for index, (start, stop) in enumerate(tqdm(batches, desc=f"epoch {epoch + 1}/{epochs}",
                                                   leave=False, disable=not progress)):
            bound = params.bind(trainable=True)
            with GradTape() as tape:
                loss, components = vae.loss(samples[start:stop], noise_rng.split(index), 'train', bound)
            recon_total += components['recon'] * (stop - start)
            kl_total += components['kl'] * (stop - start)
            grads = tape.backward(loss)
            optimizer_step(params, _gradients_by_name(bound, grads), optimizer)

        report.recon_loss.append(recon_total / samples.shape[0])
        report.kl_loss.append(kl_total / samples.shape[0])
        report.eval_loss.append(vae_eval_loss(vae, eval_batch, root.split(4))['loss'])
        report.epoch_seconds.append(time.perf_counter() - epoch_start)
        logger.info(f"{spec.name} epoch {epoch + 1}/{epochs}: 重建 {report.recon_loss[-1]:.4f}, "
                    f"KL {report.kl_loss[-1]:.4f}, 评估损失 {report.eval_loss[-1]:.4f}")

        if early_stop_reached(report.recon_loss, early_stop_tau, early_stop_window):
            report.stopped_early = True
            logger.info(f"{spec.name}: 重建项变化小于 τ={early_stop_tau}，在第 {epoch + 1} 个 epoch 提前停止")
            break

    report.wall_time = time.perf_counter() - started
    report.final_metric = report.eval_loss[-1]
    return params, report
