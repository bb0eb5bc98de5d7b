"""
测试公用夹具
"""

import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from data import IdxLoader, synth_dataset  # noqa: E402
from models import (ClassifierSpec, VaeSpec, Classifier, Vae, get_preset, train_classifier,  # noqa: E402
                    train_vae)
from nnlayers import OptimizerConfig  # noqa: E402
from tensorcore import Tensor  # noqa: E402


def tiny_classifier_spec(activation='relu', num_classes=3):
    """8×8×1 → 4×4×4 → 3 的小型分类器"""
    layers = [
        {'kind': 'conv2d', 'name': 'conv1', 'filters': 4, 'kernel': 3, 'activation': activation},
        {'kind': 'maxpool', 'name': 'pool1'},
        {'kind': 'flatten', 'name': 'flatten'},
        {'kind': 'dense', 'name': 'logits', 'units': num_classes, 'activation': 'linear'},
    ]
    return ClassifierSpec('tiny-cnn', 'mnist', (8, 8, 1), layers, num_classes)


def tiny_vae_spec(activation='relu', recon_loss='mse', beta=1.0, size=8, channels=1, latent_dim=4):
    """size×size×C → 2d → size×size×C 的小型 VAE"""
    half = size // 2
    encoder = [
        {'kind': 'conv2d', 'name': 'enc_conv1', 'filters': 2, 'kernel': 3, 'activation': activation},
        {'kind': 'maxpool', 'name': 'enc_pool1'},
        {'kind': 'flatten', 'name': 'flatten'},
        {'kind': 'dense', 'name': 'enc_latent', 'units': 2 * latent_dim, 'activation': 'linear'},
    ]
    decoder = [
        {'kind': 'dense', 'name': 'dec_dense', 'units': half * half * 2, 'activation': activation},
        {'kind': 'reshape', 'name': 'reshape', 'target_shape': [half, half, 2]},
        {'kind': 'upsample', 'name': 'dec_up1'},
        {'kind': 'transpose-conv2d', 'name': 'dec_out', 'filters': channels, 'kernel': 3,
         'activation': 'sigmoid'},
    ]
    return VaeSpec('tiny-vae', (size, size, channels), encoder, latent_dim, decoder, beta=beta,
                   recon_loss=recon_loss)


class DictBound(dict):
    """以张量字典充当绑定参数，供有限差分校验使用"""

    def __init__(self, tensors, buffers=None):
        super().__init__(tensors)
        self.buffers = buffers or {}

    def buffer(self, name):
        return self.buffers[name]

    def update_buffer(self, name, value):
        self.buffers[name] = value

    def trainable(self):
        return dict(self)


class IdentityVae:
    """decode(encode(x)) = x 的 VAE 替身：μ 为展平的图像，σ = 0"""

    def __init__(self, patch_size, channels=3):
        shape = (patch_size, patch_size, channels)
        self.spec = SimpleNamespace(input_shape=shape, latent_dim=int(np.prod(shape)),
                                    noise_clip=(-5.0, 5.0), patch_size=patch_size)

    def encode(self, x):
        flat = np.asarray(x, dtype=np.float32).reshape(len(x), -1)
        return Tensor._wrap(flat), Tensor._wrap(np.zeros_like(flat))

    def decode(self, z):
        return Tensor._wrap(z.numpy().reshape((-1,) + self.spec.input_shape))


class ConstantClassifier:
    """按图像均值是否超过阈值给出 0/1 预测的分类器替身"""

    num_classes = 2

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def predict(self, images):
        images = np.asarray(images)
        return (images.reshape(len(images), -1).mean(axis=1) > self.threshold).astype(np.int64)


@pytest.fixture
def classifier_spec():
    return tiny_classifier_spec()


@pytest.fixture
def classifier(classifier_spec):
    return Classifier.create(classifier_spec, seed=3)


@pytest.fixture
def vae_spec():
    return tiny_vae_spec()


@pytest.fixture
def vae(vae_spec):
    return Vae.create(vae_spec, seed=5)


@pytest.fixture
def images():
    rng = np.random.default_rng(0)
    return rng.uniform(0.05, 0.95, size=(12, 8, 8, 1)).astype(np.float32)


@pytest.fixture
def labels():
    return np.arange(12) % 3


@pytest.fixture(scope='session')
def mnist_dir():
    path = os.environ.get('ADVDEF_MNIST_DIR')
    if not path or not os.path.isdir(path):
        pytest.skip("未设置 ADVDEF_MNIST_DIR")
    return path


# =============================================================================
# 需要真实训练的会话级夹具（仅被 slow 测试使用）
# =============================================================================

SYNTH_SIZE = 32
SYNTH_CLASSES = 4


@pytest.fixture(scope='session')
def synthetic_task():
    """32×32×3 合成形状数据上训练好的分类器与 16×16 图像块 VAE"""
    train = synth_dataset('shapes', n=2000, height=SYNTH_SIZE, width=SYNTH_SIZE,
                          num_classes=SYNTH_CLASSES, seed=11)
    test = synth_dataset('shapes', n=300, height=SYNTH_SIZE, width=SYNTH_SIZE,
                         num_classes=SYNTH_CLASSES, seed=12, split='test')
    spec = get_preset('synthetic-hires-cnn', num_classes=SYNTH_CLASSES, size=SYNTH_SIZE)
    params, report = train_classifier(spec, train, OptimizerConfig('adam', lr=1e-3), epochs=6, seed=0,
                                      batch_size=32, progress=False)
    vae_spec = get_preset('patch-vae-16')
    vae_params, _ = train_vae(vae_spec, train.images, OptimizerConfig('adam', lr=1e-3), epochs=5, seed=0,
                              batch_size=32, patches_per_epoch=4000, progress=False)
    return SimpleNamespace(train=train, test=test, report=report,
                           classifier=Classifier(spec, params), vae=Vae(vae_spec, vae_params))


@pytest.fixture(scope='session')
def mnist_task(mnist_dir):
    """MNIST 前 10000 张训练图像上训练好的 mnist-cnn 与 mnist-vae，测试集取前 1000 张"""
    train = IdxLoader.load_mnist(mnist_dir, 'train')
    test = IdxLoader.load_mnist(mnist_dir, 'test')
    subset = SimpleNamespace(images=train.images[:10000], labels=train.labels[:10000])
    spec = get_preset('mnist-cnn')
    params, report = train_classifier(spec, subset, OptimizerConfig('adam', lr=1e-3), epochs=3, seed=0,
                                      batch_size=64, progress=False)
    vae_spec = get_preset('mnist-vae')
    vae_params, _ = train_vae(vae_spec, subset.images, OptimizerConfig('adam', lr=1e-3), epochs=8, seed=0,
                              batch_size=64, progress=False)
    return SimpleNamespace(test_images=test.images[:1000], test_labels=test.labels[:1000], report=report,
                           classifier=Classifier(spec, params), vae=Vae(vae_spec, vae_params))
