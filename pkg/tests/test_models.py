"""
models 测试：形状追踪、VAE 数学、训练可复现性与组合梯度
"""

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from common.errors import ShapeError, DomainError, ConfigError
from data import synth_dataset
from models import (ClassifierSpec, Classifier, Vae, describe, get_preset, spec_from_dict,
                    kl_gaussian, vae_sample, train_classifier, train_vae, early_stop_reached)
from nnlayers import OptimizerConfig, cross_entropy
from tensorcore import Tensor, Rng
from tensorcore.gradcheck import check_gradients
from conftest import DictBound, tiny_classifier_spec, tiny_vae_spec


def _last_shape(spec, part=None):
    rows = [r for r in describe(spec) if part is None or r['part'] == part]
    return tuple(rows[-1]['shape'])


# =============================================================================
# 规格与预设
# =============================================================================

def test_mnist_cnn_shape_trace():
    rows = describe(get_preset('mnist-cnn'))
    shapes = {r['name']: tuple(r['shape']) for r in rows}
    assert shapes['conv1'] == (28, 28, 32)
    assert shapes['pool1'] == (14, 14, 32)
    assert shapes['pool2'] == (7, 7, 64)
    assert shapes['flatten'] == (3136,)
    assert shapes['logits'] == (10,)


def test_cifar10_cnn_shape_trace():
    spec = get_preset('cifar10-cnn')
    shapes = {r['name']: tuple(r['shape']) for r in describe(spec)}
    assert shapes['pool3'] == (4, 4, 128)
    assert shapes['logits'] == (10,)


def test_vae_presets_are_symmetric():
    for name in ('mnist-vae', 'cifar10-vae', 'patch-vae-16', 'patch-vae-32', 'patch-vae-64'):
        spec = get_preset(name)
        assert _last_shape(spec, 'encoder') == (2 * spec.latent_dim,)
        assert _last_shape(spec, 'decoder') == spec.input_shape


def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset('resnet-50')


def test_classifier_spec_validation():
    with pytest.raises(DomainError):
        tiny_classifier_spec(num_classes=1)
    with pytest.raises(ConfigError):
        ClassifierSpec('x', 'imagenet', (8, 8, 1), tiny_classifier_spec().layers, 3)


def test_vae_spec_rejects_asymmetric_decoder():
    spec = tiny_vae_spec()
    decoder = spec.decoder[:-1]
    with pytest.raises(ShapeError):
        type(spec)('broken', spec.input_shape, spec.encoder, spec.latent_dim, decoder)


def test_spec_dict_roundtrip():
    spec = get_preset('patch-vae-16', beta=0.25)
    restored = spec_from_dict(spec.to_dict())
    assert restored == spec
    assert restored.patch_size == 16


# =============================================================================
# VAE 数学
# =============================================================================

def test_zero_init_encoder_gives_standard_posterior():
    vae = Vae.create(get_preset('mnist-vae'), seed=1)
    mu, sigma = vae.encode(np.random.default_rng(0).uniform(size=(2, 28, 28, 1)))
    np.testing.assert_array_equal(mu.numpy(), np.zeros((2, 128)))
    np.testing.assert_array_equal(sigma.numpy(), np.ones((2, 128)))


def test_degenerate_noise_clip_returns_mean():
    mu = Tensor(np.array([[0.3, -1.2]]))
    sigma = Tensor(np.array([[2.0, 0.5]]))
    z = vae_sample(mu, sigma, Rng(4), (0.0, 0.0))
    np.testing.assert_array_equal(z.numpy(), mu.numpy())


def test_kl_known_values():
    assert kl_gaussian(Tensor([0.0]), Tensor([1.0])).item() == 0.0
    assert kl_gaussian(Tensor([1.0]), Tensor([1.0])).item() == pytest.approx(0.5)


def test_kl_rejects_non_positive_sigma():
    with pytest.raises(DomainError):
        kl_gaussian(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


def test_kl_matches_monte_carlo_estimate():
    mu, sigma = 0.5, 0.7
    z = np.random.default_rng(9).normal(mu, sigma, size=400000)
    log_ratio = -0.5 * ((z - mu) / sigma) ** 2 - math.log(sigma) + 0.5 * z ** 2
    analytic = kl_gaussian(Tensor([mu]), Tensor([sigma])).item()
    assert analytic == pytest.approx(log_ratio.mean(), abs=0.01)


def test_mse_loss_is_half_squared_error_per_sample(vae, images):
    x = images[:4]
    _, components = vae.loss(x, Rng(0), mode='eval', clip=(0.0, 0.0))
    mu, _ = vae.encode(x)
    x_rec = vae.decode(mu).numpy().astype(np.float64)
    expected = 0.5 * ((x - x_rec) ** 2).sum() / 4
    assert components['recon'] == pytest.approx(expected, rel=1e-4)


def test_beta_zero_is_pure_reconstruction(images):
    vae = Vae.create(tiny_vae_spec(beta=0.0), seed=2)
    _, components = vae.loss(images, Rng(1), mode='eval')
    assert components['kl'] > 0
    assert components['loss'] == pytest.approx(components['recon'])


def test_capacity_penalises_distance_to_target(images):
    spec = replace(tiny_vae_spec(beta=2.0), capacity=5.0)
    vae = Vae.create(spec, seed=2)
    _, components = vae.loss(images, Rng(1), mode='eval')
    expected = components['recon'] + 2.0 * abs(components['kl'] - 5.0)
    assert components['loss'] == pytest.approx(expected, rel=1e-5)


def test_kl_stays_finite_for_tiny_sigma():
    # σ² = 1e-60 下溢为 0，ln σ² 仍应有限
    value = kl_gaussian(Tensor([0.0]), Tensor([1e-30])).item()
    assert math.isfinite(value)
    assert value == pytest.approx(0.5 * (-1.0 - 2.0 * math.log(1e-30)), rel=1e-4)


@pytest.mark.parametrize('preset', [None, 'cifar10-cnn'])
def test_batch_of_one_matches_row_of_batch(preset):
    spec = tiny_classifier_spec() if preset is None else get_preset(preset)
    classifier = Classifier.create(spec, seed=4)
    x = np.random.default_rng(8).uniform(size=(5,) + tuple(spec.input_shape)).astype(np.float32)
    full = classifier.forward(x, 'eval').numpy()
    for i in (0, 3):
        single = classifier.forward(x[i:i + 1], 'eval').numpy()
        np.testing.assert_allclose(single[0], full[i], atol=1e-5)


# =============================================================================
# 训练
# =============================================================================

def _dataset(images, labels):
    return SimpleNamespace(images=images, labels=labels)


def test_classifier_training_is_reproducible(classifier_spec, images, labels):
    config = OptimizerConfig('adam', lr=0.01)
    a, report_a = train_classifier(classifier_spec, _dataset(images, labels), config, 2, seed=7,
                                   batch_size=4, progress=False)
    b, report_b = train_classifier(classifier_spec, _dataset(images, labels), config, 2, seed=7,
                                   batch_size=4, progress=False)
    assert a.equals(b)
    assert report_a.classifier_loss == report_b.classifier_loss
    assert report_a.epochs == 2


def test_classifier_training_lowers_loss(classifier_spec, images, labels):
    _, report = train_classifier(classifier_spec, _dataset(images, labels), OptimizerConfig('adam', lr=0.01),
                                 8, seed=1, batch_size=4, progress=False)
    assert report.eval_loss[-1] < report.initial_loss


def test_classifier_training_rejects_empty_set(classifier_spec):
    empty = _dataset(np.zeros((0, 8, 8, 1)), np.zeros(0, dtype=np.int64))
    with pytest.raises(DomainError):
        train_classifier(classifier_spec, empty, progress=False)


def test_vae_training_is_reproducible(vae_spec, images):
    a, _ = train_vae(vae_spec, images, epochs=2, seed=4, batch_size=4, progress=False)
    b, _ = train_vae(vae_spec, images, epochs=2, seed=4, batch_size=4, progress=False)
    assert a.equals(b)


def test_vae_trains_on_random_patches():
    spec = tiny_vae_spec(channels=3)
    images = np.random.default_rng(0).uniform(size=(3, 16, 16, 3)).astype(np.float32)
    params, report = train_vae(spec, images, epochs=1, seed=0, batch_size=4, patches_per_epoch=6,
                               progress=False)
    assert report.epochs == 1
    assert params.count() == Vae.create(spec, 0).params.count()


def test_vae_patch_larger_than_image():
    spec = tiny_vae_spec(size=16, channels=3)
    with pytest.raises(ShapeError):
        train_vae(spec, np.zeros((2, 8, 8, 3), dtype=np.float32), progress=False)


def test_early_stop_rule():
    assert early_stop_reached([1.0, 0.9995], tau=1e-3, window=1)
    assert not early_stop_reached([1.0, 0.5], tau=1e-3, window=1)
    assert not early_stop_reached([1.0, 1.0], tau=None, window=1)
    assert not early_stop_reached([1.0], tau=1e-3, window=1)


def test_vae_training_stops_early_when_flat(vae_spec, images):
    _, report = train_vae(vae_spec, images, OptimizerConfig('sgd', lr=1e-9), epochs=5, seed=0,
                          batch_size=4, early_stop_tau=0.5, progress=False)
    assert report.stopped_early
    assert report.epochs == 2


def test_vae_loss_decreases_over_epochs():
    images = synth_dataset('textures', n=500, height=8, width=8, channels=1, num_classes=4, seed=1).images
    _, report = train_vae(tiny_vae_spec(), images, OptimizerConfig('adam', lr=5e-3), epochs=3, seed=0,
                          batch_size=25, progress=False)
    assert report.eval_loss[-1] < report.initial_loss
    assert report.recon_loss[-1] < report.recon_loss[0]


def test_vae_reconstructs_constant_images():
    spec = tiny_vae_spec()
    images = np.full((256, 8, 8, 1), 0.3, dtype=np.float32)
    params, _ = train_vae(spec, images, OptimizerConfig('adam', lr=0.02), epochs=15, seed=0,
                          batch_size=16, progress=False)
    vae = Vae(spec, params)
    mu, sigma = vae.encode(images[:16])
    x_rec = vae.decode(vae_sample(mu, sigma, Rng(1), spec.noise_clip)).numpy()
    assert np.abs(x_rec - 0.3).mean() < 0.05


# =============================================================================
# 组合梯度校验（float64，噪声裁剪为 [0, 0]）
# =============================================================================

def _gradcheck_inputs(params, x, seed):
    rng = np.random.default_rng(seed)
    names = params.trainable_names()
    arrays = [x] + [params[n].astype(np.float64) + 0.05 * rng.normal(size=params[n].shape) for n in names]
    return names, arrays


def test_classifier_loss_gradients():
    spec = tiny_classifier_spec(activation='tanh')
    classifier = Classifier.create(spec, seed=0)
    x = np.random.default_rng(1).uniform(size=(2, 8, 8, 1))
    onehot = np.eye(3)[[0, 2]]
    names, arrays = _gradcheck_inputs(classifier.params.as_dtype(np.float64), x, 2)

    def fn(x_tensor, *tensors):
        logits = classifier.forward(x_tensor, 'eval', bound=DictBound(dict(zip(names, tensors))))
        return cross_entropy(logits, onehot)

    assert check_gradients(fn, arrays) < 1e-3


@pytest.mark.parametrize('recon_loss', ['mse', 'bce'])
def test_vae_loss_gradients(recon_loss):
    spec = tiny_vae_spec(activation='tanh', recon_loss=recon_loss, beta=0.5)
    vae = Vae.create(spec, seed=0)
    x = np.random.default_rng(3).uniform(0.1, 0.9, size=(2, 8, 8, 1))
    names, arrays = _gradcheck_inputs(vae.params.as_dtype(np.float64), x, 4)

    def fn(x_tensor, *tensors):
        loss, _ = vae.loss(x_tensor, Rng(0), mode='eval', bound=DictBound(dict(zip(names, tensors))),
                           clip=(0.0, 0.0))
        return loss

    assert check_gradients(fn, arrays) < 1e-3



# =============================================================================
# 训练后的干净准确率（slow）
# =============================================================================

def _accuracy(classifier, images, labels):
    return float(np.mean(classifier.predict(images) == labels))


@pytest.mark.slow
def test_synthetic_baseline_accuracy(synthetic_task):
    assert _accuracy(synthetic_task.classifier, synthetic_task.test.images, synthetic_task.test.labels) >= 0.9


@pytest.mark.slow
@pytest.mark.mnist
def test_mnist_clean_accuracy(mnist_task):
    assert _accuracy(mnist_task.classifier, mnist_task.test_images, mnist_task.test_labels) >= 0.95
