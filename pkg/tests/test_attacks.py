"""
攻击测试：FGSM / I-FGSM 的预算、裁剪、确定性与批次存取
"""

import numpy as np
import pytest

from algorithms.attacks import (AttackConfig, AdversarialBatch, GradientAttacker, attack_batch,
                                check_epsilon_range, fgsm, ifgsm, l2_ratios)
from common.errors import ConfigError, DomainError, FormatError, ShapeError
from evaluation import l2_ratios as metric_l2_ratios
from models import ClassifierSpec, Classifier
from nnlayers import ModelParams


def _logistic_classifier():
    """logits = [x, −x] 的一维分类器"""
    spec = ClassifierSpec('logistic', 'mnist', (1,),
                          [{'kind': 'dense', 'name': 'logits', 'units': 2, 'activation': 'linear'}], 2)
    params = ModelParams()
    params.add('logits.weight', np.array([[1.0, -1.0]], dtype=np.float32))
    params.add('logits.bias', np.zeros(2, dtype=np.float32))
    return Classifier(spec, params)


def _linear_classifier(dim=16, seed=0):
    """logits = [w·x, −w·x] 的线性分类器，|wᵢ| ∈ [0.05, 0.15]"""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.05, 0.15, size=dim) * rng.choice([-1.0, 1.0], size=dim)
    spec = ClassifierSpec('linear', 'mnist', (dim,),
                          [{'kind': 'dense', 'name': 'logits', 'units': 2, 'activation': 'linear'}], 2)
    params = ModelParams()
    params.add('logits.weight', np.stack([w, -w], axis=1).astype(np.float32))
    params.add('logits.bias', np.zeros(2, dtype=np.float32))
    return Classifier(spec, params)


def test_fgsm_moves_against_true_class():
    classifier = _logistic_classifier()
    x = np.array([[0.5], [0.5]], dtype=np.float32)
    out = fgsm(classifier, x, np.array([0, 1]), 0.1)
    np.testing.assert_allclose(out[:, 0], [0.4, 0.6], rtol=1e-6)


def test_epsilon_zero_is_identity(classifier, images, labels):
    np.testing.assert_array_equal(fgsm(classifier, images, labels, 0.0), images)
    np.testing.assert_array_equal(ifgsm(classifier, images, labels, 0.0, 5), images)


@pytest.mark.parametrize('kind,iterations', [('fgsm', 1), ('ifgsm', 4)])
def test_perturbation_within_budget_and_range(classifier, images, labels, kind, iterations):
    config = AttackConfig(kind, epsilon=0.07, iterations=iterations)
    batch = attack_batch(config, classifier, images, labels)
    assert np.all(batch.linf() <= 0.07 + 1e-6)
    assert batch.perturbed.min() >= 0.0 and batch.perturbed.max() <= 1.0
    assert batch.failures == []


def test_fgsm_step_is_full_budget_inside_range(classifier, images, labels):
    out = fgsm(classifier, images, labels, 0.03)
    moved = np.abs(out - images)
    # images 位于 [0.05, 0.95]，不会触及裁剪边界
    assert np.allclose(moved[moved > 0], 0.03, atol=1e-6)


def test_single_iteration_ifgsm_equals_fgsm(classifier, images, labels):
    a = fgsm(classifier, images, labels, 0.05)
    b = ifgsm(classifier, images, labels, 0.05, 1)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize('iterations', [2, 3, 7, 10])
def test_linear_model_ifgsm_equals_fgsm(iterations):
    # 线性模型的梯度符号不随 x 变化
    classifier = _linear_classifier()
    x = np.random.default_rng(3).uniform(0.3, 0.7, size=(6, 16)).astype(np.float32)
    y = np.array([0, 1, 0, 1, 1, 0])
    np.testing.assert_allclose(ifgsm(classifier, x, y, 0.1, iterations), fgsm(classifier, x, y, 0.1),
                               atol=1e-6)


def test_parallelism_does_not_change_output(classifier, images, labels):
    config = AttackConfig('ifgsm', epsilon=0.05, iterations=3, chunk_size=5)
    serial = attack_batch(config, classifier, images, labels, parallelism=1)
    threaded = attack_batch(config, classifier, images, labels, parallelism=4)
    assert serial.perturbed.tobytes() == threaded.perturbed.tobytes()
    assert serial.fingerprint() == threaded.fingerprint()


def test_empty_slice(classifier):
    batch = attack_batch(AttackConfig('fgsm', 0.1), classifier, np.zeros((0, 8, 8, 1)),
                         np.zeros(0, dtype=np.int64))
    assert len(batch) == 0
    assert batch.linf().shape == (0,)


def test_label_count_mismatch(classifier, images):
    with pytest.raises(ShapeError):
        attack_batch(AttackConfig('fgsm', 0.1), classifier, images, np.zeros(3, dtype=np.int64))


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig('pgd')
    with pytest.raises(DomainError):
        AttackConfig('fgsm', epsilon=-0.1)
    with pytest.raises(DomainError):
        AttackConfig('ifgsm', iterations=0)
    assert AttackConfig('fgsm', 0.1).with_epsilon(0.2).epsilon == 0.2


def test_run_attack_unknown_kind(classifier, images, labels):
    with pytest.raises(ValueError):
        GradientAttacker.run_attack('deepfool', classifier, images, labels, 0.1)


def test_epsilon_range_check():
    assert check_epsilon_range(0.1, 'mnist')
    assert not check_epsilon_range(0.3, 'mnist')
    assert check_epsilon_range(5.0, 'unknown-dataset')


def test_l2_ratios_recorded(classifier, images, labels):
    batch = attack_batch(AttackConfig('fgsm', 0.05), classifier, images, labels)
    n = len(batch)
    expected = (np.linalg.norm((batch.perturbed - batch.originals).reshape(n, -1).astype(np.float64), axis=1)
                / np.linalg.norm(batch.originals.reshape(n, -1).astype(np.float64), axis=1))
    np.testing.assert_allclose(batch.l2_ratios, expected, rtol=1e-10)


def test_zero_norm_original_is_recorded_as_nan(classifier, images, labels):
    images = images.copy()
    images[0] = 0.0
    batch = attack_batch(AttackConfig('fgsm', 0.05), classifier, images, labels)
    assert np.isnan(batch.l2_ratios[0])
    assert np.all(np.isfinite(batch.l2_ratios[1:]))
    with pytest.raises(DomainError):
        l2_ratios(batch.originals, batch.perturbed)


def test_metrics_share_attack_l2_ratios():
    assert metric_l2_ratios is l2_ratios


def test_batch_save_load(tmp_path, classifier, images, labels):
    batch = attack_batch(AttackConfig('fgsm', 0.05), classifier, images, labels)
    batch.failures = [{'index': 2, 'reason': '梯度非有限'}]
    path = tmp_path / 'adv.npz'
    batch.save(path)
    loaded = AdversarialBatch.load(path)
    assert loaded.fingerprint() == batch.fingerprint()
    assert loaded.failures == batch.failures


def test_batch_load_missing_file(tmp_path):
    with pytest.raises(FormatError):
        AdversarialBatch.load(tmp_path / 'missing.npz')


# =============================================================================
# 训练后模型上的攻击趋势（slow）
# =============================================================================

SYNTH_EPSILONS = [0.0, 0.005, 0.02, 0.04, 0.06, 0.09]


def _adversarial_accuracy(task, kind, epsilon, iterations=1):
    images, labels = task.test.images, task.test.labels
    batch = attack_batch(AttackConfig(kind, epsilon, iterations), task.classifier, images, labels)
    return float(np.mean(task.classifier.predict(batch.perturbed) == labels)), batch


@pytest.mark.slow
def test_fgsm_accuracy_falls_with_epsilon(synthetic_task):
    curve = [_adversarial_accuracy(synthetic_task, 'fgsm', eps)[0] for eps in SYNTH_EPSILONS]
    for previous, current in zip(curve, curve[1:]):
        assert current <= previous + 0.01
    assert curve[-1] <= curve[0] - 0.30


@pytest.mark.slow
def test_ifgsm_is_at_least_as_strong_at_matched_l2(synthetic_task):
    fgsm_accuracy, fgsm_batch = _adversarial_accuracy(synthetic_task, 'fgsm', 0.04)
    target = float(np.mean(fgsm_batch.l2_ratios))
    # I-FGSM 的 L2 小于同 ε 的 FGSM，放大 ε 直到两者接近
    candidates = [_adversarial_accuracy(synthetic_task, 'ifgsm', 0.04 * scale, 10)
                  for scale in (1.0, 1.1, 1.25, 1.5)]
    accuracy, batch = min(candidates, key=lambda c: abs(np.mean(c[1].l2_ratios) - target))
    assert abs(np.mean(batch.l2_ratios) - target) <= 0.15 * target
    assert accuracy <= fgsm_accuracy
