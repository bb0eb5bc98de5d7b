"""
防御测试：图像块网格、平滑、DCT 量化、集成与防御链
"""

import numpy as np
import pytest

from algorithms.attacks import AttackConfig
from algorithms.defenses import (DefenseChain, apply_chain, ensemble_average, vae_reconstruct_whole,
                                 vae_reconstruct_patchwise)
from algorithms.dct_quant import (LUMINANCE_BASE, QuantTables, dct8x8, idct8x8, dct_quant_defense,
                                  scale_table)
from algorithms.patches import PatchGrid, axis_anchors, extract_patches, stitch_patches
from algorithms.smoothing import smooth5x5
from common.errors import ConfigError, DefenseError, DomainError, ShapeError
from data import synth_dataset
from evaluation import psnr, run_sweep
from tensorcore import Rng
from conftest import IdentityVae


def _random_image(shape, seed=0):
    return np.random.default_rng(seed).uniform(size=shape).astype(np.float32)


# =============================================================================
# 图像块
# =============================================================================

def test_dense_grid_on_small_image():
    grid = PatchGrid.build((5, 5, 1), 3, 1)
    assert len(grid) == 9
    coverage = grid.coverage()
    assert coverage[2, 2] == 9
    assert coverage[0, 0] == 1
    assert coverage.min() >= 1


def test_non_overlapping_tiles():
    grid = PatchGrid.build((64, 64, 3), 32, 32)
    assert grid.anchors == [(0, 0), (0, 32), (32, 0), (32, 32)]
    assert np.all(grid.coverage() == 1)


def test_half_overlap_grid():
    grid = PatchGrid.build((64, 64, 3), 32, 16)
    assert len(grid) == 9
    assert grid.coverage().max() == 4


def test_last_anchor_snaps_to_edge():
    assert axis_anchors(10, 4, 4) == [0, 4, 6]
    assert axis_anchors(10, 4, 3) == [0, 3, 6]


def test_grid_validation():
    with pytest.raises(ShapeError):
        PatchGrid.build((8, 8, 3), 16, 8)
    with pytest.raises(DomainError):
        PatchGrid.build((8, 8, 3), 4, 5)
    with pytest.raises(DomainError):
        PatchGrid.build((8, 8, 3), 4, 0)


def _random_geometries(count=50, seed=2024):
    """随机 (H, W, C)、块大小 p 与步长 s，满足 1 ≤ s ≤ p ≤ min(H, W)"""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        patch = int(rng.integers(1, 9))
        stride = int(rng.integers(1, patch + 1))
        shape = (int(rng.integers(patch, patch + 13)), int(rng.integers(patch, patch + 13)),
                 int(rng.choice([1, 3])))
        yield shape, patch, stride


def test_extract_then_stitch_is_identity():
    for k, (shape, patch, stride) in enumerate(_random_geometries()):
        image = _random_image(shape, seed=k)
        grid, patches = extract_patches(image, patch, stride)
        np.testing.assert_array_equal(stitch_patches(grid, patches), image,
                                      err_msg=f"shape={shape}, p={patch}, s={stride}")


def test_coverage_matches_brute_force_count():
    for shape, patch, stride in _random_geometries(seed=7):
        grid = PatchGrid.build(shape, patch, stride)
        expected = np.zeros(shape[:2], dtype=np.int64)
        for i in range(shape[0]):
            for j in range(shape[1]):
                expected[i, j] = sum(r <= i < r + patch and c <= j < c + patch for r, c in grid.anchors)
        assert expected.min() >= 1
        np.testing.assert_array_equal(grid.coverage(), expected)


def test_stitch_averages_overlaps():
    grid = PatchGrid.build((4, 6, 1), 4, 2)
    patches = np.stack([np.full((4, 4, 1), float(k)) for k in range(len(grid))])
    out = stitch_patches(grid, patches)
    np.testing.assert_allclose(out[0, :, 0], [0.0, 0.0, 0.5, 0.5, 1.0, 1.0])


def test_stitch_rejects_wrong_patch_count():
    grid = PatchGrid.build((8, 8, 1), 4, 4)
    with pytest.raises(ShapeError):
        stitch_patches(grid, np.zeros((3, 4, 4, 1)))


# =============================================================================
# 平滑
# =============================================================================

def test_uniform_smoothing_spreads_impulse():
    image = np.zeros((9, 9, 1), dtype=np.float32)
    image[4, 4, 0] = 1.0
    out = smooth5x5(image)
    np.testing.assert_allclose(out[2:7, 2:7, 0], np.full((5, 5), 1 / 25), rtol=1e-6)
    assert abs(out[1, 4, 0]) < 1e-7
    assert out.sum() == pytest.approx(1.0, rel=1e-5)


def test_smoothing_keeps_constant_image_and_shape():
    image = np.full((2, 7, 7, 3), 0.3, dtype=np.float32)
    for kernel in ('uniform', 'gaussian'):
        out = smooth5x5(image, kernel)
        assert out.shape == image.shape
        np.testing.assert_allclose(out, image, rtol=1e-6)


def test_smoothing_channels_are_independent():
    image = np.zeros((6, 6, 2), dtype=np.float32)
    image[..., 1] = 1.0
    out = smooth5x5(image)
    assert np.all(out[..., 0] == 0.0)


def test_smoothing_twice_widens_impulse_support():
    image = np.zeros((11, 11, 1), dtype=np.float32)
    image[5, 5, 0] = 1.0
    once = smooth5x5(image)
    twice = smooth5x5(once)
    assert abs(once[1, 5, 0]) < 1e-7
    # 第二次平滑的窗口覆盖第一次支撑集的一行五个 1/25
    assert twice[1, 5, 0] == pytest.approx(5 / 625, rel=1e-5)
    assert not np.allclose(once, twice)


def test_unknown_smoothing_kernel():
    with pytest.raises(ValueError):
        smooth5x5(np.zeros((5, 5, 1)), 'median')


# =============================================================================
# DCT 量化
# =============================================================================

def test_constant_block_dc_coefficient():
    coefficients = dct8x8(np.full((8, 8), 3.0))
    assert coefficients[0, 0] == pytest.approx(24.0)
    assert np.abs(coefficients.reshape(-1)[1:]).max() < 1e-12


def test_dct_roundtrip():
    block = np.random.default_rng(0).normal(size=(8, 8))
    np.testing.assert_allclose(idct8x8(dct8x8(block)), block, atol=1e-12)


def test_dct_preserves_norm():
    blocks = np.random.default_rng(4).normal(size=(20, 8, 8))
    norms = np.linalg.norm(blocks.reshape(20, -1), axis=1)
    np.testing.assert_allclose(np.linalg.norm(dct8x8(blocks).reshape(20, -1), axis=1), norms, rtol=1e-4)


def test_dct_rejects_wrong_block_size():
    with pytest.raises(ShapeError):
        dct8x8(np.zeros((4, 8)))


def test_quality_scaling():
    np.testing.assert_array_equal(scale_table(LUMINANCE_BASE, 50), LUMINANCE_BASE)
    assert np.all(QuantTables.for_quality(100).luminance == 1)
    assert np.all(QuantTables.for_quality(1).luminance <= 255)
    assert scale_table(LUMINANCE_BASE, 10)[0, 0] == (16 * 500 + 50) // 100


def test_quality_out_of_range():
    for quality in (0, 101, 50.5):
        with pytest.raises(DomainError):
            QuantTables.for_quality(quality)


def test_mid_grey_survives_quantization():
    image = np.full((16, 16, 3), 128 / 255, dtype=np.float32)
    for color_space in ('rgb', 'ycbcr'):
        np.testing.assert_allclose(dct_quant_defense(image, 10, color_space), image, atol=1e-6)


def test_dct_quant_handles_ragged_sizes_and_batches():
    image = _random_image((2, 13, 10, 1), seed=3)
    out = dct_quant_defense(image, 23)
    assert out.shape == image.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_lower_quality_removes_more_detail():
    image = _random_image((16, 16, 1), seed=5)
    error_high = np.abs(dct_quant_defense(image, 90) - image).mean()
    error_low = np.abs(dct_quant_defense(image, 10) - image).mean()
    assert error_low > error_high


def test_quality_100_moves_each_coefficient_at_most_half_a_step():
    image = np.random.default_rng(6).uniform(0.2, 0.8, size=(16, 16, 1)).astype(np.float32)
    out = dct_quant_defense(image, 100)
    step = QuantTables.for_quality(100).luminance
    for r in (0, 8):
        for c in (0, 8):
            delta = (out[r:r + 8, c:c + 8, 0].astype(np.float64) - image[r:r + 8, c:c + 8, 0]) * 255.0
            assert np.all(np.abs(dct8x8(delta)) <= step / 2 + 1e-3)


def test_quality_100_roundtrip_psnr():
    images = synth_dataset('shapes', n=4, height=32, width=32, seed=2).images
    assert psnr(images, dct_quant_defense(images, 100)) >= 40.0


# =============================================================================
# 集成与 VAE 重建
# =============================================================================

def test_ensemble_average():
    a = np.zeros((2, 2, 1))
    b = np.ones((2, 2, 1))
    np.testing.assert_array_equal(ensemble_average([a, b]), np.full((2, 2, 1), 0.5))
    with pytest.raises(DomainError):
        ensemble_average([])
    with pytest.raises(ShapeError):
        ensemble_average([a, np.zeros((3, 2, 1))])


def test_ensemble_of_identical_copies_is_exact():
    image = _random_image((6, 6, 3), seed=9)
    np.testing.assert_array_equal(ensemble_average([image] * 4), image)


def test_patchwise_identity_vae_reproduces_image():
    image = _random_image((10, 10, 3), seed=7)
    out = vae_reconstruct_patchwise(IdentityVae(4), image, 4, 3, Rng(0))
    np.testing.assert_array_equal(out, image)


def test_patchwise_rejects_mismatched_patch():
    with pytest.raises(ShapeError):
        vae_reconstruct_patchwise(IdentityVae(4), _random_image((10, 10, 3)), 5, 3, Rng(0))


def test_whole_reconstruction_is_seeded(vae, images):
    a = vae_reconstruct_whole(vae, images[0], Rng(2))
    b = vae_reconstruct_whole(vae, images[0], Rng(2))
    c = vae_reconstruct_whole(vae, images[0], Rng(3))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_whole_reconstruction_without_noise_is_deterministic(vae, images):
    a = vae_reconstruct_whole(vae, images[0], Rng(2), clip=(0.0, 0.0))
    b = vae_reconstruct_whole(vae, images[0], Rng(9), clip=(0.0, 0.0))
    np.testing.assert_array_equal(a, b)


def test_whole_reconstruction_rejects_wrong_shape(vae):
    with pytest.raises(ShapeError):
        vae_reconstruct_whole(vae, np.zeros((9, 9, 1)), Rng(0))


# =============================================================================
# 防御链
# =============================================================================

def test_empty_chain_is_identity(images):
    out = apply_chain(DefenseChain.build([]), images, Rng(0))
    np.testing.assert_array_equal(out, images)


def test_chain_failure_names_transform_index():
    chain = DefenseChain.build([{'type': 'identity'}, {'type': 'dct-quant', 'quality': 0}])
    with pytest.raises(DefenseError) as info:
        chain.apply_one(_random_image((8, 8, 1)), Rng(0))
    assert info.value.index == 1


def test_unknown_transform_and_missing_model():
    with pytest.raises(ConfigError):
        DefenseChain.build([{'type': 'median'}])
    with pytest.raises(ConfigError):
        DefenseChain.build([{'type': 'vae-whole', 'model': 'x.advdef'}])


def test_patch_size_must_match_model():
    with pytest.raises(ConfigError):
        DefenseChain.build([{'type': 'vae-patch', 'model': 'p4', 'patch': 8}], lambda path: IdentityVae(4))


def test_chain_is_independent_of_parallelism(vae, images):
    chain = DefenseChain.build([{'type': 'vae-whole', 'model': 'tiny'}, {'type': 'smooth5x5'}],
                               lambda path: vae)
    serial = apply_chain(chain, images, Rng(4), parallelism=1)
    threaded = apply_chain(chain, images, Rng(4), parallelism=4)
    assert serial.tobytes() == threaded.tobytes()


def test_ensemble_of_identity_chains():
    image = _random_image((2, 8, 8, 3), seed=1)
    chain = DefenseChain.build([{'type': 'ensemble', 'chains': [
        [{'type': 'vae-patch', 'model': 'p4', 'stride': 2}],
        [{'type': 'identity'}],
    ]}], lambda path: IdentityVae(4))
    np.testing.assert_allclose(apply_chain(chain, image, Rng(0)), image, atol=1e-7)


# =============================================================================
# 训练后模型上的防御扫描（slow）
# =============================================================================

MNIST_EPSILONS = [0.0, 0.03, 0.06, 0.09, 0.12]


@pytest.fixture(scope='module')
def mnist_sweep(mnist_task):
    columns = [
        ('none', []),
        ('vae', [{'type': 'vae-whole', 'model': 'mnist-vae'}]),
        ('jpeg-23', [{'type': 'dct-quant', 'quality': 23}]),
    ]
    return run_sweep(mnist_task.classifier, AttackConfig('fgsm'), MNIST_EPSILONS, columns,
                     mnist_task.test_images, mnist_task.test_labels, seed=0, dataset_tag='mnist',
                     resolve_model=lambda name: mnist_task.vae, progress=False)


@pytest.mark.slow
@pytest.mark.mnist
def test_mnist_undefended_accuracy_falls(mnist_sweep):
    curve = mnist_sweep.column('none')
    for previous, current in zip(curve, curve[1:]):
        assert current <= previous + 0.01
    assert curve[-1] <= curve[0] - 0.30


@pytest.mark.slow
@pytest.mark.mnist
def test_mnist_vae_recovers_accuracy(mnist_sweep):
    clean = mnist_sweep.rows[0]
    assert abs(clean['vae'] - clean['none']) <= 0.03
    for row in mnist_sweep.rows[-2:]:
        assert row['vae'] >= row['none'] + 0.15


@pytest.mark.slow
@pytest.mark.mnist
def test_mnist_low_quality_quantization_helps_at_mid_epsilon(mnist_sweep):
    row = mnist_sweep.rows[MNIST_EPSILONS.index(0.06)]
    assert row['jpeg-23'] >= row['none'] + 0.05


@pytest.mark.slow
def test_patch_chain_with_smoothing_recovers_accuracy(synthetic_task):
    patch = {'type': 'vae-patch', 'model': 'patch-vae-16', 'stride': 8}
    columns = [('none', []), ('patch', [patch]), ('patch+smooth', [patch, {'type': 'smooth5x5'}])]
    result = run_sweep(synthetic_task.classifier, AttackConfig('fgsm'), [0.06, 0.09], columns,
                       synthetic_task.test.images, synthetic_task.test.labels, seed=0,
                       dataset_tag='synthetic-hires', resolve_model=lambda name: synthetic_task.vae,
                       progress=False)
    top = result.rows[-1]
    assert top['patch+smooth'] >= top['none'] + 0.10
    assert top['patch+smooth'] >= top['patch']
