"""
架构预设

按名称取得分类器与 VAE 的架构描述；卷积统一为 3×3 'same'，下采样全部由池化完成。
"""

from common.errors import ConfigError
from .specs import ClassifierSpec, VaeSpec


def _conv(name, filters, activation='relu'):
    return {'kind': 'conv2d', 'name': name, 'filters': filters, 'kernel': 3, 'activation': activation}


def _tconv(name, filters, activation='relu'):
    return {'kind': 'transpose-conv2d', 'name': name, 'filters': filters, 'kernel': 3,
            'activation': activation}


def _pool(name):
    return {'kind': 'maxpool', 'name': name}


def _up(name):
    return {'kind': 'upsample', 'name': name}


def _dense(name, units, activation='relu', zero_init=False):
    desc = {'kind': 'dense', 'name': name, 'units': units, 'activation': activation}
    if zero_init:
        desc['zero_init'] = True
    return desc


def _dropout(name, rate):
    return {'kind': 'dropout', 'name': name, 'rate': rate}


def _bn(name):
    return {'kind': 'batchnorm', 'name': name}


def _flatten():
    return {'kind': 'flatten', 'name': 'flatten'}


def _reshape(shape):
    return {'kind': 'reshape', 'name': 'reshape', 'target_shape': list(shape)}


# =============================================================================
# 分类器
# =============================================================================

def mnist_cnn(num_classes=10):
    """28×28×1 → 14×14×32 → 7×7×64 → 1024 → 10"""
    layers = [
        _conv('conv1', 32), _pool('pool1'),
        _conv('conv2', 64), _pool('pool2'),
        _flatten(),
        _dense('dense1', 1024), _dropout('dropout1', 0.4),
        _dense('logits', num_classes, activation='linear'),
    ]
    return ClassifierSpec('mnist-cnn', 'mnist', (28, 28, 1), layers, num_classes)


def cifar10_cnn(num_classes=10):
    """32×32×3 → (Conv+BN)×2 三组，每组后池化与 dropout → 4×4×128 → 10"""
    layers = []
    for block, (filters, rate) in enumerate(((32, 0.2), (64, 0.3), (128, 0.4)), start=1):
        layers += [
            _conv(f'conv{block}a', filters), _bn(f'bn{block}a'),
            _conv(f'conv{block}b', filters), _bn(f'bn{block}b'),
            _pool(f'pool{block}'), _dropout(f'dropout{block}', rate),
        ]
    layers += [_flatten(), _dense('logits', num_classes, activation='linear')]
    return ClassifierSpec('cifar10-cnn', 'cifar10', (32, 32, 3), layers, num_classes)


def synthetic_hires_cnn(num_classes=10, size=64):
    """合成高分辨率数据集使用的小型分类器"""
    layers = [
        _conv('conv1', 16), _pool('pool1'),
        _conv('conv2', 32), _pool('pool2'),
        _conv('conv3', 64), _pool('pool3'),
        _flatten(),
        _dense('dense1', 128), _dropout('dropout1', 0.3),
        _dense('logits', num_classes, activation='linear'),
    ]
    return ClassifierSpec('synthetic-hires-cnn', 'synthetic-hires', (size, size, 3), layers, num_classes)


# =============================================================================
# VAE
# =============================================================================

def mnist_vae(beta=0.5):
    """编码器 28×28×1 → 14×14×16 → 7×7×8 → 256（d = 128）"""
    encoder = [
        _conv('enc_conv1', 16), _pool('enc_pool1'),
        _conv('enc_conv2', 8), _pool('enc_pool2'),
        _flatten(),
        _dense('enc_latent', 256, activation='linear', zero_init=True),
    ]
    decoder = [
        _dense('dec_dense', 7 * 7 * 8), _reshape((7, 7, 8)),
        _up('dec_up1'), _tconv('dec_tconv1', 16),
        _up('dec_up2'), _tconv('dec_out', 1, activation='sigmoid'),
    ]
    return VaeSpec('mnist-vae', (28, 28, 1), encoder, 128, decoder,
                   beta=beta, recon_loss='bce')


def _patch_like_vae(name, size, widths, dense_width, beta, recon_loss='mse'):
    """Conv+Pool → Conv → Conv → Dense 结构的编码器及其镜像解码器"""
    w1, w2, w3 = widths
    half = size // 2
    encoder = [
        _conv('enc_conv1', w1), _pool('enc_pool1'),
        _conv('enc_conv2', w2),
        _conv('enc_conv3', w3),
        _flatten(),
        _dense('enc_latent', dense_width, activation='linear', zero_init=True),
    ]
    decoder = [
        _dense('dec_dense', half * half * w3), _reshape((half, half, w3)),
        _tconv('dec_tconv1', w2),
        _tconv('dec_tconv2', w1),
        _up('dec_up1'), _tconv('dec_out', 3, activation='sigmoid'),
    ]
    return VaeSpec(name, (size, size, 3), encoder, dense_width // 2, decoder,
                   beta=beta, recon_loss=recon_loss)


def cifar10_vae(beta=0.5):
    """编码器 32×32×3 → 16×16×64 → 16×16×32 → 16×16×16 → 1024（d = 512）"""
    return _patch_like_vae('cifar10-vae', 32, (64, 32, 16), 1024, beta)


def patch_vae(size, beta=1.0):
    """
    图像块 VAE

    Args:
        size: 块边长，16 / 32 / 64

    Returns:
        VaeSpec: 64×64 的输入按 64×64×3 处理
    """
    if size == 16:
        return _patch_like_vae('patch-vae-16', 16, (64, 32, 16), 512, beta)
    if size == 32:
        return _patch_like_vae('patch-vae-32', 32, (64, 32, 16), 512, beta)
    if size == 64:
        return _patch_like_vae('patch-vae-64', 64, (128, 64, 32), 1024, beta)
    raise ConfigError(f"不支持的图像块大小: {size}")


PRESETS = {
    'mnist-cnn': mnist_cnn,
    'cifar10-cnn': cifar10_cnn,
    'synthetic-hires-cnn': synthetic_hires_cnn,
    'mnist-vae': mnist_vae,
    'cifar10-vae': cifar10_vae,
    'patch-vae-16': lambda **kw: patch_vae(16, **kw),
    'patch-vae-32': lambda **kw: patch_vae(32, **kw),
    'patch-vae-64': lambda **kw: patch_vae(64, **kw),
}


def get_preset(name, **overrides):
    """
    按名称取得架构预设

    Args:
        name: 预设名称，见 PRESETS
        **overrides: 传给预设构造函数的参数（如 num_classes、beta）

    Returns:
        ClassifierSpec | VaeSpec

    Raises:
        ConfigError: 未知预设
    """
    if name not in PRESETS:
        raise ConfigError(f"不支持的架构预设: {name}（可选 {sorted(PRESETS)}）")
    try:
        return PRESETS[name](**overrides)
    except TypeError as e:
        raise ConfigError(f"预设 {name} 参数错误: {e}")
