"""
输入净化防御

防御链是按顺序作用的图像变换 T，每个变换把图像映射为同形状的图像。
随机变换使用显式的随机数流：第 i 张图像使用 rng.split(i)，链中第 k 个变换再派生 split(k)。
"""

import logging

import numpy as np

from common.errors import ShapeError, DomainError, ConfigError, DefenseError, AdvDefError
from common.parallel import ordered_map
from tensorcore import Tensor, gaussian, no_grad, ops
from .dct_quant import dct_quant_defense
from .patches import extract_patches, stitch_patches
from .smoothing import smooth5x5

logger = logging.getLogger(__name__)

TRANSFORM_TYPES = ('identity', 'vae-whole', 'vae-patch', 'smooth5x5', 'dct-quant', 'ensemble')
PATCH_BATCH = 128


# =============================================================================
# 基本运算
# =============================================================================

def ensemble_average(images):
    """
    逐像素算术平均

    Args:
        images: 同形状图像列表

    Returns:
        np.ndarray: float32 平均图像

    Raises:
        DomainError: 列表为空
        ShapeError: 形状不一致
    """
    if len(images) == 0:
        raise DomainError("集成平均需要至少一幅图像")
    shape = np.shape(images[0])
    for image in images:
        if np.shape(image) != shape:
            raise ShapeError(f"集成平均: 形状不一致 {list(shape)} vs {list(np.shape(image))}")
    total = np.zeros(shape, dtype=np.float64)
    for image in images:
        total += image
    return (total / len(images)).astype(np.float32)


def vae_reconstruct_batch(vae, images, rngs, clip=None):
    """
    批量重建，第 j 张图像的采样噪声来自 rngs[j]

    Args:
        vae: Vae
        images: (K, H, W, C)
        rngs: 长度 K 的 Rng 列表
        clip: 噪声裁剪区间，None 时使用 VAE 规格中的区间

    Returns:
        np.ndarray: (K, H, W, C)
    """
    clip = vae.spec.noise_clip if clip is None else tuple(clip)
    d = vae.spec.latent_dim
    with no_grad():
        mu, sigma = vae.encode(images)
        eps = np.stack([gaussian(rng, (d,), clip[0], clip[1]).numpy() for rng in rngs])
        z = ops.add(mu, ops.mul(sigma, Tensor._wrap(eps.astype(mu.dtype))))
        return vae.decode(z).numpy()


def _check_vae_input(vae, image, expected_shape):
    if tuple(image.shape) != tuple(expected_shape):
        raise ShapeError(f"图像形状 {list(image.shape)} 与 VAE 输入 {list(expected_shape)} 不符")


def vae_reconstruct_whole(vae, image, rng, clip=None, samples=1):
    """
    整图重建 decode(sample(encode(x)))

    Args:
        vae: Vae
        image: (H, W, C)，须等于 VAE 输入形状
        rng: Rng
        clip: 噪声裁剪区间；[0, 0] 时为确定性重建
        samples: 随机重建次数，>1 时取平均

    Returns:
        np.ndarray: [0,1] 内的重建图像
    """
    image = np.asarray(image, dtype=np.float32)
    _check_vae_input(vae, image, vae.spec.input_shape)
    if samples < 1:
        raise DomainError(f"samples 必须 ≥ 1，当前 {samples}")
    batch = np.repeat(image[None], samples, axis=0)
    outputs = vae_reconstruct_batch(vae, batch, [rng.split(s) for s in range(samples)], clip)
    return ensemble_average(list(outputs))


def vae_reconstruct_patchwise(vae, image, patch_size, stride, rng, smooth=False, clip=None,
                              samples=1, kernel='uniform'):
    """
    图像块重建：提取 → 逐块 VAE 重建 → 重叠平均拼接 → 可选 5×5 平滑

    Args:
        vae: 输入为 p×p×C 的 Vae
        image: (H, W, C)
        patch_size: 块边长 p，须等于 VAE 输入尺寸
        stride: 步长 s
        rng: Rng，第 k 个图像块使用 rng.split(k)
        smooth: 是否在拼接后平滑
        clip: 噪声裁剪区间
        samples: 每块随机重建次数
        kernel: 平滑核

    Returns:
        np.ndarray: 同形状图像
    """
    image = np.asarray(image, dtype=np.float32)
    channels = vae.spec.input_shape[2]
    if vae.spec.input_shape[:2] != (patch_size, patch_size):
        raise ShapeError(f"图像块大小 {patch_size} 与 VAE 输入 {list(vae.spec.input_shape)} 不符")
    if image.ndim != 3 or image.shape[2] != channels:
        raise ShapeError(f"图像形状 {list(image.shape)} 与 VAE 通道数 {channels} 不符")
    if samples < 1:
        raise DomainError(f"samples 必须 ≥ 1，当前 {samples}")

    grid, patches = extract_patches(image, patch_size, stride)
    rebuilt = []
    for start in range(0, len(patches), PATCH_BATCH):
        chunk = patches[start:start + PATCH_BATCH]
        outputs = [vae_reconstruct_batch(vae, chunk, [rng.split(start + k).split(s) for k in range(len(chunk))], clip)
                   for s in range(samples)]
        rebuilt.append(outputs[0] if samples == 1 else ensemble_average(outputs))
    out = stitch_patches(grid, np.concatenate(rebuilt, axis=0))
    if smooth:
        out = smooth5x5(out, kernel)
    return out


# =============================================================================
# 变换与防御链
# =============================================================================

class Transform:
    """图像变换基类"""

    type = None

    def apply(self, image, rng):
        raise NotImplementedError

    def describe(self):
        return {'type': self.type}


class IdentityTransform(Transform):
    type = 'identity'

    def apply(self, image, rng):
        return np.asarray(image, dtype=np.float32)


class VaeWholeTransform(Transform):
    type = 'vae-whole'

    def __init__(self, vae, model=None, clip=None, samples=1):
        self.vae = vae
        self.model = model
        self.clip = clip
        self.samples = samples

    def apply(self, image, rng):
        return vae_reconstruct_whole(self.vae, image, rng, self.clip, self.samples)

    def describe(self):
        return {'type': self.type, 'model': self.model, 'samples': self.samples}


class VaePatchTransform(Transform):
    type = 'vae-patch'

    def __init__(self, vae, stride, model=None, smooth=False, clip=None, samples=1, kernel='uniform'):
        self.vae = vae
        self.patch_size = vae.spec.patch_size
        self.stride = stride
        self.model = model
        self.smooth = smooth
        self.clip = clip
        self.samples = samples
        self.kernel = kernel

    def apply(self, image, rng):
        return vae_reconstruct_patchwise(self.vae, image, self.patch_size, self.stride, rng,
                                         self.smooth, self.clip, self.samples, self.kernel)

    def describe(self):
        return {'type': self.type, 'model': self.model, 'patch': self.patch_size,
                'stride': self.stride, 'smooth': self.smooth, 'samples': self.samples}


class SmoothTransform(Transform):
    type = 'smooth5x5'

    def __init__(self, kernel='uniform', sigma=1.0):
        self.kernel = kernel
        self.sigma = sigma

    def apply(self, image, rng):
        return smooth5x5(image, self.kernel, self.sigma)

    def describe(self):
        return {'type': self.type, 'kernel': self.kernel, 'sigma': self.sigma}


class DctQuantTransform(Transform):
    type = 'dct-quant'

    def __init__(self, quality, color_space='rgb'):
        self.quality = quality
        self.color_space = color_space

    def apply(self, image, rng):
        return dct_quant_defense(image, self.quality, self.color_space)

    def describe(self):
        return {'type': self.type, 'quality': self.quality, 'color_space': self.color_space}


class EnsembleTransform(Transform):
    """若干条子链各自净化后逐像素平均，第 j 条子链使用 rng.split(j)"""

    type = 'ensemble'

    def __init__(self, chains):
        if not chains:
            raise ConfigError("ensemble 至少需要一条子链")
        self.chains = chains

    def apply(self, image, rng):
        return ensemble_average([chain.apply_one(image, rng.split(j)) for j, chain in enumerate(self.chains)])

    def describe(self):
        return {'type': self.type, 'chains': [chain.describe() for chain in self.chains]}


def _option(desc, key, default=None):
    value = desc.get(key, default)
    return default if value is None else value


def build_transform(desc, resolve_model):
    """
    由描述字典构建变换

    Args:
        desc: 形如 {'type': 'vae-patch', 'model': 'ckpt/patch32.advdef', 'stride': 16, 'smooth': True}
        resolve_model: 把描述中的 model 字段解析为 Vae 的可调用对象

    Returns:
        Transform

    Raises:
        ConfigError: 未知的变换类型或字段不合法
    """
    kind = desc.get('type')
    if kind == 'identity':
        return IdentityTransform()
    if kind == 'smooth5x5':
        return SmoothTransform(_option(desc, 'kernel', 'uniform'), float(_option(desc, 'sigma', 1.0)))
    if kind == 'dct-quant':
        if 'quality' not in desc:
            raise ConfigError("dct-quant 变换缺少 quality")
        return DctQuantTransform(int(desc['quality']), _option(desc, 'color_space', 'rgb'))
    if kind in ('vae-whole', 'vae-patch'):
        if 'model' not in desc:
            raise ConfigError(f"{kind} 变换缺少 model")
        vae = resolve_model(desc['model'])
        clip = desc.get('clip')
        samples = int(_option(desc, 'samples', 1))
        if kind == 'vae-whole':
            return VaeWholeTransform(vae, desc['model'], clip, samples)
        patch = int(_option(desc, 'patch', vae.spec.patch_size))
        if patch != vae.spec.patch_size:
            raise ConfigError(f"vae-patch 的 patch={patch} 与模型输入尺寸 {vae.spec.patch_size} 不符")
        return VaePatchTransform(vae, int(_option(desc, 'stride', patch)), desc['model'],
                                 bool(_option(desc, 'smooth', False)), clip, samples,
                                 _option(desc, 'kernel', 'uniform'))
    if kind == 'ensemble':
        return EnsembleTransform([DefenseChain.build(chain, resolve_model)
                                  for chain in desc.get('chains', [])])
    raise ConfigError(f"不支持的防御变换: {kind}（可选 {TRANSFORM_TYPES}）")


class DefenseChain:
    """有序的变换链，空链为恒等变换"""

    def __init__(self, transforms, name=None):
        self.transforms = list(transforms)
        self.name = name

    def __len__(self):
        return len(self.transforms)

    @classmethod
    def build(cls, descriptors, resolve_model=None, name=None):
        """由描述字典列表构建防御链"""
        def no_models(model):
            raise ConfigError(f"未提供模型解析器，无法加载 {model}")
        return cls([build_transform(d, resolve_model or no_models) for d in descriptors], name)

    def apply_one(self, image, rng):
        """
        对单幅图像从左到右依次施加变换

        Raises:
            DefenseError: 第一个失败的变换，消息与 index 给出其序号
        """
        out = np.asarray(image, dtype=np.float32)
        for index, transform in enumerate(self.transforms):
            try:
                result = transform.apply(out, rng.split(index))
            except DefenseError:
                raise
            except (AdvDefError, ValueError, ArithmeticError) as e:
                raise DefenseError(f"防御变换 #{index} ({transform.type}) 失败: {e}", index=index) from e
            if result.shape != out.shape:
                raise DefenseError(f"防御变换 #{index} ({transform.type}) 改变了图像形状 "
                                   f"{list(out.shape)} → {list(result.shape)}", index=index)
            out = result
        return out

    def describe(self):
        return [transform.describe() for transform in self.transforms]


def apply_chain(chain, images, rng, parallelism=1):
    """
    对图像批逐图施加防御链

    Args:
        chain: DefenseChain
        images: (N, H, W, C)
        rng: Rng，第 i 张图像使用 rng.split(i)
        parallelism: 线程数（输出顺序与并行度无关）

    Returns:
        np.ndarray: 净化后的图像批
    """
    images = np.asarray(images, dtype=np.float32)
    if images.shape[0] == 0 or len(chain) == 0:
        return images.copy()
    outputs = ordered_map(lambda i: chain.apply_one(images[i], rng.split(i)),
                          range(images.shape[0]), parallelism)
    return np.stack(outputs)
