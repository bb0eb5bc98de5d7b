"""
合成数据集

用 PIL.ImageDraw 程序化绘制类条件图案（几何形状与条纹纹理），
位置、大小、颜色与噪声随机抖动，给定种子时逐位可复现。
"""

import logging

import numpy as np
from PIL import Image, ImageDraw

from common.errors import ShapeError, DomainError
from tensorcore import Rng
from .dataset import Dataset

logger = logging.getLogger(__name__)

SHAPE_PATTERNS = ('circle', 'square', 'triangle', 'cross', 'ring',
                  'h-stripes', 'v-stripes', 'd-stripes', 'checker', 'frame')
SYNTH_KINDS = ('shapes', 'textures')
NOISE_STD = 0.02


def _random_color(rng, lo, hi):
    return tuple(int(v) for v in rng.integers(lo, hi, size=3))


def _draw_shape(draw, pattern, box, color, size, rng):
    """在 box = (x0, y0, x1, y1) 内绘制一个图案"""
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    extent = x1 - x0
    line = max(1, extent // 6)

    if pattern == 'circle':
        draw.ellipse(box, fill=color)
    elif pattern == 'square':
        draw.rectangle(box, fill=color)
    elif pattern == 'triangle':
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=color)
    elif pattern == 'cross':
        draw.rectangle((cx - line, y0, cx + line, y1), fill=color)
        draw.rectangle((x0, cy - line, x1, cy + line), fill=color)
    elif pattern == 'ring':
        draw.ellipse(box, outline=color, width=line)
    elif pattern == 'frame':
        draw.rectangle(box, outline=color, width=line)
    else:
        period = max(4, int(rng.integers(size // 8, size // 4 + 1)))
        _draw_texture(draw, pattern, size, period, color)


def _draw_texture(draw, pattern, size, period, color):
    """覆盖整幅画布的纹理"""
    half = max(1, period // 2)
    if pattern == 'h-stripes':
        for y in range(0, size, period):
            draw.rectangle((0, y, size, y + half - 1), fill=color)
    elif pattern == 'v-stripes':
        for x in range(0, size, period):
            draw.rectangle((x, 0, x + half - 1, size), fill=color)
    elif pattern == 'd-stripes':
        for offset in range(-size, size, period):
            draw.line((offset, 0, offset + size, size), fill=color, width=half)
    elif pattern == 'checker':
        for y in range(0, size, period):
            for x in range(0, size, period):
                if (x // period + y // period) % 2 == 0:
                    draw.rectangle((x, y, x + period - 1, y + period - 1), fill=color)
    else:
        raise ValueError(f"不支持的图案: {pattern}")


def render_pattern(pattern, height, width, channels, rng):
    """
    绘制一幅图案图像

    Args:
        pattern: SHAPE_PATTERNS 中的名称
        height, width, channels: 图像尺寸（channels 为 1 或 3）
        rng: Rng

    Returns:
        np.ndarray: (H, W, C) 的 [0,1] float32 图像
    """
    size = max(height, width)
    background = _random_color(rng, 0, 80)
    foreground = _random_color(rng, 150, 256)
    canvas = Image.new('RGB', (size, size), background)
    draw = ImageDraw.Draw(canvas)

    extent = int(rng.integers(size // 2, size * 3 // 4 + 1))
    x0 = int(rng.integers(0, size - extent + 1))
    y0 = int(rng.integers(0, size - extent + 1))
    _draw_shape(draw, pattern, (x0, y0, x0 + extent - 1, y0 + extent - 1), foreground, size, rng)

    if channels == 1:
        canvas = canvas.convert('L')
    pixels = np.asarray(canvas, dtype=np.float32).reshape(size, size, channels)[:height, :width] / 255.0
    noise = rng.normal((height, width, channels)) * np.float32(NOISE_STD)
    return np.clip(pixels + noise, 0.0, 1.0).astype(np.float32)


def synth_dataset(kind='shapes', n=1000, height=64, width=64, channels=3, num_classes=10,
                  seed=0, split='train'):
    """
    生成合成数据集

    Args:
        kind: 'shapes'（形状与纹理混合）或 'textures'（仅纹理，类别由纹理方向区分）
        n: 样本数（可为 0）
        height, width, channels: 图像尺寸
        num_classes: 类别数 m（≥ 2）
        seed: 随机种子
        split: 'train' 或 'test'

    Returns:
        Dataset

    Raises:
        DomainError: 类别数非法
        ShapeError: 图像尺寸非法
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"不支持的合成数据类型: {kind}")
    if height < 8 or width < 8 or channels not in (1, 3) or n < 0:
        raise ShapeError(f"非法的合成图像尺寸 N={n}, {height}×{width}×{channels}")
    limit = len(SHAPE_PATTERNS) if kind == 'shapes' else 4
    if not 2 <= num_classes <= limit:
        raise DomainError(f"{kind} 合成数据的类别数必须在 [2, {limit}] 内，当前 {num_classes}")

    root = Rng(seed)
    labels = (np.arange(n) % num_classes)[root.split(0).permutation(n)] if n else np.zeros(0, np.int64)
    images = np.zeros((n, height, width, channels), dtype=np.float32)
    textures = ('h-stripes', 'v-stripes', 'd-stripes', 'checker')
    for i in range(n):
        pattern = SHAPE_PATTERNS[labels[i]] if kind == 'shapes' else textures[labels[i]]
        images[i] = render_pattern(pattern, height, width, channels, root.split(1).split(i))

    logger.info(f"已生成 {n} 张 {height}×{width}×{channels} 合成图像（{kind}, {num_classes} 类, seed={seed}）")
    return Dataset(f"synthetic-{kind}", images, labels.astype(np.int64), num_classes, split)
