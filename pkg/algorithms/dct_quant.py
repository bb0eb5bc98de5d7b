"""
块 DCT 量化防御（JPEG 式有损压缩，不含熵编码）

流程：像素 ×255 − 128 → 8×8 正交 DCT-II → 除以按质量缩放的量化表 → 取整 → 乘回 → 逆 DCT → 裁剪到 [0,1]。
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from common.errors import ShapeError, DomainError

BLOCK = 8
COLOR_SPACES = ('rgb', 'ycbcr')

# 标准亮度量化表（ITU T.81 Annex K）
LUMINANCE_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

# 标准色度量化表（ITU T.81 Annex K）
CHROMINANCE_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def check_quality(quality):
    if isinstance(quality, bool) or int(quality) != quality or not 1 <= quality <= 100:
        raise DomainError(f"JPEG 质量必须是 [1, 100] 内的整数，当前 {quality}")
    return int(quality)


def scale_table(base, quality):
    """
    按质量缩放量化表

    q < 50 时 scale = 5000 / q，否则 scale = 200 − 2q；
    表项 = clamp(⌊(base·scale + 50) / 100⌋, 1, 255)。
    """
    quality = check_quality(quality)
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((base * scale + 50) // 100, 1, 255).astype(np.int64)


@dataclass
class QuantTables:
    """按质量缩放后的亮度/色度量化表"""

    quality: int
    luminance: np.ndarray
    chrominance: np.ndarray

    @classmethod
    def for_quality(cls, quality):
        return cls(check_quality(quality), scale_table(LUMINANCE_BASE, quality),
                   scale_table(CHROMINANCE_BASE, quality))


def _check_block(block):
    block = np.asarray(block, dtype=np.float64)
    if block.ndim < 2 or block.shape[-2:] != (BLOCK, BLOCK):
        raise ShapeError(f"DCT 需要 8×8 块，当前 {list(block.shape)}")
    return block


def dct8x8(block):
    """正交二维 DCT-II（作用于最后两维）"""
    return dctn(_check_block(block), norm='ortho', axes=(-2, -1))


def idct8x8(coefficients):
    """dct8x8 的精确逆变换"""
    return idctn(_check_block(coefficients), norm='ortho', axes=(-2, -1))


# RGB ↔ YCbCr（JFIF 全范围，作用于 0..255 像素）
_RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycbcr(pixels):
    return pixels @ _RGB_TO_YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(pixels):
    return (pixels - _YCBCR_OFFSET) @ np.linalg.inv(_RGB_TO_YCBCR).T


def _quantize_blocks(pixels, tables):
    """
    pixels: (N, H, W, C) 0..255 像素，H、W 为 8 的倍数
    tables: (C, 8, 8) 每通道量化表
    """
    n, h, w, c = pixels.shape
    blocks = (pixels - 128.0).reshape(n, h // BLOCK, BLOCK, w // BLOCK, BLOCK, c)
    table = tables.transpose(1, 2, 0)[None, None, :, None, :, :].astype(np.float64)
    coefficients = dctn(blocks, norm='ortho', axes=(2, 4))
    quantized = np.round(coefficients / table) * table
    restored = idctn(quantized, norm='ortho', axes=(2, 4)) + 128.0
    return restored.reshape(n, h, w, c)


def dct_quant_defense(image, quality, color_space='rgb'):
    """
    DCT 量化防御

    Args:
        image: (H, W, C) 或 (N, H, W, C) 的 [0,1] 图像
        quality: JPEG 质量 [1, 100]
        color_space: 'rgb' 时每个通道都使用亮度表；
            'ycbcr' 时三通道图像先转 YCbCr，Y 用亮度表、Cb/Cr 用色度表（无色度下采样）

    Returns:
        np.ndarray: 同形状的 float32 图像，取值 [0,1]
    """
    tables = QuantTables.for_quality(quality)
    if color_space not in COLOR_SPACES:
        raise ValueError(f"不支持的颜色空间: {color_space}")
    image = np.asarray(image, dtype=np.float64)
    single = image.ndim == 3
    batch = image[None] if single else image
    if batch.ndim != 4:
        raise ShapeError(f"需要 H×W×C 图像或 N×H×W×C 图像批，当前 {list(image.shape)}")
    n, h, w, c = batch.shape

    pixels = batch * 255.0
    use_ycbcr = color_space == 'ycbcr' and c == 3
    if use_ycbcr:
        pixels = rgb_to_ycbcr(pixels)
        per_channel = np.stack([tables.luminance, tables.chrominance, tables.chrominance])
    else:
        per_channel = np.stack([tables.luminance] * c)

    pad_h, pad_w = (-h) % BLOCK, (-w) % BLOCK
    padded = np.pad(pixels, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), mode='edge')
    restored = _quantize_blocks(padded, per_channel)[:, :h, :w, :]
    if use_ycbcr:
        restored = ycbcr_to_rgb(restored)

    out = np.clip(restored / 255.0, 0.0, 1.0).astype(np.float32)
    return out[0] if single else out
