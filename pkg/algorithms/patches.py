"""
图像块提取与拼接
"""

from dataclasses import dataclass

import numpy as np

from common.errors import ShapeError, DomainError


def axis_anchors(length, patch_size, stride):
    """单轴锚点 0, s, 2s, ...，末尾锚点固定为 length − p 以覆盖边缘"""
    anchors = list(range(0, length - patch_size + 1, stride))
    if anchors[-1] != length - patch_size:
        anchors.append(length - patch_size)
    return anchors


@dataclass
class PatchGrid:
    """图像块网格，锚点按行主序排列"""

    patch_size: int
    stride: int
    height: int
    width: int
    channels: int
    anchors: list

    @classmethod
    def build(cls, image_shape, patch_size, stride):
        """
        生成覆盖整幅图像的网格

        Args:
            image_shape: (H, W, C)
            patch_size: 块边长 p
            stride: 步长 s，1 ≤ s ≤ p

        Raises:
            ShapeError: p 超出图像尺寸
            DomainError: 步长非法
        """
        height, width, channels = image_shape
        if patch_size < 1 or patch_size > min(height, width):
            raise ShapeError(f"图像块大小 {patch_size} 超出图像 {height}×{width}")
        if not 1 <= stride <= patch_size:
            raise DomainError(f"步长必须在 [1, {patch_size}] 内，当前 {stride}")
        rows = axis_anchors(height, patch_size, stride)
        cols = axis_anchors(width, patch_size, stride)
        anchors = [(r, c) for r in rows for c in cols]
        return cls(patch_size, stride, height, width, channels, anchors)

    def __len__(self):
        return len(self.anchors)

    @property
    def image_shape(self):
        return (self.height, self.width, self.channels)

    def coverage(self):
        """每个像素被覆盖的次数 (H, W)"""
        counts = np.zeros((self.height, self.width), dtype=np.int64)
        p = self.patch_size
        for r, c in self.anchors:
            counts[r:r + p, c:c + p] += 1
        return counts


def extract_patches(image, patch_size, stride):
    """
    按网格提取图像块

    Args:
        image: (H, W, C) 图像
        patch_size: 块边长
        stride: 步长

    Returns:
        tuple: (PatchGrid, (K, p, p, C) 图像块数组)
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"需要 H×W×C 图像，当前 {list(image.shape)}")
    grid = PatchGrid.build(image.shape, patch_size, stride)
    p = patch_size
    patches = np.stack([image[r:r + p, c:c + p, :] for r, c in grid.anchors])
    return grid, patches


def stitch_patches(grid, patches):
    """
    拼接图像块，重叠部分取平均（64 位累加）

    Args:
        grid: PatchGrid
        patches: (K, p, p, C)

    Returns:
        np.ndarray: (H, W, C) float32 图像

    Raises:
        ShapeError: 块数量或形状与网格不符
    """
    patches = np.asarray(patches)
    p = grid.patch_size
    expected = (len(grid), p, p, grid.channels)
    if patches.shape != expected:
        raise ShapeError(f"图像块形状 {list(patches.shape)} 与网格 {list(expected)} 不符")
    total = np.zeros(grid.image_shape, dtype=np.float64)
    for (r, c), patch in zip(grid.anchors, patches):
        total[r:r + p, c:c + p, :] += patch
    counts = grid.coverage()[:, :, None]
    return (total / counts).astype(np.float32)
