"""
5×5 平滑滤波

逐通道滤波，边缘以复制方式填充，形状不变。
"""

import numpy as np
from scipy.ndimage import uniform_filter, gaussian_filter

SMOOTH_KERNELS = ('uniform', 'gaussian')
SMOOTH_SIZE = 5


def smooth5x5(image, kernel='uniform', sigma=1.0):
    """
    5×5 平滑

    Args:
        image: (H, W, C) 图像或 (N, H, W, C) 图像批
        kernel: 'uniform'（均值）或 'gaussian'（截断到 5×5 支撑）
        sigma: 高斯核标准差

    Returns:
        np.ndarray: 同形状的 float32 图像
    """
    image = np.asarray(image, dtype=np.float32)
    spatial = (SMOOTH_SIZE, SMOOTH_SIZE)
    lead = (1,) * (image.ndim - 3)
    if kernel == 'uniform':
        out = uniform_filter(image, size=lead + spatial + (1,), mode='nearest')
    elif kernel == 'gaussian':
        radius = SMOOTH_SIZE // 2
        out = gaussian_filter(image, sigma=(0,) * len(lead) + (sigma, sigma, 0),
                              mode='nearest', truncate=radius / sigma)
    else:
        raise ValueError(f"不支持的平滑核: {kernel}")
    return out.astype(np.float32)
