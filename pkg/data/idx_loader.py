"""
IDX 数据集加载器模块
支持 MNIST 的 IDX 格式（大端序，可选 gzip 压缩）
"""

import gzip
import logging
import os
import struct

import numpy as np

from common.errors import FormatError
from .dataset import Dataset

logger = logging.getLogger(__name__)

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803
GZIP_MAGIC = b'\x1f\x8b'

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


class IdxLoader:
    """IDX 文件加载器"""

    @staticmethod
    def read_bytes(path):
        """读取文件内容，按魔数自动解压 gzip"""
        try:
            with open(path, 'rb') as f:
                raw = f.read()
        except OSError as e:
            raise FormatError(f"无法读取 IDX 文件 {path}: {e}")
        if raw[:2] == GZIP_MAGIC:
            try:
                raw = gzip.decompress(raw)
            except (OSError, EOFError) as e:
                raise FormatError(f"gzip 解压失败 {path}: {e}")
        return raw

    @staticmethod
    def parse(raw, path='<bytes>'):
        """
        解析 IDX 字节串

        Args:
            raw: 文件内容（已解压）
            path: 用于错误消息的文件名

        Returns:
            np.ndarray: uint8 数组，rank 1（标签）或 rank 3（图像）

        Raises:
            FormatError: 魔数错误或数据被截断，消息带字节偏移
        """
        if len(raw) < 4:
            raise FormatError(f"{path}: 文件在字节偏移 {len(raw)} 处被截断（缺少魔数）")
        magic, = struct.unpack('>I', raw[:4])
        if magic not in (IDX_LABEL_MAGIC, IDX_IMAGE_MAGIC):
            raise FormatError(f"{path}: 魔数错误 0x{magic:08x}（期望 0x{IDX_LABEL_MAGIC:08x} 或 0x{IDX_IMAGE_MAGIC:08x}）")

        rank = magic & 0xFF
        header_end = 4 + 4 * rank
        if len(raw) < header_end:
            raise FormatError(f"{path}: 文件在字节偏移 {len(raw)} 处被截断（维度头需要 {header_end} 字节）")
        dims = struct.unpack(f'>{rank}I', raw[4:header_end])

        expected = int(np.prod(dims, dtype=np.int64))
        available = len(raw) - header_end
        if available < expected:
            raise FormatError(f"{path}: 数据在字节偏移 {len(raw)} 处被截断"
                              f"（期望 {header_end + expected} 字节）")
        if available > expected:
            logger.warning(f"{path}: 文件末尾有 {available - expected} 个多余字节，已忽略")
        return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)

    @staticmethod
    def read_idx(path):
        return IdxLoader.parse(IdxLoader.read_bytes(path), path)

    @staticmethod
    def load_idx(images_path, labels_path, name='mnist', split='test', num_classes=10):
        """
        加载成对的图像与标签文件

        Args:
            images_path: 图像文件（magic 0x00000803）
            labels_path: 标签文件（magic 0x00000801）

        Returns:
            Dataset: 像素缩放到 [0,1]，形状 (N, H, W, 1)

        Raises:
            FormatError: 格式错误或图像/标签数量不一致
        """
        images = IdxLoader.read_idx(images_path)
        labels = IdxLoader.read_idx(labels_path)
        if images.ndim != 3:
            raise FormatError(f"{images_path}: 不是图像文件（rank {images.ndim}）")
        if labels.ndim != 1:
            raise FormatError(f"{labels_path}: 不是标签文件（rank {labels.ndim}）")
        if images.shape[0] != labels.shape[0]:
            raise FormatError(f"图像数 {images.shape[0]} 与标签数 {labels.shape[0]} 不一致")

        pixels = (images.astype(np.float32) / np.float32(255.0))[..., None]
        logger.info(f"已加载 {images.shape[0]} 张 {images.shape[1]}×{images.shape[2]} 图像: {images_path}")
        return Dataset(name, pixels, labels.astype(np.int64), num_classes, split)

    @staticmethod
    def find_files(directory, split):
        """在目录中查找标准 MNIST 文件名（优先未压缩，其次 .gz）"""
        paths = []
        for stem in MNIST_FILES[split]:
            for candidate in (stem, stem + '.gz'):
                path = os.path.join(directory, candidate)
                if os.path.exists(path):
                    paths.append(path)
                    break
            else:
                raise FormatError(f"目录 {directory} 中缺少 {stem}[.gz]")
        return tuple(paths)

    @staticmethod
    def load_mnist(directory, split='test'):
        images_path, labels_path = IdxLoader.find_files(directory, split)
        return IdxLoader.load_idx(images_path, labels_path, 'mnist', split)

    @staticmethod
    def write_idx(path, array, compress=False):
        """把 uint8 数组写成 IDX 文件（rank 1 或 3）"""
        array = np.asarray(array, dtype=np.uint8)
        if array.ndim not in (1, 3):
            raise FormatError(f"IDX 只支持 rank 1 或 3，当前 {array.ndim}")
        magic = IDX_LABEL_MAGIC if array.ndim == 1 else IDX_IMAGE_MAGIC
        payload = struct.pack('>I', magic) + struct.pack(f'>{array.ndim}I', *array.shape) + array.tobytes()
        opener = gzip.open if compress else open
        with opener(path, 'wb') as f:
            f.write(payload)


def load_idx(images_path, labels_path, **kwargs):
    return IdxLoader.load_idx(images_path, labels_path, **kwargs)
