"""
数据集
"""

from dataclasses import dataclass

import numpy as np

from common.errors import ShapeError, DomainError

SPLITS = ('train', 'test')


@dataclass
class Dataset:
    """
    图像数据集

    images 为 (N, H, W, C) 的 [0,1] float32 数组，labels 为 (N,) 的整数标签。
    """

    name: str
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = 'test'

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 4:
            raise ShapeError(f"图像数组必须为 N×H×W×C，当前 {list(self.images.shape)}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"图像数 {self.images.shape[0]} 与标签数 {self.labels.shape[0]} 不一致")
        if self.split not in SPLITS:
            raise DomainError(f"不支持的划分: {self.split}")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def take(self, count, start=0):
        """取 [start, start + count) 的切片"""
        stop = min(start + count, len(self))
        return Dataset(self.name, self.images[start:stop], self.labels[start:stop],
                       self.num_classes, self.split)

    def split_at(self, count):
        """把前 count 个样本作为训练集，其余作为测试集"""
        train = Dataset(self.name, self.images[:count], self.labels[:count], self.num_classes, 'train')
        test = Dataset(self.name, self.images[count:], self.labels[count:], self.num_classes, 'test')
        return train, test


def validate_dataset(dataset):
    """
    验证数据集的完整性

    Args:
        dataset: Dataset

    Returns:
        dict: 验证结果 {'valid', 'errors', 'warnings', 'stats'}
    """
    result = {
        'valid': True,
        'errors': [],
        'warnings': [],
        'stats': {
            'count': len(dataset),
            'image_shape': list(dataset.image_shape),
            'class_counts': {},
            'pixel_min': None,
            'pixel_max': None,
        }
    }

    if len(dataset) == 0:
        result['warnings'].append("数据集为空")
        return result

    labels = dataset.labels
    counts = np.bincount(np.clip(labels, 0, None), minlength=dataset.num_classes)
    result['stats']['class_counts'] = {int(k): int(v) for k, v in enumerate(counts) if v}
    result['stats']['pixel_min'] = float(dataset.images.min())
    result['stats']['pixel_max'] = float(dataset.images.max())

    # 标签范围
    bad_labels = int(np.sum((labels < 0) | (labels >= dataset.num_classes)))
    if bad_labels:
        result['valid'] = False
        result['errors'].append(f"{bad_labels} 个标签超出 [0, {dataset.num_classes})")

    # 像素范围
    if result['stats']['pixel_min'] < 0 or result['stats']['pixel_max'] > 1:
        result['valid'] = False
        result['errors'].append("像素值超出 [0, 1]")

    if not np.all(np.isfinite(dataset.images)):
        result['valid'] = False
        result['errors'].append("图像中包含非有限值")

    missing = [k for k in range(dataset.num_classes) if counts[k] == 0] if not bad_labels else []
    if missing:
        result['warnings'].append(f"{len(missing)} 个类别没有样本: {missing}")

    return result
