# data/__init__.py
"""
数据层模块
包含数据集、IDX 加载器、合成数据与检查点持久化
"""

from .dataset import Dataset, validate_dataset
from .idx_loader import IdxLoader, load_idx
from .synthetic import synth_dataset, SHAPE_PATTERNS
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, encode_checkpoint, decode_checkpoint

__all__ = ['Dataset', 'validate_dataset', 'IdxLoader', 'load_idx',
           'synth_dataset', 'SHAPE_PATTERNS',
           'Checkpoint', 'save_checkpoint', 'load_checkpoint', 'encode_checkpoint', 'decode_checkpoint']
