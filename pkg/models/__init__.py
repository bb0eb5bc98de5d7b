# models/__init__.py
"""
模型层模块
包含分类器与 VAE 的架构描述、预设、前向计算与训练循环
"""

from .specs import ClassifierSpec, VaeSpec, TrainReport, spec_from_dict, describe
from .presets import get_preset, PRESETS
from .classifier import Classifier, classifier_forward, init_classifier
from .vae import (Vae, init_vae, vae_encode, vae_sample, vae_decode, vae_loss,
                  kl_gaussian, kl_from_logvar)
from .trainer import train_classifier, train_vae, sample_patches, early_stop_reached

__all__ = ['ClassifierSpec', 'VaeSpec', 'TrainReport', 'spec_from_dict', 'describe',
           'get_preset', 'PRESETS',
           'Classifier', 'classifier_forward', 'init_classifier',
           'Vae', 'init_vae', 'vae_encode', 'vae_sample', 'vae_decode', 'vae_loss',
           'kl_gaussian', 'kl_from_logvar',
           'train_classifier', 'train_vae', 'sample_patches', 'early_stop_reached']
