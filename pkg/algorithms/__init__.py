# algorithms/__init__.py
"""
算法模块
包含白盒梯度攻击与输入净化防御
"""

from .attacks import (AttackConfig, AdversarialBatch, GradientAttacker, attack_batch,
                      fgsm, ifgsm, l2_ratios, check_epsilon_range, EPSILON_RANGES)
from .patches import PatchGrid, extract_patches, stitch_patches
from .smoothing import smooth5x5
from .dct_quant import QuantTables, dct8x8, idct8x8, dct_quant_defense
from .defenses import (DefenseChain, apply_chain, ensemble_average, build_transform,
                       vae_reconstruct_whole, vae_reconstruct_patchwise)

__all__ = ['AttackConfig', 'AdversarialBatch', 'GradientAttacker', 'attack_batch',
           'fgsm', 'ifgsm', 'l2_ratios', 'check_epsilon_range', 'EPSILON_RANGES',
           'PatchGrid', 'extract_patches', 'stitch_patches', 'smooth5x5',
           'QuantTables', 'dct8x8', 'idct8x8', 'dct_quant_defense',
           'DefenseChain', 'apply_chain', 'ensemble_average', 'build_transform',
           'vae_reconstruct_whole', 'vae_reconstruct_patchwise']
