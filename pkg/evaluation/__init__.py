# evaluation/__init__.py
"""
评估模块
包含评估指标、攻击-防御扫描、报表与实验配置
"""

from .metrics import l2_relative_diff, l2_ratios, top1_accuracy, psnr
from .sweep import SweepResult, run_sweep
from .report import emit_csv, emit_markdown, emit_xlsx, plot_curves, emit_report, parse_csv, render_markdown
from .config import (DatasetConfig, ModelConfig, DefenseColumn, SweepConfig, ExperimentConfig,
                     load_config)

__all__ = ['l2_relative_diff', 'l2_ratios', 'top1_accuracy', 'psnr',
           'SweepResult', 'run_sweep',
           'emit_csv', 'emit_markdown', 'emit_xlsx', 'plot_curves', 'emit_report', 'parse_csv',
           'render_markdown',
           'DatasetConfig', 'ModelConfig', 'DefenseColumn', 'SweepConfig', 'ExperimentConfig',
           'load_config']
