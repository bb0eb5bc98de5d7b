# common/__init__.py
"""
公共模块
包含异常层级、日志配置与并行工具
"""

from .errors import (AdvDefError, ShapeError, DomainError, TapeError,
                     FormatError, ConfigError, DefenseError)
from .logger import setup_logging
from .parallel import resolve_threads, ordered_map

__all__ = ['AdvDefError', 'ShapeError', 'DomainError', 'TapeError',
           'FormatError', 'ConfigError', 'DefenseError',
           'setup_logging', 'resolve_threads', 'ordered_map']
