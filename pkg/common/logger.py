"""
日志配置模块
"""

import logging
import os

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def setup_logging(level=None, log_file=None):
    """
    配置根日志器

    Args:
        level: 日志级别名称，缺省时读取环境变量 ADVDEF_LOG_LEVEL，再缺省为 INFO
        log_file: 可选的日志文件路径

    Returns:
        logging.Logger: 根日志器
    """
    level_name = (level or os.environ.get("ADVDEF_LOG_LEVEL") or "INFO").upper()
    numeric_level = getattr(logging, level_name, None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"不支持的日志级别: {level_name}")

    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(level=numeric_level, format=LOG_FORMAT,
                        handlers=handlers, force=True)
    return logging.getLogger()
