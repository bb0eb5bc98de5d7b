"""
并行工具

所有并行都以 “固定分块 + 有序收集” 的方式进行，输出顺序与并行度无关。
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def resolve_threads(requested=None):
    """
    解析并行度

    Args:
        requested: 显式请求的线程数，None 时读取 ADVDEF_THREADS

    Returns:
        int: 实际线程数（≥ 1，且不超过 ADVDEF_THREADS 上限）
    """
    env_value = os.environ.get("ADVDEF_THREADS")
    cap = None
    if env_value:
        try:
            cap = max(1, int(env_value))
        except ValueError:
            logger.warning(f"忽略非法的 ADVDEF_THREADS: {env_value}")

    threads = requested if requested is not None else (cap or 1)
    threads = max(1, int(threads))
    if cap is not None:
        threads = min(threads, cap)
    return threads


def ordered_map(func, items, parallelism=1):
    """
    按输入顺序返回 func(item) 的结果列表

    Args:
        func: 单参数函数
        items: 输入序列
        parallelism: 线程数

    Returns:
        list: 与 items 一一对应的结果
    """
    items = list(items)
    if parallelism <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(func, items))
