"""
攻击-防御扫描

对 ε 网格中的每个取值：攻击一次，再用同一对抗批次评估每个防御列。
行按顺序执行以共享对抗批次；单元内按图像并行，输出顺序与并行度无关。
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from common.errors import AdvDefError, DomainError, ConfigError, FormatError
from common.parallel import resolve_threads
from algorithms.attacks import attack_batch
from algorithms.defenses import DefenseChain
from tensorcore import Rng
from .metrics import l2_relative_diff, top1_accuracy

logger = logging.getLogger(__name__)

FIXED_COLUMNS = ('epsilon', 'l2_diff')


@dataclass
class SweepResult:
    """
    扫描结果

    rows 每行为 {'epsilon', 'l2_diff', <列名>: 准确率}；counts 为每行每列参与评估的样本数；
    fingerprints 为每行对抗批次的指纹，cell_fingerprints 记录每个单元实际评估的批次指纹。
    """

    columns: list
    rows: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    fingerprints: list = field(default_factory=list)
    cell_fingerprints: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def header(self):
        return list(FIXED_COLUMNS) + list(self.columns)

    def column(self, name):
        return [row[name] for row in self.rows]

    def to_frame(self):
        """转换为 pandas.DataFrame，列顺序为 epsilon, l2_diff, <列名...>"""
        return pd.DataFrame(self.rows, columns=self.header)

    @classmethod
    def from_frame(cls, frame):
        header = list(frame.columns)
        if header[:2] != list(FIXED_COLUMNS):
            raise FormatError(f"结果表的前两列必须为 {list(FIXED_COLUMNS)}，当前 {header[:2]}")
        rows = [{name: float(value) for name, value in zip(header, values)}
                for values in frame.itertuples(index=False, name=None)]
        return cls(header[2:], rows)


def _named_chains(columns, resolve_model):
    """把 (名称, 描述列表) 或 DefenseChain 转为命名的 DefenseChain"""
    chains = []
    for column in columns:
        if isinstance(column, DefenseChain):
            chains.append(column)
        else:
            name, descriptors = column
            chains.append(DefenseChain.build(descriptors, resolve_model, name))
    names = [chain.name for chain in chains]
    if None in names or len(set(names)) != len(names):
        raise ConfigError(f"防御列必须有唯一的名称: {names}")
    return chains


def evaluate_cell(classifier, batch, chain, rng, parallelism):
    """
    在一个对抗批次上评估一个防御列

    Returns:
        tuple: (准确率, 样本数, 批次指纹)
    """
    accuracy = top1_accuracy(classifier, batch.perturbed, batch.labels, chain, rng, parallelism)
    return accuracy, len(batch), batch.fingerprint()


def run_sweep(classifier, attack_config, epsilons, columns, images, labels, seed=0,
              parallelism=None, dataset_tag=None, resolve_model=None, progress=True):
    """
    执行攻击-防御扫描

    Args:
        classifier: Classifier（只读共享）
        attack_config: AttackConfig，epsilon 字段由网格覆盖
        epsilons: ε 网格（非空）
        columns: 防御列，DefenseChain（须有 name）或 (名称, 链描述) 元组
        images: (N, H, W, C) 评估切片
        labels: (N,)
        seed: 防御链随机数种子
        parallelism: 线程数，None 时读取 ADVDEF_THREADS
        dataset_tag: ε 范围检查使用的数据集标签
        resolve_model: 链描述中 model 字段的解析器
        progress: 是否显示进度条

    Returns:
        SweepResult: 单元失败记入 failures 且准确率为 nan，扫描不中断

    Raises:
        DomainError: ε 网格为空
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise DomainError("ε 网格不能为空")
    chains = _named_chains(columns, resolve_model)
    threads = resolve_threads(parallelism)
    root = Rng(seed).split(2)
    result = SweepResult([chain.name for chain in chains])
    start_time = time.time()

    for row_index, epsilon in enumerate(tqdm(epsilons, desc="扫描 ε", disable=not progress)):
        config = attack_config.with_epsilon(epsilon)
        batch = attack_batch(config, classifier, images, labels, threads, dataset_tag)
        for failure in batch.failures:
            result.failures.append({'epsilon': epsilon, 'column': 'attack', **failure})

        try:
            l2_diff = l2_relative_diff(batch.originals, batch.perturbed)
        except DomainError as e:
            result.failures.append({'epsilon': epsilon, 'column': 'l2_diff', 'reason': str(e)})
            l2_diff = float(np.nanmean(batch.l2_ratios)) if len(batch) else float('nan')

        row = {'epsilon': epsilon, 'l2_diff': l2_diff}
        counts = {}
        cells = {}
        row_rng = root.split(row_index)
        for column_index, chain in enumerate(chains):
            try:
                accuracy, count, fingerprint = evaluate_cell(
                    classifier, batch, chain, row_rng.split(column_index), threads)
            except AdvDefError as e:
                logger.warning(f"ε={epsilon} 防御列 {chain.name} 失败: {e}")
                result.failures.append({'epsilon': epsilon, 'column': chain.name,
                                        'reason': str(e), 'index': getattr(e, 'index', None)})
                accuracy, count, fingerprint = float('nan'), 0, None
            row[chain.name] = accuracy
            counts[chain.name] = count
            cells[chain.name] = fingerprint

        result.rows.append(row)
        result.counts.append(counts)
        result.fingerprints.append(batch.fingerprint())
        result.cell_fingerprints.append(cells)
        logger.info(f"ε={epsilon:.3f} L2 diff={l2_diff:.3f} " +
                    " ".join(f"{name}={row[name]:.3f}" for name in result.columns))

    if result.failures:
        logger.warning(f"扫描完成，共 {len(result.failures)} 项失败")
    logger.info(f"扫描 {len(epsilons)} 个 ε × {len(chains)} 列耗时 {time.time() - start_time:.1f} 秒")
    return result
