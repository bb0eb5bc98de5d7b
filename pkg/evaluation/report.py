"""
扫描结果报表：CSV、Markdown、Excel 与曲线图
"""

import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from common.errors import DomainError, FormatError  # noqa: E402
from .sweep import SweepResult  # noqa: E402

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.3f'


def _check_result(result):
    if len(result) == 0:
        raise DomainError("扫描结果为空，无法输出报表")


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as e:
        raise FormatError(f"无法创建输出目录 {parent}: {e}")


def emit_csv(result, path):
    """
    写出 CSV：表头 epsilon,l2_diff,<列名...>，浮点保留 3 位小数

    Raises:
        DomainError: 结果为空
        FormatError: 路径不可写
    """
    _check_result(result)
    _ensure_parent(path)
    try:
        result.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='nan')
    except OSError as e:
        raise FormatError(f"无法写入 CSV {path}: {e}")
    logger.info(f"已写出 {len(result)} 行结果到 {path}")


def parse_csv(path):
    """
    读取 emit_csv 写出的文件

    Raises:
        FormatError: 文件不可读或表头不符
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"无法解析 CSV {path}: {e}")
    return SweepResult.from_frame(frame)


def _cell(value):
    return 'nan' if value != value else FLOAT_FORMAT % value


def render_markdown(result):
    """Markdown 表格文本，列数 = 防御列数 + 2"""
    _check_result(result)
    header = ['ε', 'L2 diff'] + list(result.columns)
    lines = ['| ' + ' | '.join(header) + ' |',
             '|' + '|'.join(['---'] * len(header)) + '|']
    for row in result.rows:
        cells = [_cell(row[name]) for name in result.header]
        lines.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines) + '\n'


def emit_markdown(result, path):
    """写出 Markdown 表格"""
    text = render_markdown(result)
    _ensure_parent(path)
    try:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        raise FormatError(f"无法写入 Markdown {path}: {e}")
    logger.info(f"已写出 Markdown 表格到 {path}")


def emit_xlsx(result, path):
    """经由 pandas/openpyxl 写出 Excel 表格（数值保留 3 位小数）"""
    _check_result(result)
    _ensure_parent(path)
    try:
        result.to_frame().round(3).to_excel(path, index=False, engine='openpyxl')
    except OSError as e:
        raise FormatError(f"无法写入 Excel {path}: {e}")
    logger.info(f"已写出 Excel 表格到 {path}")


def plot_curves(result, path, title=None):
    """每个防御列一条 “准确率 vs 平均相对 L2 差” 曲线"""
    _check_result(result)
    _ensure_parent(path)
    frame = result.to_frame().sort_values('l2_diff')
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name in result.columns:
        ax.plot(frame['l2_diff'], frame[name], marker='o', label=name)
    ax.set_xlabel('L2 diff')
    ax.set_ylabel('top-1 accuracy')
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    try:
        fig.savefig(path)
    except OSError as e:
        raise FormatError(f"无法写入图像 {path}: {e}")
    finally:
        plt.close(fig)
    logger.info(f"已绘制曲线 {path}")


def emit_report(result, path):
    """按扩展名选择输出格式（.csv / .md / .xlsx / .png）"""
    ext = os.path.splitext(path)[1].lower()
    writers = {'.csv': emit_csv, '.md': emit_markdown, '.xlsx': emit_xlsx, '.png': plot_curves}
    if ext not in writers:
        raise FormatError(f"不支持的报表格式: {ext}（可选 {sorted(writers)}）")
    writers[ext](result, path)
