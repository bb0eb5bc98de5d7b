"""
检查点持久化（ADVDEFv1 二进制格式）

布局（整数均为 u32 小端序）：
    8 字节魔数 b"ADVDEFv1"
    格式版本
    元数据长度 + UTF-8 JSON 文本（键排序）
    张量记录直到文件结束：名字长度 + 名字字节、rank、各维度、小端 f32 数据
"""

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from common.errors import FormatError
from models import Classifier, Vae, spec_from_dict
from nnlayers import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b'ADVDEFv1'
FORMAT_VERSION = 1
MAX_RANK = 8

_U32 = struct.Struct('<I')


@dataclass
class Checkpoint:
    """模型检查点"""

    spec: object
    params: ModelParams
    seed: int = 0
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def header(self):
        return {
            'spec': self.spec.to_dict(),
            'seed': int(self.seed),
            'metadata': self.metadata,
            'buffers': sorted(self.params.buffers),
        }

    def model(self):
        """按规格类型返回绑定了参数的 Classifier 或 Vae"""
        if self.spec.kind == 'classifier':
            return Classifier(self.spec, self.params)
        return Vae(self.spec, self.params)


def encode_checkpoint(checkpoint):
    """序列化为字节串"""
    header = json.dumps(checkpoint.header(), sort_keys=True, ensure_ascii=False).encode('utf-8')
    parts = [MAGIC, _U32.pack(checkpoint.version), _U32.pack(len(header)), header]
    for name in checkpoint.params.names():
        array = np.ascontiguousarray(checkpoint.params[name], dtype='<f4')
        encoded = name.encode('utf-8')
        parts.append(_U32.pack(len(encoded)) + encoded)
        parts.append(_U32.pack(array.ndim))
        parts.append(b''.join(_U32.pack(d) for d in array.shape))
        parts.append(array.tobytes())
    return b''.join(parts)


class _Reader:
    """带偏移量的字节读取器"""

    def __init__(self, raw, path):
        self.raw = raw
        self.offset = 0
        self.path = path

    def remaining(self):
        return len(self.raw) - self.offset

    def take(self, count, what):
        if self.remaining() < count:
            raise FormatError(f"{self.path}: 读取{what}时在字节偏移 {self.offset} 处被截断"
                              f"（需要 {count} 字节，剩余 {self.remaining()}）")
        chunk = self.raw[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(raw, path='<bytes>'):
    """
    从字节串解析检查点

    Raises:
        FormatError: 魔数不符、版本不支持、元数据损坏或张量记录长度不符（消息给出张量名）
    """
    reader = _Reader(raw, path)
    magic = reader.take(len(MAGIC), '魔数')
    if magic != MAGIC:
        raise FormatError(f"{path}: 魔数不符 {magic!r}（期望 {MAGIC!r}）")
    version = reader.u32('版本号')
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: 不支持的检查点版本 {version}（支持 {FORMAT_VERSION}）")
    length = reader.u32('元数据长度')
    try:
        header = json.loads(reader.take(length, '元数据').decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: 元数据损坏: {e}")

    arrays = {}
    while reader.remaining() > 0:
        name_length = reader.u32('张量名长度')
        try:
            name = reader.take(name_length, '张量名').decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: 张量名损坏（偏移 {reader.offset}）: {e}")
        rank = reader.u32(f"张量 {name} 的 rank")
        if not 1 <= rank <= MAX_RANK:
            raise FormatError(f"{path}: 张量 {name} 的 rank 非法: {rank}")
        dims = tuple(reader.u32(f"张量 {name} 的维度") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        if count == 0 or count * 4 > reader.remaining():
            raise FormatError(f"{path}: 张量 {name} 的维度 {list(dims)} 与剩余数据长度 "
                              f"{reader.remaining()} 字节不符")
        payload = reader.take(count * 4, f"张量 {name} 的数据")
        arrays[name] = np.frombuffer(payload, dtype='<f4').reshape(dims).astype(np.float32)

    try:
        spec = spec_from_dict(header['spec'])
        params = ModelParams.from_arrays(arrays, header.get('buffers', ()))
        return Checkpoint(spec, params, header.get('seed', 0), header.get('metadata', {}), version)
    except KeyError as e:
        raise FormatError(f"{path}: 元数据缺少字段 {e}")


def save_checkpoint(path, checkpoint):
    """写入检查点文件"""
    raw = encode_checkpoint(checkpoint)
    try:
        with open(path, 'wb') as f:
            f.write(raw)
    except OSError as e:
        raise FormatError(f"无法写入检查点 {path}: {e}")
    logger.info(f"已保存检查点 {path}（{len(checkpoint.params)} 个张量，{len(raw)} 字节）")


def load_checkpoint(path):
    """读取检查点文件"""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise FormatError(f"无法读取检查点 {path}: {e}")
    return decode_checkpoint(raw, path)
