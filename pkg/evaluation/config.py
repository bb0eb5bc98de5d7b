"""
实验配置

单一 JSON 文档，分段 {dataset, model, attack, defenses[], sweep}：

    {
      "dataset": {"source": "mnist", "path": "data/mnist", "count": 1000},
      "model": {
        "classifier": {"preset": "mnist-cnn", "checkpoint": "ckpt/mnist_cnn.advdef", "epochs": 5},
        "vae": {"preset": "mnist-vae", "checkpoint": "ckpt/mnist_vae.advdef", "overrides": {"beta": 0.5}}
      },
      "attack": {"kind": "fgsm"},
      "defenses": [
        {"name": "none", "chain": []},
        {"name": "vae", "chain": [{"type": "vae-whole", "model": "ckpt/mnist_vae.advdef"}]}
      ],
      "sweep": {"epsilons": [0.0, 0.04, 0.08, 0.12], "seed": 0, "out": "results/mnist_fgsm.csv"}
    }
"""

import json
import logging
import os
from dataclasses import dataclass, field, asdict, fields

from common.errors import ConfigError, AdvDefError
from algorithms.attacks import AttackConfig
from data import IdxLoader, synth_dataset
from models import get_preset
from nnlayers import OptimizerConfig

logger = logging.getLogger(__name__)

DATASET_SOURCES = ('mnist', 'synthetic')
DEFAULT_SLICE = 1000


def _build(cls, data, section):
    """用字典构造 dataclass，未知字段报错"""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置段 {section} 必须是对象")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"配置段 {section} 含未知字段: {unknown}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (AdvDefError, TypeError, ValueError) as e:
        raise ConfigError(f"配置段 {section} 不合法: {e}")


@dataclass
class DatasetConfig:
    """数据集配置"""

    source: str = 'mnist'
    path: str = None
    tag: str = None
    count: int = DEFAULT_SLICE
    train_count: int = 10000
    kind: str = 'shapes'
    height: int = 64
    width: int = 64
    channels: int = 3
    num_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.source not in DATASET_SOURCES:
            raise ConfigError(f"不支持的数据源: {self.source}（可选 {DATASET_SOURCES}）")
        if self.source == 'mnist' and not self.path:
            self.path = os.environ.get('ADVDEF_MNIST_DIR')
        if self.tag is None:
            self.tag = 'mnist' if self.source == 'mnist' else 'synthetic-hires'
        if self.count < 0 or self.train_count < 0:
            raise ConfigError("count 与 train_count 必须 ≥ 0")

    def load(self, split='test'):
        """
        加载数据集划分；评估切片取前 count 个，训练取前 train_count 个

        合成数据的训练集使用 seed，测试集使用 seed + 1。
        """
        limit = self.count if split == 'test' else self.train_count
        if self.source == 'mnist':
            if not self.path:
                raise ConfigError("MNIST 数据源需要 dataset.path 或环境变量 ADVDEF_MNIST_DIR")
            return IdxLoader.load_mnist(self.path, split).take(limit)
        seed = self.seed if split == 'train' else self.seed + 1
        return synth_dataset(self.kind, limit, self.height, self.width, self.channels,
                             self.num_classes, seed, split)


@dataclass
class ModelConfig:
    """单个模型（分类器或 VAE）的架构与训练配置"""

    preset: str = 'mnist-cnn'
    checkpoint: str = None
    overrides: dict = field(default_factory=dict)
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    optimizer: dict = field(default_factory=dict)
    patches_per_epoch: int = None
    early_stop_tau: float = None
    early_stop_window: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs 与 batch_size 必须 ≥ 1")
        self.optimizer_config()

    def optimizer_config(self):
        try:
            return OptimizerConfig(**self.optimizer)
        except (AdvDefError, TypeError, ValueError) as e:
            raise ConfigError(f"优化器配置不合法: {e}")

    def spec(self):
        return get_preset(self.preset, **self.overrides)


@dataclass
class DefenseColumn:
    """一个命名的防御列（防御链描述）"""

    name: str
    chain: list = field(default_factory=list)

    def __post_init__(self):
        if not self.name:
            raise ConfigError("防御列必须有名称")
        if not isinstance(self.chain, list):
            raise ConfigError(f"防御列 {self.name} 的 chain 必须是列表")


@dataclass
class SweepConfig:
    """扫描配置"""

    epsilons: list = field(default_factory=lambda: [0.0])
    seed: int = 0
    threads: int = None
    out: str = 'results/sweep.csv'

    def __post_init__(self):
        if not self.epsilons:
            raise ConfigError("ε 网格不能为空")
        self.epsilons = [float(e) for e in self.epsilons]
        if any(e < 0 for e in self.epsilons):
            raise ConfigError(f"ε 必须 ≥ 0: {self.epsilons}")


@dataclass
class ExperimentConfig:
    """完整实验配置"""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    classifier: ModelConfig = field(default_factory=ModelConfig)
    vae: ModelConfig = None
    attack: AttackConfig = field(default_factory=AttackConfig)
    defenses: list = field(default_factory=list)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @classmethod
    def from_dict(cls, data):
        """
        由 JSON 对象构造配置

        Raises:
            ConfigError: 缺失或未知字段、取值不合法
        """
        if not isinstance(data, dict):
            raise ConfigError("配置文档必须是 JSON 对象")
        unknown = sorted(set(data) - {'dataset', 'model', 'attack', 'defenses', 'sweep'})
        if unknown:
            raise ConfigError(f"未知的配置段: {unknown}")
        model = data.get('model') or {}
        if not isinstance(model, dict) or set(model) - {'classifier', 'vae'}:
            raise ConfigError("model 段只能包含 classifier 与 vae")
        defenses = data.get('defenses') or []
        if not isinstance(defenses, list):
            raise ConfigError("defenses 必须是列表")
        columns = [_build(DefenseColumn, d, f"defenses[{i}]") for i, d in enumerate(defenses)]
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ConfigError(f"防御列名称重复: {names}")
        return cls(
            dataset=_build(DatasetConfig, data.get('dataset'), 'dataset'),
            classifier=_build(ModelConfig, model.get('classifier'), 'model.classifier'),
            vae=_build(ModelConfig, model['vae'], 'model.vae') if model.get('vae') else None,
            attack=_build(AttackConfig, data.get('attack'), 'attack'),
            defenses=columns,
            sweep=_build(SweepConfig, data.get('sweep'), 'sweep'),
        )

    def to_dict(self):
        data = {
            'dataset': asdict(self.dataset),
            'model': {'classifier': asdict(self.classifier)},
            'attack': self.attack.to_dict(),
            'defenses': [asdict(c) for c in self.defenses],
            'sweep': asdict(self.sweep),
        }
        if self.vae is not None:
            data['model']['vae'] = asdict(self.vae)
        return data

    def apply_overrides(self, seed=None, epsilon=None, iterations=None, quality=None,
                        patch=None, stride=None, out=None, threads=None):
        """
        应用命令行覆盖参数，返回新的配置

        --quality 作用于所有 dct-quant 变换，--patch/--stride 作用于所有 vae-patch 变换。
        """
        data = json.loads(json.dumps(self.to_dict()))
        if seed is not None:
            data['sweep']['seed'] = seed
            data['model']['classifier']['seed'] = seed
            if 'vae' in data['model']:
                data['model']['vae']['seed'] = seed
        if epsilon is not None:
            data['attack']['epsilon'] = epsilon
            data['sweep']['epsilons'] = [epsilon]
        if iterations is not None:
            data['attack']['iterations'] = iterations
        if out is not None:
            data['sweep']['out'] = out
        if threads is not None:
            data['sweep']['threads'] = threads
        for column in data['defenses']:
            for desc in _walk_descriptors(column['chain']):
                if quality is not None and desc.get('type') == 'dct-quant':
                    desc['quality'] = quality
                if desc.get('type') == 'vae-patch':
                    if patch is not None:
                        desc['patch'] = patch
                    if stride is not None:
                        desc['stride'] = stride
        return ExperimentConfig.from_dict(data)


def _walk_descriptors(chain):
    """遍历链描述（含集成中的子链）"""
    for desc in chain:
        yield desc
        if desc.get('type') == 'ensemble':
            for sub in desc.get('chains', []):
                yield from _walk_descriptors(sub)


def load_config(path):
    """
    读取 JSON 配置文件

    Raises:
        ConfigError: 文件不可读或不是合法 JSON
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件 {path} 不是合法 JSON: {e}")
    config = ExperimentConfig.from_dict(data)
    logger.info(f"已加载配置 {path}（{len(config.defenses)} 个防御列，{len(config.sweep.epsilons)} 个 ε）")
    return config
