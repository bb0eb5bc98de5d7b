#!/usr/bin/env python3
"""
advdef - 对抗样本的 VAE 净化防御实验工具
主入口文件

子命令：train-classifier, train-vae, attack, defend, sweep, report
失败时向 stderr 输出一行 JSON {"error": code, "message": text}，
AdvDefError 以退出码 2 结束，其它异常以 1 结束。
"""

import argparse
import json
import logging
import os
import sys

from common.errors import AdvDefError, ConfigError
from common.logger import setup_logging
from common.parallel import resolve_threads
from algorithms.attacks import AdversarialBatch, attack_batch
from algorithms.defenses import DefenseChain
from data import Checkpoint, load_checkpoint, save_checkpoint
from evaluation import (ExperimentConfig, SweepResult, emit_csv, emit_markdown, emit_report,
                        l2_relative_diff, load_config, parse_csv, run_sweep, top1_accuracy)
from models import Vae, describe, train_classifier, train_vae
from tensorcore import Rng

logger = logging.getLogger(__name__)

COMMANDS = ('train-classifier', 'train-vae', 'attack', 'defend', 'sweep', 'report')


def build_parser():
    """构建命令行解析器"""
    parser = argparse.ArgumentParser(prog='advdef', description="对抗样本的 VAE 净化防御实验工具")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', help="JSON 实验配置文件")
        p.add_argument('--seed', type=int)
        p.add_argument('--epsilon', type=float)
        p.add_argument('--iterations', type=int)
        p.add_argument('--quality', type=int)
        p.add_argument('--patch', type=int)
        p.add_argument('--stride', type=int)
        p.add_argument('--out', help="输出路径")
        p.add_argument('--threads', type=int, help="并行度（受 ADVDEF_THREADS 限制）")
        p.add_argument('--log-level', default=None)
        p.add_argument('--no-progress', action='store_true', help="关闭进度条")
        if name == 'defend':
            p.add_argument('--batch', required=True, help="attack 子命令保存的 .npz 对抗批次")
        if name == 'report':
            p.add_argument('--input', required=True, help="sweep 子命令写出的 CSV")
    return parser


def load_experiment(args):
    """读取配置并应用命令行覆盖"""
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.apply_overrides(seed=args.seed, epsilon=args.epsilon, iterations=args.iterations,
                                  quality=args.quality, patch=args.patch, stride=args.stride,
                                  out=args.out, threads=args.threads)


class ModelCache:
    """按路径缓存已加载的检查点模型（只读共享）"""

    def __init__(self):
        self.models = {}

    def __call__(self, path):
        if path not in self.models:
            self.models[path] = load_checkpoint(path).model()
        return self.models[path]

    def vae(self, path):
        model = self(path)
        if not isinstance(model, Vae):
            raise ConfigError(f"检查点 {path} 不是 VAE")
        return model

    def classifier(self, path):
        if not path:
            raise ConfigError("配置缺少 model.classifier.checkpoint")
        model = self(path)
        if isinstance(model, Vae):
            raise ConfigError(f"检查点 {path} 不是分类器")
        return model


def _emit(record):
    """向 stdout 输出一行 JSON 摘要"""
    print(json.dumps(record, ensure_ascii=False, sort_keys=True))


def _checkpoint_path(args, model_config, default):
    path = args.out or model_config.checkpoint or default
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _log_summary(spec):
    for row in describe(spec):
        logger.info(f"  [{row['part']}] {row['name']:<14} {row['kind']:<10} "
                    f"{str(row['shape']):<16} {row['params']}")


def cmd_train_classifier(args, config):
    model_config = config.classifier
    spec = model_config.spec()
    _log_summary(spec)
    train = config.dataset.load('train')
    test = config.dataset.load('test')
    params, report = train_classifier(spec, train, model_config.optimizer_config(), model_config.epochs,
                                      model_config.seed, model_config.batch_size,
                                      progress=not args.no_progress)
    checkpoint = Checkpoint(spec, params, model_config.seed, {
        'epochs': report.epochs,
        'final_loss': report.classifier_loss[-1],
        'report': report.to_dict(),
    })
    accuracy = top1_accuracy(checkpoint.model(), test.images, test.labels)
    checkpoint.metadata['test_accuracy'] = accuracy
    path = _checkpoint_path(args, model_config, f"checkpoints/{spec.name}.advdef")
    save_checkpoint(path, checkpoint)
    _emit({'checkpoint': path, 'model': spec.name, 'epochs': report.epochs, 'test_accuracy': accuracy})


def cmd_train_vae(args, config):
    model_config = config.vae
    if model_config is None:
        raise ConfigError("配置缺少 model.vae")
    spec = model_config.spec()
    _log_summary(spec)
    train = config.dataset.load('train')
    params, report = train_vae(spec, train.images, model_config.optimizer_config(), model_config.epochs,
                               model_config.seed, model_config.batch_size,
                               model_config.patches_per_epoch, model_config.early_stop_tau,
                               model_config.early_stop_window, progress=not args.no_progress)
    checkpoint = Checkpoint(spec, params, model_config.seed, {
        'epochs': report.epochs,
        'final_loss': report.final_metric,
        'report': report.to_dict(),
    })
    path = _checkpoint_path(args, model_config, f"checkpoints/{spec.name}.advdef")
    save_checkpoint(path, checkpoint)
    _emit({'checkpoint': path, 'model': spec.name, 'epochs': report.epochs,
           'stopped_early': report.stopped_early, 'final_loss': report.final_metric})


def cmd_attack(args, config):
    models = ModelCache()
    classifier = models.classifier(config.classifier.checkpoint)
    test = config.dataset.load('test')
    threads = resolve_threads(config.sweep.threads)
    batch = attack_batch(config.attack, classifier, test.images, test.labels, threads, config.dataset.tag)
    path = args.out or 'results/adversarial.npz'
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    batch.save(path)
    _emit({
        'batch': path,
        'attack': config.attack.kind,
        'epsilon': config.attack.epsilon,
        'l2_diff': l2_relative_diff(batch.originals, batch.perturbed) if len(batch) else None,
        'clean_accuracy': top1_accuracy(classifier, batch.originals, batch.labels),
        'adversarial_accuracy': top1_accuracy(classifier, batch.perturbed, batch.labels),
        'failures': len(batch.failures),
        'fingerprint': batch.fingerprint(),
    })


def cmd_defend(args, config):
    if not config.defenses:
        raise ConfigError("配置中没有防御列")
    models = ModelCache()
    classifier = models.classifier(config.classifier.checkpoint)
    batch = AdversarialBatch.load(args.batch)
    threads = resolve_threads(config.sweep.threads)
    root = Rng(config.sweep.seed).split(2).split(0)
    row = {'epsilon': config.attack.epsilon,
           'l2_diff': l2_relative_diff(batch.originals, batch.perturbed)}
    for index, column in enumerate(config.defenses):
        chain = DefenseChain.build(column.chain, models.vae, column.name)
        row[column.name] = top1_accuracy(classifier, batch.perturbed, batch.labels, chain,
                                         root.split(index), threads)
    result = SweepResult([c.name for c in config.defenses], [row],
                         [{c.name: len(batch) for c in config.defenses}], [batch.fingerprint()])
    path = args.out or 'results/defend.csv'
    emit_report(result, path)
    _emit({'out': path, **row})


def cmd_sweep(args, config):
    if not config.defenses:
        raise ConfigError("配置中没有防御列")
    models = ModelCache()
    classifier = models.classifier(config.classifier.checkpoint)
    test = config.dataset.load('test')
    columns = [(c.name, c.chain) for c in config.defenses]
    result = run_sweep(classifier, config.attack, config.sweep.epsilons, columns, test.images,
                       test.labels, config.sweep.seed, config.sweep.threads, config.dataset.tag,
                       models.vae, progress=not args.no_progress)
    path = config.sweep.out
    emit_csv(result, path)
    emit_markdown(result, os.path.splitext(path)[0] + '.md')
    _emit({'out': path, 'rows': len(result), 'columns': result.columns,
           'failures': len(result.failures)})


def cmd_report(args, config):
    result = parse_csv(args.input)
    path = args.out or os.path.splitext(args.input)[0] + '.md'
    emit_report(result, path)
    _emit({'out': path, 'rows': len(result)})


HANDLERS = {
    'train-classifier': cmd_train_classifier,
    'train-vae': cmd_train_vae,
    'attack': cmd_attack,
    'defend': cmd_defend,
    'sweep': cmd_sweep,
    'report': cmd_report,
}


def main(argv=None):
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        config = load_experiment(args)
        HANDLERS[args.command](args, config)
        return 0
    except AdvDefError as e:
        print(json.dumps(e.to_record(), ensure_ascii=False), file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("未处理的异常", exc_info=True)
        print(json.dumps({'error': 'internal_error', 'message': f"{type(e).__name__}: {e}"},
                         ensure_ascii=False), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
