"""
Command line interface: one subcommand per pipeline stage, sharing a run directory.

Each invocation resolves its configuration (defaults, then ``--config`` file, then ``key=value`` overrides, then global flags),
writes it to '<run_dir>/<subcommand>.yaml', mirrors the log into '<run_dir>/<subcommand>.log', and writes its *json* reports
into the run directory.
"""

import os
import sys
import glob
import logging
import argparse

import torch

from . import utils
from .utils import setup_logging
from .config import Config, ConfigError, default_run_root
from .io import get_filetype
from .corpus import Manifest, Vocabulary, decode_tokens
from .toyworld import ToySpec, generate_toy_corpus
from .heads import JointModel
from . import training
from . import transfer
from . import explain


logger = logging.getLogger('finegrain')


class UsageError(ValueError):

    """Unknown subcommand or invalid command line."""


class SynthConfig(Config):

    """Toy corpus generation: 'toy' (8 categories in 4 groups) or 'kitchen' (13-category transfer schema)."""
    _defaults = dict(world='toy', n=2000, seed=42, frame_size=64, fps=12, duration_s=4., distractors=None, out_dir=None)


class VocabConfig(Config):

    _defaults = dict(manifest=None, task='caption_full', min_occurrences=6, output=None)


class TrainRunConfig(training.TrainConfig):

    """Training configuration, plus the corpus manifest and (optional) vocabulary file."""
    _defaults = dict(training.TrainConfig._defaults, manifest=None, vocabulary=None)


class EvalConfig(Config):

    _defaults = dict(checkpoint=None, manifest=None, split='val', metrics=None, batch_size=32)


class CaptionConfig(Config):

    _defaults = dict(checkpoint=None, manifest=None, split='val', video_id=None, index=0)


class ProbeConfig(Config):

    _defaults = dict(checkpoint=None, manifest=None, target='fine', epochs=200, learning_rate=1e-3, batch_size=64, seed=0, split='val')


class TransferConfig(Config):

    """Transfer benchmark; with ``ladder``, one backbone per task is first trained on ``source_manifest``."""
    _defaults = dict(manifest=None, backbones=['checkpoint'], checkpoint=None, heads=list(transfer.HEADS), shots=[1, 5], runs=10, seed=0,
                     clip_len=16, max_epochs=200, patience=20, learning_rate=1e-3, batch_size=32,
                     ladder=False, source_manifest=None, train_config=None)


class ExplainConfig(Config):

    _defaults = dict(checkpoint=None, manifest=None, split='val', video_id=None, index=0, objective='class', class_id=None, position=1, nframes=8)


class ReportConfig(Config):

    _defaults = dict(pattern='*report.json')


def _default_path(value, *default):
    return value if value is not None else os.path.join(*default)


def _read_manifest(config, run_dir, *default):
    return Manifest.read(_default_path(config['manifest'], run_dir, *default))


def _default_checkpoint(config, run_dir):
    return _default_path(config['checkpoint'], run_dir, 'checkpoints', 'best.pt')


def _write_report(run_dir, name, report):
    fn = os.path.join(run_dir, name)
    get_filetype('json', fn).write(report)
    logger.info('Report written to {}.'.format(fn))
    return fn


def _clip_of(model, manifest, config):
    dataset = training.dataset_for_model(model, manifest, config['split'])
    index = config['index']
    if config['video_id'] is not None:
        try:
            index = dataset.video_ids.index(str(config['video_id']))
        except ValueError as exc:
            raise ValueError('Video {} is not in split {}'.format(config['video_id'], config['split'])) from exc
    if not 0 <= index < len(dataset):
        raise ValueError('Index {} is outside split {} of size {:d}'.format(index, config['split'], len(dataset)))
    return dataset, index, dataset[index]['clip']


def synth_data(config, run_dir, mpicomm=None):
    world = config['world']
    kwargs = dict(frame_size=(config['frame_size'],) * 2, fps=config['fps'], duration_s=config['duration_s'])
    if config['distractors'] is not None:
        kwargs['distractors'] = config['distractors']
    if world == 'toy':
        spec = ToySpec(**kwargs)
    elif world == 'kitchen':
        spec = ToySpec.kitchenware(**kwargs)
    else:
        raise ConfigError('Unknown world {}; choose from ["toy", "kitchen"]'.format(world))
    out_dir = _default_path(config['out_dir'], run_dir, 'corpus' if world == 'toy' else 'kitchen')
    manifest_fn = generate_toy_corpus(spec, config['n'], config['seed'], out_dir, mpicomm=mpicomm)
    manifest = Manifest.read(manifest_fn)
    report = {'manifest': manifest_fn, 'world': world, 'n': config['n'], 'spec_hash': manifest.data['spec_hash'],
              'category_counts': manifest.data['category_counts'], 'splits': {name: len(ids) for name, ids in manifest.splits.items()}}
    if mpicomm is None or mpicomm.rank == 0:
        _write_report(run_dir, 'synth_{}_report.json'.format(world), report)
    return report


def build_vocab(config, run_dir):
    if config['task'] not in training.CAPTION_TASKS:
        raise ConfigError('Vocabulary task must be one of {}, got {}'.format(training.CAPTION_TASKS, config['task']))
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    vocab = training.task_vocabulary(manifest, config['task'], min_occurrences=config['min_occurrences'])
    fn = _default_path(config['output'], run_dir, 'vocabulary_{}.txt'.format(config['task']))
    vocab.write(fn)
    logger.info('Vocabulary of {:d} tokens written to {}.'.format(len(vocab), fn))
    return {'vocabulary': fn, 'size': len(vocab), 'task': config['task']}


def train(config, run_dir):
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    vocab = None
    if config['task'] in training.CAPTION_TASKS:
        fn = _default_path(config['vocabulary'], run_dir, 'vocabulary_{}.txt'.format(config['task']))
        if config['vocabulary'] is not None or os.path.isfile(fn):
            vocab = Vocabulary.read(fn)
            logger.info('Using vocabulary {} ({:d} tokens).'.format(fn, len(vocab)))
    if config['checkpoint_dir'] is None:
        config['checkpoint_dir'] = os.path.join(run_dir, 'checkpoints')
    checkpoint, report = training.train_model(config, manifest, vocab=vocab)
    logger.info('Best checkpoint: {}.'.format(checkpoint))
    return report


def eval_(config, run_dir):
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    report = training.evaluate_model(_default_checkpoint(config, run_dir), manifest, split=config['split'], metrics=config['metrics'], batch_size=config['batch_size'])
    _write_report(run_dir, 'eval_{}_report.json'.format(config['split']), report)
    return report


def caption(config, run_dir):
    checkpoint = _default_checkpoint(config, run_dir)
    model = JointModel.load(checkpoint)
    if model.decoder is None:
        raise ValueError('Checkpoint {} has no caption decoder'.format(checkpoint))
    model.eval()
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    dataset, index, clip = _clip_of(model, manifest, config)
    max_len = model.meta.get('preprocess', {}).get('max_len', 14)
    with torch.no_grad():
        sequences, details = model.decode_greedy(clip[None], max_len=max_len, return_details=True)
    tokens = decode_tokens(sequences[0], dataset.vocab)
    reference = dataset.reference_tokens(index)
    logprobs = details['logprobs'][0]
    print(' '.join(tokens))
    for token, logprob in zip(tokens + ['<eos>'], logprobs):
        print('{}\t{:.6f}'.format(token, logprob))
    report = {'video_id': dataset.video_ids[index], 'split': config['split'], 'caption': ' '.join(tokens), 'reference': ' '.join(reference),
              'exact_match': tokens == reference, 'tokens': sequences[0].indices, 'logprobs': logprobs, 'checkpoint': checkpoint}
    _write_report(run_dir, 'caption_report.json', report)
    return report


def probe(config, run_dir):
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    report = training.fit_linear_probe(_default_checkpoint(config, run_dir), manifest, target=config['target'], epochs=config['epochs'],
                                       learning_rate=config['learning_rate'], batch_size=config['batch_size'], seed=config['seed'], split=config['split'])
    _write_report(run_dir, 'probe_{}_report.json'.format(config['target']), report)
    return report


def transfer_bench(config, run_dir, mpicomm=None):
    manifest = _read_manifest(config, run_dir, 'kitchen', 'manifest.json')
    specs = [transfer.EpisodeSpec(shots=shots, runs=config['runs'], seed=config['seed']) for shots in config['shots']]
    kwargs = {name: config[name] for name in ['max_epochs', 'patience', 'learning_rate', 'batch_size']}
    if config['ladder']:
        source = _default_path(config['source_manifest'], run_dir, 'corpus', 'manifest.json')
        train_config = training.TrainConfig(config_fn=config['train_config'])
        report = transfer.granularity_ladder(source, manifest, os.path.join(run_dir, 'ladder'), train_config, heads=config['heads'], specs=specs, mpicomm=mpicomm, **kwargs)
    else:
        adapters = []
        for name in config['backbones']:
            if name == 'checkpoint':
                adapters.append(transfer.get_adapter(name, _default_checkpoint(config, run_dir), clip_len=config['clip_len']))
            elif name == 'frame':
                adapters.append(transfer.get_adapter(name, _default_checkpoint(config, run_dir)))
            else:
                adapters.append(transfer.get_adapter(name))
        report = transfer.run_benchmark(adapters, config['heads'], specs, manifest, out_dir=run_dir, mpicomm=mpicomm, **kwargs)
    return report.to_dict()


def explain_(config, run_dir):
    checkpoint = _default_checkpoint(config, run_dir)
    model = JointModel.load(checkpoint)
    manifest = _read_manifest(config, run_dir, 'corpus', 'manifest.json')
    dataset, index, clip = _clip_of(model, manifest, config)
    objective = config['objective']
    if objective == 'class':
        class_id = config['class_id']
        if class_id is None:
            with torch.no_grad():
                class_id = int(model.class_logits(model.encode(clip[None].to(next(model.parameters()).dtype)))[0].argmax())
        volume = explain.grad_cam_class(model, clip, class_id)
    elif objective == 'token':
        model.eval()
        with torch.no_grad():
            sequence = model.decode_greedy(clip[None].to(next(model.parameters()).dtype), max_len=model.meta.get('preprocess', {}).get('max_len', 14))[0]
        volume = explain.grad_cam_token(model, clip, sequence, config['position'])
    else:
        raise ConfigError('Unknown objective {}; choose from ["class", "token"]'.format(objective))
    volume.write(os.path.join(run_dir, 'saliency.npy'))
    explain.render_saliency_overlay(clip, volume, fn=os.path.join(run_dir, 'saliency.png'), nframes=config['nframes'])
    report = {'video_id': dataset.video_ids[index], 'split': config['split'], 'checkpoint': checkpoint, 'shape': list(volume.shape),
              'meta': volume.meta, 'volume': os.path.join(run_dir, 'saliency.npy'), 'overlay': os.path.join(run_dir, 'saliency.png')}
    _write_report(run_dir, 'explain_report.json', report)
    return report


def _flatten(value, prefix=''):
    if isinstance(value, dict):
        toret = []
        for name, item in value.items():
            toret += _flatten(item, '{}.{}'.format(prefix, name) if prefix else str(name))
        return toret
    if isinstance(value, (bool, int, float, str)) or value is None:
        return [(prefix, value)]
    return []


def report(config, run_dir):
    """Collect the *json* reports of ``run_dir`` into 'summary.json' and a plain-text table 'summary.txt'."""
    fns = sorted(glob.glob(os.path.join(run_dir, '**', config['pattern']), recursive=True))
    summary = {os.path.relpath(fn, run_dir): get_filetype('json', fn).read() for fn in fns}
    if not summary:
        logger.warning('No report matching {} in {}.'.format(config['pattern'], run_dir))
    get_filetype('json', os.path.join(run_dir, 'summary.json')).write(summary)
    lines = []
    for name, content in summary.items():
        for key, value in _flatten(content):
            lines.append('{:<40} {:<50} {}'.format(name, key, value))
    get_filetype('text', os.path.join(run_dir, 'summary.txt')).write('\n'.join(lines) + '\n')
    logger.info('Summary of {:d} reports written to {}.'.format(len(summary), run_dir))
    return summary


_configs = {'synth-data': SynthConfig, 'build-vocab': VocabConfig, 'train': TrainRunConfig, 'eval': EvalConfig, 'caption': CaptionConfig,
            'probe': ProbeConfig, 'transfer-bench': TransferConfig, 'explain': ExplainConfig, 'report': ReportConfig}

_runners = {'synth-data': synth_data, 'build-vocab': build_vocab, 'train': train, 'eval': eval_, 'caption': caption,
            'probe': probe, 'transfer-bench': transfer_bench, 'explain': explain_, 'report': report}

_parallel = ['synth-data', 'transfer-bench']


def action_from_args(action='report', args=None):

    """Function called when using finegrain from the command line."""

    if action not in action_from_args.actions:
        raise UsageError('unknown action {}; pick from {}'.format(action, list(action_from_args.actions.keys())))

    parser = argparse.ArgumentParser(prog='finegrain {}'.format(action), description=action_from_args.actions[action], formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--run-dir', type=str, required=False, default=None, help='Run directory; defaults to "latest" under $FINEGRAIN_RUN_DIR (or ./finegrain_runs)')
    parser.add_argument('--config', type=str, required=False, default=None, help='Configuration file (flat yaml mapping)')
    parser.add_argument('--seed', type=int, required=False, default=None, help='Random seed, overriding the configuration')
    parser.add_argument('--deterministic', action='store_true', help='Ask torch for deterministic algorithms')
    parser.add_argument('--log-level', type=str, required=False, default='info', choices=['debug', 'info', 'warning', 'error'], help='Logging level')
    parser.add_argument('overrides', nargs='*', type=str, help='Configuration overrides key=value; valid keys: {}'.format(', '.join(_configs[action]._defaults)))
    args = parser.parse_args(args=args)

    run_dir = args.run_dir or os.path.join(default_run_root(), 'latest')
    mpicomm = utils.get_mpicomm() if action in _parallel else None
    rank = 0 if mpicomm is None else mpicomm.rank
    name = action.replace('-', '_')
    setup_logging(args.log_level if rank == 0 else 'error', filename=os.path.join(run_dir, '{}.log'.format(name)) if rank == 0 else None)

    config = _configs[action](config_fn=args.config, overrides=args.overrides)
    if args.seed is not None and 'seed' in config:
        config['seed'] = args.seed
    if 'deterministic' in config:
        config['deterministic'] = config['deterministic'] or args.deterministic
    logger.info('Running {} in {} with {}'.format(action, run_dir, config))
    if rank == 0:
        config.write(os.path.join(run_dir, '{}.yaml'.format(name)))
    utils.set_seed(config.get('seed', 0), deterministic=args.deterministic or config.get('deterministic', False))

    if action in _parallel:
        return _runners[action](config, run_dir, mpicomm=mpicomm)
    return _runners[action](config, run_dir)


# Description for command line help
action_from_args.actions = {
    'synth-data': 'Generate a toy video corpus (frames, annotations, manifest)',
    'build-vocab': 'Build the caption vocabulary of a corpus',
    'train': 'Train a classification or joint classification / captioning model',
    'eval': 'Evaluate a checkpoint on a corpus split',
    'caption': 'Print the greedy caption of a video with per-token log-probabilities',
    'probe': 'Fit a linear probe on the frozen encodings of a checkpoint',
    'transfer-bench': 'Run the few-shot transfer benchmark and plot it',
    'explain': 'Compute and render a Grad-CAM saliency volume',
    'report': 'Collect the reports of a run directory into a summary'
}


def main(argv=None):
    """Entry point: return exit status, 2 for usage and configuration errors, 1 for any other error."""
    argv = list(sys.argv[1:] if argv is None else argv)

    help_msg = 'Add one of the following commands and its arguments (`<command> -h` for help):\n'
    for action, description in action_from_args.actions.items():
        help_msg += '{}: {}\n'.format(action, description)

    if not argv or argv[0] in ['-h', '--help']:
        print(help_msg)
        return 0 if argv else 2

    action = argv.pop(0).lower()
    try:
        action_from_args(action, args=argv)
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else 2
    except (UsageError, ConfigError) as exc:
        if isinstance(exc, UsageError):
            print(help_msg, file=sys.stderr)
        print('error: {}: {}'.format(type(exc).__name__, exc), file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug('Traceback', exc_info=True)
        print('error: {}: {}'.format(type(exc).__name__, exc), file=sys.stderr)
        return 1
    return 0
