"""
Training loop with λ annealing, checkpointing, evaluation passes, and linear probes on frozen encoders.
"""

import os
import math
import time
import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset, DataLoader

from . import utils
from .utils import BaseClass
from .config import Config, ConfigError
from .io import get_filetype
from .corpus import (Manifest, Vocabulary, LabelHierarchy, build_vocabulary, tokenize_caption, encode_tokens, decode_tokens, caption_for_task)
from .videoio import load_clip
from .encoder import EncoderConfig, count_parameters
from .heads import JointModel, LossWeights, joint_loss
from . import metrics as fgmetrics


logger = logging.getLogger('training')


TASKS = ['coarse_cls', 'fine_cls', 'caption_simplified', 'caption_full']
CAPTION_TASKS = ['caption_simplified', 'caption_full']

METRICS = ['accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed', 'exact_match', 'bleu4', 'rouge_l',
           'meteor_lite', 'caption_nll', 'baseline_frequent_fine', 'baseline_template_fill']

DEFAULT_METRICS = {'coarse_cls': ['accuracy', 'baseline_frequent_fine'],
                   'fine_cls': ['accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed'],
                   'caption_simplified': ['accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed', 'exact_match', 'bleu4',
                                          'rouge_l', 'meteor_lite', 'caption_nll', 'baseline_template_fill'],
                   'caption_full': ['accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed', 'exact_match', 'bleu4',
                                    'rouge_l', 'meteor_lite', 'caption_nll', 'baseline_template_fill']}


class NonFiniteLossError(RuntimeError):

    """Training loss is not finite."""

    def __init__(self, step, loss):
        self.step = step
        super(NonFiniteLossError, self).__init__('non-finite loss {} at step {:d}'.format(loss, step))


class TrainConfig(Config):
    """
    Training configuration. Keys are those of :attr:`_defaults`.
    ``lambda_warmup`` (in steps) defaults to one epoch; ``checkpoint_dir`` defaults to the run directory.
    """
    _defaults = dict(task='fine_cls', architecture='two_channel', lambda_start=1., lambda_end=0.1, lambda_warmup=None, lambda_anneal_steps=1000,
                     learning_rate=1e-3, batch_size=32, max_epochs=20, seed=42, checkpoint_dir=None, clip_norm=5., dtype='float32', deterministic=False,
                     clip_len=48, resize=128, crop=96, channels_3d=256, channels_2d=256, blocks=5, lstm_hidden=256, embedding_dim=256, decoder_hidden=512,
                     condition='initial', max_len=14, log_every=10, device='cpu')

    def __init__(self, *args, **kwargs):
        super(TrainConfig, self).__init__(*args, **kwargs)
        self.check()

    def check(self):
        if self['task'] not in TASKS:
            raise ConfigError('Unknown task {}; choose from {}'.format(self['task'], TASKS))
        if not self['learning_rate'] > 0:
            raise ConfigError('learning_rate must be > 0, got {}'.format(self['learning_rate']))
        if not 0. <= self['lambda_end'] <= self['lambda_start'] <= 1.:
            raise ConfigError('Expected 0 <= lambda_end <= lambda_start <= 1, got {} and {}'.format(self['lambda_end'], self['lambda_start']))
        if self['dtype'] not in ('float32', 'float64'):
            raise ConfigError('dtype must be float32 or float64, got {}'.format(self['dtype']))
        if self['task'] in CAPTION_TASKS and self['architecture'] != 'two_channel':
            raise ConfigError('Frame baselines support classification tasks only, got task {}'.format(self['task']))
        for name in ['batch_size', 'max_epochs', 'clip_len', 'log_every']:
            if self[name] < 1:
                raise ConfigError('{} must be >= 1, got {}'.format(name, self[name]))

    @property
    def torch_dtype(self):
        return {'float32': torch.float32, 'float64': torch.float64}[self['dtype']]

    def encoder_config(self):
        return EncoderConfig(channels_3d=self['channels_3d'], channels_2d=self['channels_2d'], blocks=self['blocks'],
                             lstm_hidden=self['lstm_hidden'], architecture=self['architecture'])

    def preprocess(self):
        """Clip preprocessing settings, stored in checkpoints."""
        return {name: self[name] for name in ['clip_len', 'resize', 'crop', 'max_len', 'dtype']}


class LambdaSchedule(BaseClass):
    """
    Weight λ of the classification loss: ``start`` for the first ``warmup`` steps,
    then linear interpolation to ``end`` over ``anneal_steps`` steps, constant afterwards.
    """
    def __init__(self, start=1., end=0.1, warmup=0, anneal_steps=0):
        self.start, self.end = float(start), float(end)
        self.warmup, self.anneal_steps = int(warmup), int(anneal_steps)
        if not 0. <= self.end <= self.start <= 1.:
            raise ValueError('Expected 0 <= end <= start <= 1, got {} and {}'.format(self.end, self.start))

    @classmethod
    def for_task(cls, config, steps_per_epoch=1):
        """Schedule of ``config``; classification tasks use λ = 1 throughout."""
        if config['task'] not in CAPTION_TASKS:
            return cls(start=1., end=1.)
        warmup = config['lambda_warmup'] if config['lambda_warmup'] is not None else steps_per_epoch
        return cls(start=config['lambda_start'], end=config['lambda_end'], warmup=warmup, anneal_steps=config['lambda_anneal_steps'])

    def __call__(self, step):
        if step < 0:
            raise ValueError('step must be >= 0, got {}'.format(step))
        if step < self.warmup:
            return self.start
        if self.anneal_steps <= 0:
            return self.end
        fraction = min((step - self.warmup) / self.anneal_steps, 1.)
        return self.start + (self.end - self.start) * fraction

    def __repr__(self):
        return '{}(start={}, end={}, warmup={:d}, anneal_steps={:d})'.format(self.__class__.__name__, self.start, self.end, self.warmup, self.anneal_steps)


def lambda_at_step(step, schedule):
    """λ at training step ``step`` of :class:`LambdaSchedule` (or dictionary of its arguments) ``schedule``."""
    if not isinstance(schedule, LambdaSchedule):
        schedule = LambdaSchedule(**schedule)
    return schedule(step)


def item_seed(seed, epoch, index):
    """Seed of dataset item ``index`` at ``epoch``."""
    return int(np.random.SeedSequence([int(seed), int(epoch), int(index)]).generate_state(1)[0])


class ClipDataset(Dataset):
    """
    Clips of a manifest split, with class labels and (for captioning tasks) encoded captions.

    Parameters
    ----------
    manifest : Manifest
        Corpus manifest.

    split : str
        'train', 'val' or 'test'.

    task : str, default='fine_cls'
        Task, defining class labels (groups for 'coarse_cls', else categories) and caption targets.

    vocab : Vocabulary, default=None
        Frozen vocabulary, required for captioning tasks.

    mode : str, default='eval'
        'train' (random windows and crops, from per-item seeds) or 'eval' (centred).

    seed : int, default=0
        Base seed, combined with epoch and item index.
    """
    def __init__(self, manifest, split, task='fine_cls', vocab=None, mode='eval', seed=0, clip_len=48, resize=128, crop=96, max_len=14, dtype=None):
        if task not in TASKS:
            raise ValueError('Unknown task {}; choose from {}'.format(task, TASKS))
        if task in CAPTION_TASKS and vocab is None:
            raise ValueError('Captioning task {} requires a vocabulary'.format(task))
        self.manifest, self.split, self.task, self.vocab = manifest, split, task, vocab
        self.mode, self.seed, self.epoch = mode, seed, 0
        self.clip_len, self.resize, self.crop, self.max_len, self.dtype = clip_len, resize, crop, max_len, dtype
        self.video_ids = manifest.ids(split)
        self.target = 'coarse' if task == 'coarse_cls' else 'fine'
        self.labels = manifest.labels(split, target=self.target)

    @classmethod
    def from_config(cls, manifest, split, config, vocab=None, mode='eval'):
        return cls(manifest, split, task=config['task'], vocab=vocab, mode=mode, seed=config['seed'], clip_len=config['clip_len'],
                   resize=config['resize'], crop=config['crop'], max_len=config['max_len'], dtype=config.torch_dtype)

    def set_epoch(self, epoch):
        self.epoch = int(epoch)

    def __len__(self):
        return len(self.video_ids)

    def reference_tokens(self, index):
        """Reference caption tokens of item ``index``, as seen through the vocabulary (rare words folded, truncated)."""
        record = self.manifest.records[self.video_ids[index]]
        tokens = tokenize_caption(caption_for_task(record, self.task))
        return decode_tokens(encode_tokens(tokens, self.vocab, max_len=self.max_len), self.vocab)

    def __getitem__(self, index):
        video_id = self.video_ids[index]
        seed = item_seed(self.seed, self.epoch, index) if self.mode == 'train' else None
        clip = load_clip(self.manifest.frames_path(video_id), target=self.clip_len, mode=self.mode, seed=seed,
                         resize=self.resize, crop=self.crop, dtype=self.dtype)
        item = {'clip': clip, 'label': self.labels[index], 'index': index}
        if self.task in CAPTION_TASKS:
            record = self.manifest.records[video_id]
            sequence = encode_tokens(tokenize_caption(caption_for_task(record, self.task)), self.vocab, max_len=self.max_len)
            item['tokens'] = torch.tensor(sequence.indices, dtype=torch.int64)
        return item


def collate_clips(items):
    """Stack list of dataset items into a batch dictionary."""
    batch = {'clip': torch.stack([item['clip'] for item in items]),
             'label': torch.tensor([item['label'] for item in items], dtype=torch.int64),
             'index': [item['index'] for item in items]}
    if 'tokens' in items[0]:
        batch['tokens'] = torch.stack([item['tokens'] for item in items])
    return batch


def make_loader(dataset, batch_size=32, shuffle=False, seed=0, epoch=0):
    """Deterministic batch iterator: order is a permutation seeded with (seed, epoch) if ``shuffle``."""
    order = np.arange(len(dataset))
    if shuffle:
        order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(dataset))
    return DataLoader(dataset, batch_size=batch_size, sampler=order.tolist(), collate_fn=collate_clips)


def task_vocabulary(manifest, task, min_occurrences=6, split='train'):
    """Frozen vocabulary built from the captions of ``split`` for captioning task ``task``."""
    records = manifest.records
    captions = [tokenize_caption(caption_for_task(records[video_id], task)) for video_id in manifest.ids(split)]
    return build_vocabulary(captions, min_occurrences=min_occurrences)


def build_model(config, hierarchy, vocab=None):
    """:class:`JointModel` for ``config``: classifier for all tasks (fine categories for captioning), decoder for captioning tasks."""
    num_classes = hierarchy.group_count if config['task'] == 'coarse_cls' else hierarchy.category_count
    decoder_config = None
    if config['task'] in CAPTION_TASKS:
        decoder_config = {'vocab_size': len(vocab), 'embedding_dim': config['embedding_dim'], 'hidden': config['decoder_hidden'], 'condition': config['condition']}
    meta = {'task': config['task'], 'hierarchy': hierarchy.to_dict(), 'vocab': vocab.tokens if vocab is not None else None,
            'preprocess': config.preprocess(), 'config': config.to_dict()}
    return JointModel(config.encoder_config(), num_classes=num_classes, decoder_config=decoder_config, meta=meta).to(config.torch_dtype)


def model_vocabulary(model):
    """Frozen vocabulary stored in ``model`` metadata (``None`` for classification models)."""
    tokens = model.meta.get('vocab', None)
    if tokens is None:
        return None
    return Vocabulary(tokens).freeze()


def compute_losses(model, batch, lam):
    """
    Losses of ``batch`` at classification weight ``lam``.
    The branch with zero weight is not computed, so that its parameters receive no gradient.
    """
    h = model.encode(batch['clip'])
    losses = {}
    if model.classifier is not None and lam > 0.:
        losses['cls'] = F.cross_entropy(model.class_logits(h), batch['label'])
    if model.decoder is not None and lam < 1.:
        losses['cap'] = model.caption_nll(h, batch['tokens'])
    if 'cls' in losses and 'cap' in losses:
        losses['loss'] = joint_loss(losses['cls'], losses['cap'], LossWeights(lam))
    else:
        losses['loss'] = losses.get('cls', losses.get('cap'))
    if losses['loss'] is None:
        raise ValueError('Nothing to train at lambda = {} for this model'.format(lam))
    return losses


class Trainer(BaseClass):
    """
    Minibatch Adam training of a :class:`JointModel` on a corpus manifest.

    Writes 'epoch_XXX.pt' checkpoints, 'best.pt' (best validation metric: accuracy for classification tasks,
    exact-match for captioning tasks), 'last.pt' and 'train_report.json' in ``config['checkpoint_dir']``.
    """
    def __init__(self, config, manifest, vocab=None, model=None):
        if not isinstance(config, TrainConfig):
            config = TrainConfig(config)
        if not isinstance(manifest, Manifest):
            manifest = Manifest.read(manifest)
        self.config, self.manifest = config, manifest
        self.hierarchy = manifest.hierarchy
        if config['task'] in CAPTION_TASKS and vocab is None:
            vocab = task_vocabulary(manifest, config['task'])
        self.vocab = vocab if config['task'] in CAPTION_TASKS else None
        utils.set_seed(config['seed'], deterministic=config['deterministic'])
        self.model = model if model is not None else build_model(config, self.hierarchy, vocab=self.vocab)
        self.model.to(config['device'])
        self.checkpoint_dir = config['checkpoint_dir'] or os.getcwd()
        self.selection_metric = 'exact_match' if config['task'] in CAPTION_TASKS else 'accuracy'

    def checkpoint_path(self, name):
        return os.path.join(self.checkpoint_dir, name)

    def _to_device(self, batch):
        return {name: value.to(self.config['device']) if torch.is_tensor(value) else value for name, value in batch.items()}

    def train(self, steps=None):
        """
        Run training.

        Parameters
        ----------
        steps : int, default=None
            If not ``None``, stop after this number of optimization steps (no validation nor checkpoint in that case).

        Returns
        -------
        checkpoint : str
            Path to the best checkpoint (``None`` if ``steps`` is provided).

        report : dict
            Training report.
        """
        config = self.config
        t0 = time.time()
        train_set = ClipDataset.from_config(self.manifest, 'train', config, vocab=self.vocab, mode='train')
        if not len(train_set):
            raise ValueError('Empty training split')
        val_set = ClipDataset.from_config(self.manifest, 'val', config, vocab=self.vocab, mode='eval')
        steps_per_epoch = math.ceil(len(train_set) / config['batch_size'])
        schedule = LambdaSchedule.for_task(config, steps_per_epoch=steps_per_epoch)
        optimizer = torch.optim.Adam(self.model.parameters(), lr=config['learning_rate'])
        self.log_info('Training {} ({} parameters) on {:d} clips for task {}, {}.'.format(
                      self.model.encoder_config.name, count_parameters(self.model), len(train_set), config['task'], schedule))
        step, epochs, best, initial_loss = 0, [], None, None
        metrics = [name for name in DEFAULT_METRICS[config['task']] if not name.startswith('baseline')]
        for epoch in range(config['max_epochs']):
            self.model.train()
            train_set.set_epoch(epoch)
            losses_epoch = []
            for batch in make_loader(train_set, batch_size=config['batch_size'], shuffle=True, seed=config['seed'], epoch=epoch):
                batch = self._to_device(batch)
                lam = schedule(step)
                losses = compute_losses(self.model, batch, lam)
                loss = losses['loss']
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(step, loss.item())
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                if config['clip_norm']:
                    torch.nn.utils.clip_grad_norm_([p for p in self.model.parameters() if p.grad is not None], config['clip_norm'])
                optimizer.step()
                losses_epoch.append(loss.item())
                if initial_loss is None:
                    initial_loss = losses_epoch[-1]
                if step % config['log_every'] == 0:
                    self.log_info('step {:d} epoch {:d} lambda {:.3f} {}'.format(step, epoch, lam, ' '.join('{} {:.4f}'.format(name, value.item()) for name, value in losses.items())))
                step += 1
                if steps is not None and step >= steps:
                    report = {'task': config['task'], 'steps': step, 'loss': losses_epoch[-1], 'wall_time': time.time() - t0}
                    return None, report
            entry = {'epoch': epoch, 'train_loss': float(np.mean(losses_epoch)), 'lambda': schedule(max(step - 1, 0))}
            if len(val_set):
                entry['val'] = evaluate(self.model, val_set, metrics=metrics, batch_size=config['batch_size'])
                score = entry['val'][self.selection_metric]
            else:
                score = -entry['train_loss']
            self.log_info('epoch {:d} train_loss {:.4f} {}'.format(epoch, entry['train_loss'], ' '.join('{} {:.4f}'.format(name, value) for name, value in entry.get('val', {}).items())))
            fn = self.checkpoint_path('epoch_{:03d}.pt'.format(epoch))
            self.model.save(fn, epoch=epoch, step=step)
            entry['checkpoint'] = fn
            epochs.append(entry)
            if best is None or score > best[0]:
                best = (score, epoch)
                self.model.save(self.checkpoint_path('best.pt'), epoch=epoch, step=step)
        self.model.save(self.checkpoint_path('last.pt'), epoch=config['max_epochs'] - 1, step=step)
        report = {'task': config['task'], 'config': config.to_dict(), 'encoder': self.model.encoder_config.name,
                  'parameters': count_parameters(self.model), 'encoder_parameters': count_parameters(self.model.encoder),
                  'steps': step, 'wall_time': time.time() - t0, 'initial_loss': initial_loss, 'epochs': epochs, 'best_epoch': best[1],
                  'best_checkpoint': self.checkpoint_path('best.pt'), 'selection_metric': self.selection_metric}
        get_filetype('json', self.checkpoint_path('train_report.json')).write(report)
        return report['best_checkpoint'], report


def train_model(config, manifest, vocab=None):
    """
    Train a model for ``config`` on ``manifest``.

    Returns
    -------
    checkpoint : str
        Path to the best-validation checkpoint.

    report : dict
        Training report.
    """
    return Trainer(config, manifest, vocab=vocab).train()


def _check_dataset(dataset):
    if not len(dataset):
        raise ValueError('Cannot evaluate on empty split {}'.format(dataset.split))


@torch.no_grad()
def extract_encodings(model, dataset, batch_size=32):
    """Encodings (N, D) and labels (N,) of ``dataset`` (eval mode, no gradient)."""
    _check_dataset(dataset)
    model.eval()
    encodings, labels = [], []
    device = next(model.parameters()).device
    for batch in make_loader(dataset, batch_size=batch_size):
        encodings.append(model.encode(batch['clip'].to(device)).cpu())
        labels.append(batch['label'])
    return torch.cat(encodings), torch.cat(labels)


def _train_label_counts(manifest, hierarchy):
    counts = np.bincount(manifest.labels('train', target='fine'), minlength=hierarchy.category_count)
    return {category: int(count) for category, count in enumerate(counts)}


@torch.no_grad()
def evaluate(model, dataset, metrics=None, batch_size=32):
    """
    Evaluate ``model`` on ``dataset`` (eval preprocessing, greedy decoding).

    Parameters
    ----------
    model : JointModel
        Model.

    dataset : ClipDataset
        Evaluation dataset, in eval mode.

    metrics : list, default=None
        Metric names, see :data:`METRICS`; defaults to those of the model task.

    Returns
    -------
    scores : dict
        Dictionary metric name: value.
    """
    task = model.meta.get('task', dataset.task)
    metrics = list(metrics or DEFAULT_METRICS[task])
    unknown = [name for name in metrics if name not in METRICS]
    if unknown:
        raise ValueError('Unknown metrics {}; choose from {}'.format(unknown, METRICS))
    _check_dataset(dataset)
    model.eval()
    manifest = dataset.manifest
    hierarchy = LabelHierarchy.from_dict(model.meta['hierarchy']) if 'hierarchy' in model.meta else manifest.hierarchy
    device = next(model.parameters()).device
    fine_labels = np.array(manifest.labels(dataset.split, target='fine'))
    coarse_labels = np.array(manifest.labels(dataset.split, target='coarse'))
    need_captions = any(name in metrics for name in ['exact_match', 'bleu4', 'rouge_l', 'meteor_lite'])
    probs, predictions, nlls = [], [], []
    for batch in make_loader(dataset, batch_size=batch_size):
        clip = batch['clip'].to(device)
        h = model.encode(clip)
        if model.classifier is not None:
            probs.append(torch.softmax(model.class_logits(h), dim=-1).double().cpu().numpy())
        if model.decoder is not None:
            if 'caption_nll' in metrics:
                nlls.append(model.caption_nll(h, batch['tokens'].to(device), reduction='none').double().cpu().numpy())
            if need_captions:
                max_len = model.meta.get('preprocess', {}).get('max_len', dataset.max_len)
                predictions += model.decoder.decode_greedy(h, max_len=max_len)
    coarse_model = task == 'coarse_cls'
    probs = np.concatenate(probs) if probs else None
    scores = {}

    def require(name, condition):
        if not condition:
            raise ValueError('Metric {} is not available for task {}'.format(name, task))

    for name in metrics:
        if name in ('accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed'):
            require(name, probs is not None)
        if name == 'accuracy':
            scores[name] = fgmetrics.classification_accuracy(probs.argmax(axis=-1), coarse_labels if coarse_model else fine_labels)
        elif name == 'fine_accuracy':
            require(name, not coarse_model)
            scores[name] = fgmetrics.classification_accuracy(probs.argmax(axis=-1), fine_labels)
        elif name == 'coarse_accuracy':
            groups = probs.argmax(axis=-1) if coarse_model else fgmetrics.coarse_from_fine_argmax(probs, hierarchy)
            scores[name] = fgmetrics.classification_accuracy(groups, coarse_labels)
        elif name == 'coarse_accuracy_summed':
            group_probs = probs if coarse_model else fgmetrics.group_probs_from_fine(probs, hierarchy)
            scores[name] = fgmetrics.classification_accuracy(group_probs.argmax(axis=-1), coarse_labels)
        elif name in ('exact_match', 'bleu4', 'rouge_l', 'meteor_lite'):
            require(name, model.decoder is not None)
            pairs = [(decode_tokens(sequence, dataset.vocab), dataset.reference_tokens(index)) for index, sequence in enumerate(predictions)]
            scores[name] = getattr(fgmetrics, name if name != 'exact_match' else 'exact_match_accuracy')(pairs)
        elif name == 'caption_nll':
            require(name, model.decoder is not None)
            scores[name] = float(np.mean(np.concatenate(nlls)))
        elif name == 'baseline_frequent_fine':
            require(name, probs is not None)
            groups = probs.argmax(axis=-1) if coarse_model else fgmetrics.coarse_from_fine_argmax(probs, hierarchy)
            fine = fgmetrics.baseline_frequent_fine(groups, _train_label_counts(manifest, hierarchy), hierarchy)
            scores[name] = fgmetrics.classification_accuracy(fine, fine_labels)
        elif name == 'baseline_template_fill':
            require(name, probs is not None and dataset.vocab is not None)
            fine = probs.argmax(axis=-1)
            if coarse_model:
                fine = fgmetrics.baseline_frequent_fine(fine, _train_label_counts(manifest, hierarchy), hierarchy)
            records = manifest.records
            counts = fgmetrics.count_object_strings([records[video_id] for video_id in manifest.ids('train')], simplified=task != 'caption_full')
            pairs = []
            for index, category in enumerate(fine):
                caption = fgmetrics.baseline_template_fill(category, counts, manifest.templates)
                tokens = decode_tokens(encode_tokens(tokenize_caption(caption), dataset.vocab, max_len=dataset.max_len), dataset.vocab)
                pairs.append((tokens, dataset.reference_tokens(index)))
            scores[name] = fgmetrics.exact_match_accuracy(pairs)
    return scores


def dataset_for_model(model, manifest, split, mode='eval'):
    """:class:`ClipDataset` of ``split`` with the task, vocabulary and preprocessing stored in ``model``."""
    preprocess = dict(model.meta.get('preprocess', {}))
    dtype = {'float32': torch.float32, 'float64': torch.float64}[preprocess.pop('dtype', 'float32')]
    return ClipDataset(manifest, split, task=model.meta['task'], vocab=model_vocabulary(model), mode=mode, dtype=dtype, **preprocess)


def evaluate_model(checkpoint, manifest, split='val', metrics=None, batch_size=32):
    """
    Evaluate checkpoint on a manifest split.

    Returns
    -------
    report : dict
        split, task, checkpoint, count, metrics, wall_time.
    """
    t0 = time.time()
    model = JointModel.load(checkpoint) if not isinstance(checkpoint, JointModel) else checkpoint
    if not isinstance(manifest, Manifest):
        manifest = Manifest.read(manifest)
    dataset = dataset_for_model(model, manifest, split)
    scores = evaluate(model, dataset, metrics=metrics, batch_size=batch_size)
    logger.info('Evaluation on {} ({:d} clips): {}'.format(split, len(dataset), scores))
    return {'split': split, 'task': model.meta['task'], 'checkpoint': checkpoint if isinstance(checkpoint, str) else None,
            'count': len(dataset), 'metrics': scores, 'wall_time': time.time() - t0}


def train_probe(train_features, train_labels, num_classes, epochs=200, learning_rate=1e-3, batch_size=64, seed=0):
    """Fit an affine + softmax head on fixed features with Adam; return the head."""
    generator = torch.Generator().manual_seed(int(seed))
    head = torch.nn.Linear(train_features.shape[-1], num_classes).to(train_features.dtype)
    with torch.no_grad():
        bound = 1. / math.sqrt(train_features.shape[-1])
        head.weight.uniform_(-bound, bound, generator=generator)
        head.bias.uniform_(-bound, bound, generator=generator)
    optimizer = torch.optim.Adam(head.parameters(), lr=learning_rate)
    for epoch in range(epochs):
        order = torch.randperm(len(train_features), generator=generator)
        for start in range(0, len(order), batch_size):
            index = order[start:start + batch_size]
            loss = F.cross_entropy(head(train_features[index]), train_labels[index])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
    return head


def fit_linear_probe(checkpoint, manifest, target='fine', epochs=200, learning_rate=1e-3, batch_size=64, seed=0, split='val'):
    """
    Train a linear classifier on top of the frozen encodings of a checkpoint.

    Parameters
    ----------
    checkpoint : str, JointModel
        Checkpoint path or model.

    manifest : str, Manifest
        Corpus manifest.

    target : str, default='fine'
        'fine' (categories) or 'coarse' (groups).

    split : str, default='val'
        Split to report accuracy on.

    Returns
    -------
    report : dict
        accuracy, train_accuracy, and encoder parameter hashes before / after probe training.
    """
    if target not in ('fine', 'coarse'):
        raise ValueError('Unknown probe target {}; choose from ["fine", "coarse"]'.format(target))
    model = JointModel.load(checkpoint) if not isinstance(checkpoint, JointModel) else checkpoint
    if not isinstance(manifest, Manifest):
        manifest = Manifest.read(manifest)
    hierarchy = manifest.hierarchy
    if 'hierarchy' in model.meta and LabelHierarchy.from_dict(model.meta['hierarchy']) != hierarchy:
        raise ValueError('Label space of checkpoint {} does not match that of the manifest {}'.format(LabelHierarchy.from_dict(model.meta['hierarchy']), hierarchy))
    model.freeze_encoder()
    hash_before = utils.hash_state(model.encoder)
    num_classes = hierarchy.category_count if target == 'fine' else hierarchy.group_count
    task = 'coarse_cls' if target == 'coarse' else 'fine_cls'
    preprocess = dict(model.meta.get('preprocess', {}))
    dtype = {'float32': torch.float32, 'float64': torch.float64}[preprocess.pop('dtype', 'float32')]
    preprocess.pop('max_len', None)
    features = {}
    for name in ['train', split]:
        dataset = ClipDataset(manifest, name, task=task, mode='eval', dtype=dtype, **preprocess)
        features[name] = extract_encodings(model, dataset, batch_size=batch_size)
    head = train_probe(*features['train'], num_classes, epochs=epochs, learning_rate=learning_rate, batch_size=batch_size, seed=seed)
    with torch.no_grad():
        accuracy = {name: fgmetrics.classification_accuracy(head(encodings).argmax(dim=-1).tolist(), labels.tolist()) for name, (encodings, labels) in features.items()}
    hash_after = utils.hash_state(model.encoder)
    if hash_after != hash_before:
        raise RuntimeError('Encoder parameters changed during probe training')
    report = {'target': target, 'split': split, 'accuracy': accuracy[split], 'train_accuracy': accuracy['train'], 'num_classes': num_classes,
              'encoder_hash_before': hash_before, 'encoder_hash_after': hash_after, 'task': model.meta.get('task', None)}
    logger.info('Linear probe ({}) accuracy on {}: {:.4f}.'.format(target, split, report['accuracy']))
    return report
