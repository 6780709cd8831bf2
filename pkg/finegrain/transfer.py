"""
Few-shot transfer benchmark: frozen backbones produce 12 feature vectors per second of video,
probe heads (logistic, MLP with 512 hidden units, bidirectional LSTM with 128 hidden units) are trained on k-shot episodes,
and scores are averaged over runs with Student-t 95% confidence intervals.

To add a backbone, just subclass :class:`BaseAdapter`.
"""

import os
import math
import copy
import logging

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pad_sequence, pack_padded_sequence

from . import utils
from .utils import BaseClass
from .io import get_filetype
from .corpus import Manifest
from .videoio import preprocess_frames
from .heads import JointModel


logger = logging.getLogger('transfer')


HEADS = ['logistic', 'mlp512', 'bilstm128']


class RegisteredAdapter(type(BaseClass)):

    """Metaclass registering :class:`BaseAdapter`-derived classes."""

    _registry = {}

    def __new__(meta, name, bases, class_dict):
        cls = super().__new__(meta, name, bases, class_dict)
        meta._registry[cls.name] = cls
        return cls


class BaseAdapter(BaseClass, metaclass=RegisteredAdapter):
    """
    Frozen backbone: maps a clip of :attr:`clip_len` uint8 frames (clip_len, H, W, 3) to one feature vector of size :attr:`feature_dim`.

    Attributes
    ----------
    identity : str
        Name of the backbone, as reported in benchmark reports.
    """
    name = 'base'
    clip_len = 1

    def __init__(self, identity=None):
        self.identity = identity or self.name

    @property
    def feature_dim(self):
        raise NotImplementedError

    def extract(self, frames):
        raise NotImplementedError('Implement extract method in {}'.format(self.__class__.__name__))

    def parameters_hash(self):
        """md5 digest of the backbone parameters."""
        return utils.hash_state([])

    def __repr__(self):
        return '{}(identity={}, clip_len={:d}, feature_dim={:d})'.format(self.__class__.__name__, self.identity, self.clip_len, self.feature_dim)


def get_adapter(adapter, *args, **kwargs):
    """Return :class:`BaseAdapter` instance given its registered name."""
    if isinstance(adapter, BaseAdapter):
        return adapter
    try:
        cls = BaseAdapter._registry[adapter]
    except KeyError as exc:
        raise ValueError('Unknown adapter {}; choose from {}'.format(adapter, list(BaseAdapter._registry))) from exc
    return cls(*args, **kwargs)


class CheckpointAdapter(BaseAdapter):
    """
    Encoder of a :class:`JointModel` checkpoint: clips of ``clip_len`` frames (default 16) are encoded into h.

    With the 3D channel enabled, each clip is padded by replicating its last frame up to a multiple of the temporal stride.
    """
    name = 'checkpoint'

    def __init__(self, checkpoint, clip_len=16, identity=None):
        self.model = JointModel.load(checkpoint) if not isinstance(checkpoint, JointModel) else checkpoint
        self.model.freeze_encoder()
        self.clip_len = int(clip_len)
        if self.clip_len < 1:
            raise ValueError('clip_len must be >= 1, got {}'.format(clip_len))
        preprocess = self.model.meta.get('preprocess', {})
        self.resize, self.crop = preprocess.get('resize', 128), preprocess.get('crop', 96)
        self.dtype = next(self.model.encoder.parameters()).dtype
        self.frame_multiple = 1
        if getattr(self.model.encoder, 'blocks_3d', None) is not None:
            self.frame_multiple = self.model.encoder_config.temporal_stride
        super().__init__(identity=identity or self.model.meta.get('task', self.model.encoder_config.name))

    @property
    def feature_dim(self):
        return self.model.encoder_config.embedding_dim

    def clip_tensor(self, frames):
        frames = np.asarray(frames)
        padding = -len(frames) % self.frame_multiple
        if padding:
            frames = np.concatenate([frames, np.repeat(frames[-1:], padding, axis=0)], axis=0)
        return preprocess_frames(frames, mode='eval', resize=self.resize, crop=self.crop, dtype=self.dtype)[None]

    @torch.no_grad()
    def extract(self, frames):
        return self.model.encode(self.clip_tensor(frames))[0]

    def parameters_hash(self):
        return utils.hash_state(self.model.encoder)


class FrameAdapter(CheckpointAdapter):

    """Per-frame backbone of a checkpoint: 2D channel of the two-channel encoder, or frame baseline backbone."""
    name = 'frame'

    def __init__(self, checkpoint, identity=None):
        super().__init__(checkpoint, clip_len=1, identity=identity)
        self.frame_multiple = 1
        self.identity = identity or '{}_frame'.format(self.model.meta.get('task', self.model.encoder_config.name))
        encoder = self.model.encoder
        self._backbone = encoder.backbone if hasattr(encoder, 'backbone') else None
        if self._backbone is None:
            encoder.target_layer('2d')  # raises if the 2D channel is disabled

    @property
    def feature_dim(self):
        if self._backbone is not None:
            return self._backbone.out_channels
        return self.model.encoder_config.channels_2d

    @torch.no_grad()
    def extract(self, frames):
        clip = self.clip_tensor(frames)
        if self._backbone is not None:
            return self._backbone(clip)[0, 0]
        return self.model.encoder.forward_2d(clip)[0, 0]


class PixelsAdapter(BaseAdapter):

    """Parameter-free control: per-frame mean and standard deviation of each color, and mean grey level over a 4 x 4 grid."""
    name = 'pixels'
    grid = 4

    @property
    def feature_dim(self):
        return 6 + self.grid**2

    def extract(self, frames):
        frame = torch.as_tensor(np.asarray(frames[0], dtype='f8') / 255.)
        grey = frame.mean(dim=-1)[None, None]
        cells = F.adaptive_avg_pool2d(grey, self.grid).flatten()
        return torch.cat([frame.mean(dim=(0, 1)), frame.std(dim=(0, 1)), cells]).float()


def extract_feature_sequence(adapter, frames):
    """
    Feature sequence of a video at 12 frames per second: one vector per frame.

    The video is split into consecutive non-overlapping clips of ``adapter.clip_len`` frames,
    the last one padded by replicating the last frame; each clip-level feature is replicated for each frame of its clip,
    and the padding is truncated.

    Parameters
    ----------
    adapter : BaseAdapter
        Backbone.

    frames : array
        uint8 array of shape (T, H, W, 3).

    Returns
    -------
    features : torch.Tensor
        Tensor of shape (T, feature_dim).
    """
    frames = np.asarray(frames)
    nframes = len(frames)
    if nframes == 0:
        raise ValueError('Cannot extract features from zero frames')
    clip_len = adapter.clip_len
    nclips = math.ceil(nframes / clip_len)
    padding = nclips * clip_len - nframes
    if padding:
        frames = np.concatenate([frames, np.repeat(frames[-1:], padding, axis=0)], axis=0)
    features = [adapter.extract(frames[iclip * clip_len:(iclip + 1) * clip_len]) for iclip in range(nclips)]
    features = torch.stack(features).repeat_interleave(clip_len, dim=0)
    return features[:nframes]


class TemporalAverageHead(nn.Module):

    """Per-timestep classifier; class probabilities are averaged over time."""

    def __init__(self, feature_dim, num_classes, hidden=None):
        super().__init__()
        if hidden:
            self.net = nn.Sequential(nn.Linear(feature_dim, hidden), nn.ReLU(), nn.Linear(hidden, num_classes))
        else:
            self.net = nn.Linear(feature_dim, num_classes)

    def forward(self, features, lengths):
        """Log of time-averaged probabilities (B, C), from padded features (B, T, F)."""
        probs = torch.softmax(self.net(features), dim=-1)
        mask = (torch.arange(features.shape[1])[None, :] < lengths[:, None]).to(probs.dtype)
        probs = (probs * mask[..., None]).sum(dim=1) / lengths[:, None].to(probs.dtype)
        return torch.log(probs.clamp_min(torch.finfo(probs.dtype).tiny))


class BiLSTMHead(nn.Module):

    """Single bidirectional LSTM layer; final states of both directions -> affine -> softmax."""

    def __init__(self, feature_dim, num_classes, hidden=128):
        super().__init__()
        self.lstm = nn.LSTM(feature_dim, hidden, batch_first=True, bidirectional=True)
        self.output = nn.Linear(2 * hidden, num_classes)

    def forward(self, features, lengths):
        packed = pack_padded_sequence(features, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (hidden, _) = self.lstm(packed)
        return torch.log_softmax(self.output(torch.cat([hidden[-2], hidden[-1]], dim=-1)), dim=-1)


def build_head(head_kind, feature_dim, num_classes):
    """Probe head 'logistic', 'mlp512' or 'bilstm128'."""
    if head_kind == 'logistic':
        return TemporalAverageHead(feature_dim, num_classes)
    if head_kind == 'mlp512':
        return TemporalAverageHead(feature_dim, num_classes, hidden=512)
    if head_kind == 'bilstm128':
        return BiLSTMHead(feature_dim, num_classes, hidden=128)
    raise ValueError('Unknown head {}; choose from {}'.format(head_kind, HEADS))


def _pad(features):
    lengths = torch.tensor([len(feature) for feature in features], dtype=torch.int64)
    return pad_sequence([torch.as_tensor(feature, dtype=torch.float32) for feature in features], batch_first=True), lengths


@torch.no_grad()
def predict_head(head, features, batch_size=64):
    """Class predictions of ``head`` for a list of feature sequences."""
    head.eval()
    predictions = []
    for start in range(0, len(features), batch_size):
        padded, lengths = _pad(features[start:start + batch_size])
        predictions.append(head(padded, lengths).argmax(dim=-1))
    return torch.cat(predictions).tolist() if predictions else []


def fit_transfer_head(features, labels, head_kind='logistic', seed=0, num_classes=None, test_features=None, test_labels=None,
                      max_epochs=200, patience=20, learning_rate=1e-3, batch_size=32):
    """
    Train a probe head on variable-length feature sequences with Adam.

    If every class has at least 2 samples, one sample per class is held out for early stopping
    (on held-out loss, with ``patience`` epochs); else the head is trained for ``max_epochs`` epochs.

    Parameters
    ----------
    features : list
        List of tensors (T_i, F).

    labels : list
        Class labels.

    head_kind : str, default='logistic'
        'logistic', 'mlp512' or 'bilstm128'.

    seed : int, default=0
        Seed for initialization, held-out draw and batch order.

    num_classes : int, default=None
        Number of classes; defaults to max(labels) + 1.

    test_features, test_labels : list, default=None
        If provided, the returned accuracy is computed on them; else on the training samples.

    Returns
    -------
    head : nn.Module
        Trained head.

    accuracy : float
    """
    labels = [int(label) for label in labels]
    if num_classes is None:
        num_classes = max(labels) + 1
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError('Classes {} have no training sample'.format(np.flatnonzero(counts == 0).tolist()))
    rng = np.random.default_rng(seed)
    torch.manual_seed(int(rng.integers(0, 2**31 - 1)))
    head = build_head(head_kind, features[0].shape[-1], num_classes)
    optimizer = torch.optim.Adam(head.parameters(), lr=learning_rate)
    train_index, held_index = list(range(len(labels))), []
    if counts.min() >= 2:
        held_index = [int(rng.choice(np.flatnonzero(np.array(labels) == label))) for label in range(num_classes)]
        train_index = [index for index in train_index if index not in held_index]
    held = _pad([features[index] for index in held_index]) if held_index else None
    held_labels = torch.tensor([labels[index] for index in held_index], dtype=torch.int64)
    best_loss, best_state, wait = math.inf, None, 0
    for epoch in range(max_epochs):
        head.train()
        order = rng.permutation(train_index)
        for start in range(0, len(order), batch_size):
            index = order[start:start + batch_size]
            padded, lengths = _pad([features[i] for i in index])
            loss = F.nll_loss(head(padded, lengths), torch.tensor([labels[i] for i in index], dtype=torch.int64))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
        if held is not None:
            head.eval()
            with torch.no_grad():
                held_loss = F.nll_loss(head(*held), held_labels).item()
            if held_loss < best_loss:
                best_loss, best_state, wait = held_loss, copy.deepcopy(head.state_dict()), 0
            else:
                wait += 1
                if wait >= patience:
                    break
    if best_state is not None:
        head.load_state_dict(best_state)
    if test_features is None:
        test_features, test_labels = features, labels
    accuracy = float(np.mean(np.array(predict_head(head, test_features)) == np.array(test_labels, dtype='i8')))
    return head, accuracy


class EpisodeSpec(BaseClass):
    """
    k-shot episode specification.

    Parameters
    ----------
    shots : int, str, default=1
        Number of training samples per class, or 'full' for the full training split.

    runs : int, default=10
        Number of runs (episodes).

    seed : int, default=0
        Base seed.
    """
    def __init__(self, shots=1, runs=10, seed=0):
        if shots != 'full':
            shots = int(shots)
            if shots < 1:
                raise ValueError('shots must be >= 1 or "full", got {}'.format(shots))
        self.shots, self.runs, self.seed = shots, int(runs), int(seed)
        if self.runs < 1:
            raise ValueError('runs must be >= 1, got {:d}'.format(self.runs))

    def __repr__(self):
        return '{}(shots={}, runs={:d}, seed={:d})'.format(self.__class__.__name__, self.shots, self.runs, self.seed)


def sample_episode(manifest, spec, run_index, train_split='train', test_split='test'):
    """
    Draw the training samples of one episode: ``spec.shots`` samples per class without replacement (seeded with (seed, run_index)),
    or the full training split; test samples are the fixed test split.

    Returns
    -------
    train_ids, test_ids : list
    """
    per_class = manifest.per_class(train_split)
    num_classes = manifest.hierarchy.category_count
    missing = [label for label in range(num_classes) if label not in per_class]
    if missing:
        raise ValueError('Classes {} have no sample in split {}'.format(missing, train_split))
    test_ids = manifest.ids(test_split)
    if spec.shots == 'full':
        return manifest.ids(train_split), test_ids
    rng = np.random.default_rng([spec.seed, int(run_index)])
    train_ids = []
    for label, video_ids in per_class.items():
        if spec.shots > len(video_ids):
            raise ValueError('{} shots requested, but class {} has {:d} samples'.format(spec.shots, label, len(video_ids)))
        train_ids += [video_ids[index] for index in sorted(rng.choice(len(video_ids), size=spec.shots, replace=False))]
    return train_ids, test_ids


def confidence_interval(scores, confidence=0.95):
    """
    Mean and half-width of the two-sided Student-t confidence interval with len(scores) - 1 degrees of freedom
    (half-width 0 for a single score).
    """
    from scipy import stats
    scores = np.asarray(scores, dtype='f8')
    if scores.size == 0:
        raise ValueError('Cannot compute confidence interval of zero scores')
    mean = float(scores.mean())
    if scores.size == 1:
        return mean, 0.
    half = stats.t.ppf(0.5 * (1. + confidence), scores.size - 1) * scores.std(ddof=1) / math.sqrt(scores.size)
    return mean, float(half)


class BenchmarkReport(BaseClass):
    """
    Transfer benchmark report: one cell per (backbone, head, shots), with per-run scores, mean and 95% CI half-width.
    """
    def __init__(self, cells=None, hashes=None, meta=None):
        self.cells = list(cells or [])
        self.hashes = dict(hashes or {})
        self.meta = dict(meta or {})

    def to_dict(self):
        return {'cells': self.cells, 'hashes': self.hashes, 'meta': self.meta}

    @classmethod
    def read(cls, fn):
        return cls(**get_filetype('json', fn).read())

    def write(self, fn):
        get_filetype('json', fn).write(self.to_dict())

    def cell(self, backbone, head, shots):
        for cell in self.cells:
            if (cell['backbone'], cell['head'], cell['shots']) == (backbone, head, shots):
                return cell
        raise KeyError('No cell ({}, {}, {})'.format(backbone, head, shots))

    def check_monotonicity(self):
        """Log warnings for (backbone, head) with mean accuracy at 5 shots below that at 1 shot; return the list of violations."""
        violations = []
        for cell in self.cells:
            if cell['shots'] != 5: continue
            try:
                one = self.cell(cell['backbone'], cell['head'], 1)
            except KeyError:
                continue
            if cell['mean'] < one['mean']:
                violations.append((cell['backbone'], cell['head']))
                self.log_warning('{} / {}: 5-shot accuracy {:.3f} below 1-shot accuracy {:.3f}.'.format(cell['backbone'], cell['head'], cell['mean'], one['mean']))
        return violations

    def plot(self, fn=None):
        """Grouped bar chart of mean accuracy with 95% confidence intervals; one group per (head, shots), one bar per backbone."""
        import matplotlib
        matplotlib.use('Agg')
        from matplotlib import pyplot as plt
        backbones = list(dict.fromkeys(cell['backbone'] for cell in self.cells))
        groups = list(dict.fromkeys((cell['head'], cell['shots']) for cell in self.cells))
        width = 0.8 / max(len(backbones), 1)
        fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(groups)), 4))
        for ibackbone, backbone in enumerate(backbones):
            means, errors, positions = [], [], []
            for igroup, (head, shots) in enumerate(groups):
                try:
                    cell = self.cell(backbone, head, shots)
                except KeyError:
                    continue
                means.append(cell['mean'])
                errors.append(cell['ci95'])
                positions.append(igroup + (ibackbone - (len(backbones) - 1) / 2.) * width)
            ax.bar(positions, means, width=width, yerr=errors, capsize=2, label=backbone)
        ax.set_xticks(range(len(groups)))
        ax.set_xticklabels(['{}\n{}-shot'.format(head, shots) for head, shots in groups])
        ax.set_ylabel('accuracy')
        ax.set_ylim(0., 1.)
        ax.legend(fontsize='small')
        if fn is not None:
            get_filetype('image', fn).write(fig)
            plt.close(fig)
        return fig


def _as_list(item):
    return list(item) if utils.is_sequence(item) else [item]


def run_benchmark(adapters, heads, specs, manifest, out_dir=None, mpicomm=None, **kwargs):
    """
    Run the transfer benchmark over the cartesian product of (adapter, head, episode spec) x runs.

    Parameters
    ----------
    adapters : list
        List of :class:`BaseAdapter`.

    heads : list
        Head kinds, in :data:`HEADS`.

    specs : list
        List of :class:`EpisodeSpec` (one per shot level).

    manifest : str, Manifest
        Manifest of the transfer corpus (e.g. toy kitchenware), with train and test splits.

    out_dir : str, Path, default=None
        If provided, write 'transfer_report.json' and 'transfer_report.png' there.

    mpicomm : MPI communicator, default=None
        If provided, (cell, run) items are distributed over processes; the report does not depend on the number of processes.

    kwargs : dict
        Optional arguments for :func:`fit_transfer_head`.

    Returns
    -------
    report : BenchmarkReport
    """
    adapters, heads, specs = [get_adapter(adapter) for adapter in _as_list(adapters)], _as_list(heads), _as_list(specs)
    for head in heads:
        if head not in HEADS:
            raise ValueError('Unknown head {}; choose from {}'.format(head, HEADS))
    if not isinstance(manifest, Manifest):
        manifest = Manifest.read(manifest)
    num_classes = manifest.hierarchy.category_count
    rank, size = (0, 1) if mpicomm is None else (mpicomm.rank, mpicomm.size)
    hashes = {adapter.identity: {'before': adapter.parameters_hash()} for adapter in adapters}
    video_ids = list(dict.fromkeys(manifest.ids('train') + manifest.ids('test')))
    items = [(iadapter, head, ispec, run) for iadapter in range(len(adapters)) for head in heads for ispec, spec in enumerate(specs) for run in range(spec.runs)]
    features = {}
    scores = {}
    for iitem, (iadapter, head, ispec, run) in enumerate(items):
        if iitem % size != rank: continue
        adapter, spec = adapters[iadapter], specs[ispec]
        if iadapter not in features:
            features[iadapter] = {video_id: extract_feature_sequence(adapter, manifest.read_frames(video_id)) for video_id in video_ids}
            logger.info('Extracted features of {:d} videos with {}.'.format(len(video_ids), adapter))
        train_ids, test_ids = sample_episode(manifest, spec, run)
        fine = {video_id: manifest.episode(video_id)['category'] for video_id in train_ids + test_ids}
        _, accuracy = fit_transfer_head([features[iadapter][video_id] for video_id in train_ids], [fine[video_id] for video_id in train_ids],
                                        head_kind=head, seed=spec.seed * 1000 + run,
                                        num_classes=num_classes, test_features=[features[iadapter][video_id] for video_id in test_ids],
                                        test_labels=[fine[video_id] for video_id in test_ids], **kwargs)
        scores[iitem] = accuracy
    if mpicomm is not None:
        gathered = mpicomm.allgather(scores)
        scores = {key: value for part in gathered for key, value in part.items()}
    cells = []
    for iadapter, adapter in enumerate(adapters):
        for head in heads:
            for ispec, spec in enumerate(specs):
                values = [scores[iitem] for iitem, item in enumerate(items) if item[:3] == (iadapter, head, ispec)]
                mean, half = confidence_interval(values)
                cells.append({'backbone': adapter.identity, 'head': head, 'shots': spec.shots, 'runs': spec.runs, 'mean': mean, 'ci95': half, 'scores': values})
    for adapter in adapters:
        hashes[adapter.identity]['after'] = adapter.parameters_hash()
        if hashes[adapter.identity]['after'] != hashes[adapter.identity]['before']:
            raise RuntimeError('Backbone {} parameters changed during benchmark'.format(adapter.identity))
    report = BenchmarkReport(cells=cells, hashes=hashes, meta={'manifest': manifest.path, 'num_classes': num_classes,
                                                                'specs': [{'shots': spec.shots, 'runs': spec.runs, 'seed': spec.seed} for spec in specs]})
    report.check_monotonicity()
    if out_dir is not None and rank == 0:
        report.write(os.path.join(out_dir, 'transfer_report.json'))
        report.plot(os.path.join(out_dir, 'transfer_report.png'))
    return report


def granularity_ladder(manifest, transfer_manifest, out_dir, config, heads=HEADS, specs=None, tasks=('coarse_cls', 'fine_cls', 'caption_simplified', 'caption_full'), mpicomm=None, **kwargs):
    """
    Train one backbone per task on ``manifest`` and benchmark their transfer to ``transfer_manifest`` in one report.

    Parameters
    ----------
    config : TrainConfig, dict
        Base training configuration; task and checkpoint directory are set per backbone.

    Returns
    -------
    report : BenchmarkReport
    """
    from .training import TrainConfig, train_model
    if specs is None:
        specs = [EpisodeSpec(shots=1), EpisodeSpec(shots=5)]
    adapters = []
    for task in tasks:
        task_config = TrainConfig(config, task=task, checkpoint_dir=os.path.join(out_dir, task))
        checkpoint, _ = train_model(task_config, manifest)
        adapters.append(CheckpointAdapter(checkpoint, identity=task))
    return run_benchmark(adapters, heads, specs, transfer_manifest, out_dir=out_dir, mpicomm=mpicomm, **kwargs)
