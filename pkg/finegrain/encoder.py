"""
Shared video encoder: parallel 2D (per-frame) and 3D (spatiotemporal) convolutional channels,
concatenated per timestep, aggregated by a 2-layer bidirectional LSTM and averaged over time into the encoding h.
Also implements the frame-encoder baselines (middle frame, frame average, LSTM over frames).
"""

import re
import logging

import torch
from torch import nn
import torch.nn.functional as F

from .utils import BaseClass
from .config import ConfigError


logger = logging.getLogger('encoder')


class ChannelDisabledError(ValueError):

    """Raised when running a channel of width 0."""


ARCHITECTURES = ['two_channel', 'frame_middle', 'frame_average', 'frame_lstm']


class EncoderConfig(BaseClass):
    """
    Encoder configuration.

    Parameters
    ----------
    channels_3d : int, default=256
        Width F3 of the 3D channel (0 to disable it).

    channels_2d : int, default=256
        Width F2 of the 2D channel (0 to disable it); for frame baselines, width of the per-frame backbone.

    blocks : int, default=5
        Number of convolutional blocks per channel.

    lstm_hidden : int, default=256
        Hidden size of the aggregating LSTM; the encoding has dimension 2 x ``lstm_hidden``.

    lstm_layers : int, default=2
        Number of LSTM layers, must be 2.

    architecture : str, default='two_channel'
        'two_channel', or frame baselines 'frame_middle', 'frame_average', 'frame_lstm'.

    baseline_hidden : int, default=1024
        Hidden size of frame baselines (MLP, or LSTM); the encoding of frame baselines has this dimension.
    """
    _defaults = dict(channels_3d=256, channels_2d=256, blocks=5, lstm_hidden=256, lstm_layers=2, architecture='two_channel', baseline_hidden=1024)

    def __init__(self, **kwargs):
        for name, value in self._defaults.items():
            setattr(self, name, value)
        self.update(**kwargs)

    def update(self, **kwargs):
        for name, value in kwargs.items():
            if name not in self._defaults:
                raise ValueError('Unknown argument {}; supports {}'.format(name, list(self._defaults)))
            setattr(self, name, value if name == 'architecture' else int(value))
        self.check()

    def check(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError('Unknown architecture {}; choose from {}'.format(self.architecture, ARCHITECTURES))
        if self.channels_3d < 0 or self.channels_2d < 0:
            raise ConfigError('Channel widths must be >= 0, got {:d}-{:d}'.format(self.channels_3d, self.channels_2d))
        if self.architecture == 'two_channel' and self.channels_3d + self.channels_2d == 0:
            raise ConfigError('At least one channel must be enabled, got M(0-0)')
        if self.architecture != 'two_channel' and self.channels_2d == 0:
            raise ConfigError('Frame baselines need channels_2d > 0')
        if self.lstm_layers != 2:
            raise ConfigError('lstm_layers is fixed to 2, got {:d}'.format(self.lstm_layers))
        if self.blocks < 1:
            raise ConfigError('blocks must be >= 1, got {:d}'.format(self.blocks))

    @classmethod
    def from_name(cls, name, **kwargs):
        """
        Configuration from model name 'M(F3-F2)'.

        >>> EncoderConfig.from_name('M(256-0)').channels_2d
        0
        """
        match = re.match(r'M\((\d+)-(\d+)\)$', name.strip())
        if match is None:
            raise ConfigError('Model name {} is not of the form M(F3-F2)'.format(name))
        return cls(channels_3d=int(match.group(1)), channels_2d=int(match.group(2)), **kwargs)

    @property
    def name(self):
        if self.architecture == 'two_channel':
            return 'M({:d}-{:d})'.format(self.channels_3d, self.channels_2d)
        return self.architecture

    @property
    def embedding_dim(self):
        """Dimension D of the encoding."""
        if self.architecture == 'two_channel':
            return 2 * self.lstm_hidden
        return self.baseline_hidden

    @property
    def temporal_stride(self):
        """Total temporal stride of the 3D channel: 2 in each of the last two blocks."""
        return 2 ** min(self.blocks, 2)

    def widths(self, channels):
        """Widths of the successive blocks, doubling up to ``channels`` at the last block."""
        return [max(channels // 2**(self.blocks - 1 - iblock), 1) for iblock in range(self.blocks)]

    def to_dict(self):
        return {name: getattr(self, name) for name in self._defaults}

    @classmethod
    def from_dict(cls, state):
        return cls(**state)

    def __eq__(self, other):
        return isinstance(other, EncoderConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return '{}({})'.format(self.__class__.__name__, ', '.join('{}={}'.format(name, value) for name, value in self.to_dict().items()))


class Block2d(nn.Sequential):

    """3x3 convolution + batch normalization + ReLU + 2x2 spatial average pooling."""

    def __init__(self, in_channels, out_channels):
        super().__init__(nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
                         nn.BatchNorm2d(out_channels), nn.ReLU(), nn.AvgPool2d(2))


class Block3d(nn.Sequential):

    """3x3x3 convolution + batch normalization + ReLU + (temporal_stride, 2, 2) average pooling."""

    def __init__(self, in_channels, out_channels, temporal_stride=1):
        # replicate padding: a temporally constant input yields temporally constant features
        super().__init__(nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1, padding_mode='replicate'),
                         nn.BatchNorm3d(out_channels), nn.ReLU(), nn.AvgPool3d((temporal_stride, 2, 2)))


class FrameConvStack(nn.Module):

    """Stack of :class:`Block2d` followed by global spatial average pooling, applied to each frame independently."""

    def __init__(self, widths):
        super().__init__()
        self.blocks = nn.Sequential(*[Block2d(cin, cout) for cin, cout in zip([3] + widths[:-1], widths)])
        self.out_channels = widths[-1]

    def forward(self, clip):
        """(B, T, 3, H, W) -> (B, T, C)."""
        batch, nframes = clip.shape[:2]
        features = self.blocks(clip.reshape((batch * nframes,) + tuple(clip.shape[2:])))
        return features.mean(dim=(-2, -1)).reshape(batch, nframes, -1)


class TwoChannelEncoder(nn.Module):
    """
    Two-channel video encoder.

    Input clips are tensors of shape (B, T, 3, H, W); the encoding h has shape (B, D), D = 2 x ``lstm_hidden``.
    """
    def __init__(self, config=None, **kwargs):
        super().__init__()
        if config is None:
            config = EncoderConfig(**kwargs)
        elif kwargs:
            config = EncoderConfig(**{**config.to_dict(), **kwargs})
        if config.architecture != 'two_channel':
            raise ConfigError('{} expects architecture two_channel, got {}'.format(self.__class__.__name__, config.architecture))
        self.config = config
        self.channel_2d = FrameConvStack(config.widths(config.channels_2d)) if config.channels_2d else None
        self.blocks_3d = None
        if config.channels_3d:
            widths = config.widths(config.channels_3d)
            self.blocks_3d = nn.Sequential(*[Block3d(cin, cout, temporal_stride=2 if iblock >= config.blocks - 2 else 1)
                                             for iblock, (cin, cout) in enumerate(zip([3] + widths[:-1], widths))])
        self.lstm = nn.LSTM(config.channels_3d + config.channels_2d, config.lstm_hidden, num_layers=config.lstm_layers,
                            batch_first=True, bidirectional=True)

    @property
    def embedding_dim(self):
        return self.config.embedding_dim

    def forward_2d(self, clip):
        """Per-frame 2D features, (B, T, 3, H, W) -> (B, T, F2); timestep t depends only on frame t."""
        if self.channel_2d is None:
            raise ChannelDisabledError('2D channel is disabled in {}'.format(self.config.name))
        return self.channel_2d(clip)

    def forward_3d(self, clip):
        """Spatiotemporal 3D features, (B, T, 3, H, W) -> (B, T', F3), T' = T / temporal stride."""
        if self.blocks_3d is None:
            raise ChannelDisabledError('3D channel is disabled in {}'.format(self.config.name))
        features = self.blocks_3d(clip.transpose(1, 2))
        return features.mean(dim=(-2, -1)).transpose(1, 2)

    def align_2d(self, features, nsteps):
        """Average-pool 2D features (B, T, F2) over non-overlapping windows of the 3D temporal stride to ``nsteps`` timesteps."""
        stride = self.config.temporal_stride
        features = F.avg_pool1d(features.transpose(1, 2), kernel_size=stride, stride=stride).transpose(1, 2)
        if features.shape[1] != nsteps:
            raise ValueError('2D features pooled to {:d} timesteps, but 3D features have {:d}'.format(features.shape[1], nsteps))
        return features

    def features(self, clip):
        """Per-timestep concatenated features (B, T', F3 + F2), fed to the LSTM."""
        features = []
        if self.blocks_3d is not None:
            features.append(self.forward_3d(clip))
        if self.channel_2d is not None:
            features_2d = self.forward_2d(clip)
            if features:
                features_2d = self.align_2d(features_2d, features[0].shape[1])
            features.append(features_2d)
        return torch.cat(features, dim=-1)

    def aggregate_temporal(self, features):
        """2-layer bidirectional LSTM over (B, T', F3 + F2) features, then mean over time -> h of shape (B, D)."""
        expected = self.config.channels_3d + self.config.channels_2d
        if features.ndim != 3 or features.shape[-1] != expected:
            raise ValueError('Expected features of shape (B, T\', {:d}), got {}'.format(expected, tuple(features.shape)))
        output, _ = self.lstm(features)
        return output.mean(dim=1)

    def forward(self, clip):
        """Encoding h of shape (B, D) of clips (B, T, 3, H, W)."""
        return self.aggregate_temporal(self.features(clip))

    def target_layer(self, channel='3d'):
        """Last convolutional block of the given channel, used for saliency."""
        if channel == '3d':
            if self.blocks_3d is None:
                raise ChannelDisabledError('3D channel is disabled in {}'.format(self.config.name))
            return self.blocks_3d[-1]
        if self.channel_2d is None:
            raise ChannelDisabledError('2D channel is disabled in {}'.format(self.config.name))
        return self.channel_2d.blocks[-1]


class FrameBaseline(nn.Module):
    """
    Frame-encoder baseline: a per-frame backbone with one of three aggregations.

    - 'middle': backbone features of the middle frame -> MLP hidden layer
    - 'average': MLP hidden layer on each frame, averaged over frames (a linear classifier on top averages per-frame predictions)
    - 'lstm': LSTM over per-frame backbone features, final hidden state

    Parameters
    ----------
    config : EncoderConfig
        Configuration, with architecture 'frame_middle', 'frame_average' or 'frame_lstm'.

    backbone : nn.Module, default=None
        Module mapping clips (B, T, 3, H, W) to per-frame features (B, T, C), with attribute ``out_channels``.
        Defaults to a 2D convolutional stack of width ``config.channels_2d``.
    """
    def __init__(self, config, backbone=None):
        super().__init__()
        if not config.architecture.startswith('frame_'):
            raise ConfigError('{} expects a frame architecture, got {}'.format(self.__class__.__name__, config.architecture))
        self.config = config
        self.aggregation = config.architecture[len('frame_'):]
        self.backbone = backbone if backbone is not None else FrameConvStack(config.widths(config.channels_2d))
        if self.aggregation == 'lstm':
            self.lstm = nn.LSTM(self.backbone.out_channels, config.baseline_hidden, batch_first=True)
        else:
            self.mlp = nn.Sequential(nn.Linear(self.backbone.out_channels, config.baseline_hidden), nn.ReLU())

    @property
    def embedding_dim(self):
        return self.config.embedding_dim

    def forward(self, clip):
        if self.aggregation == 'middle':
            middle = clip.shape[1] // 2
            return self.mlp(self.backbone(clip[:, middle:middle + 1])[:, 0])
        features = self.backbone(clip)
        if self.aggregation == 'average':
            return self.mlp(features).mean(dim=1)
        _, (hidden, _) = self.lstm(features)
        return hidden[-1]

    def target_layer(self, channel='2d'):
        if channel == '3d':
            raise ChannelDisabledError('Frame baseline {} has no 3D channel'.format(self.config.name))
        if not isinstance(self.backbone, FrameConvStack):
            raise ValueError('No known target layer in backbone {}'.format(self.backbone.__class__.__name__))
        return self.backbone.blocks[-1]


def build_encoder(config):
    """Return encoder module for :class:`EncoderConfig` ``config``."""
    if config.architecture == 'two_channel':
        return TwoChannelEncoder(config)
    return FrameBaseline(config)


def count_parameters(module):
    """Number of parameters of ``module``."""
    return sum(parameter.numel() for parameter in module.parameters())
