import pytest
import torch

from finegrain.config import ConfigError
from finegrain.encoder import (EncoderConfig, TwoChannelEncoder, FrameBaseline, ChannelDisabledError, build_encoder, count_parameters)


def tiny_config(**kwargs):
    return EncoderConfig(**{**dict(channels_3d=4, channels_2d=4, blocks=2, lstm_hidden=8), **kwargs})


def random_clip(batch=2, nframes=8, size=8, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((batch, nframes, 3, size, size), generator=generator, dtype=torch.float64)


def test_config():

    config = EncoderConfig.from_name('M(256-0)')
    assert config.channels_3d == 256 and config.channels_2d == 0
    assert config.name == 'M(256-0)'
    assert config.embedding_dim == 512
    assert config.temporal_stride == 4
    assert config.widths(256) == [16, 32, 64, 128, 256]
    assert EncoderConfig.from_dict(config.to_dict()) == config
    assert EncoderConfig(architecture='frame_lstm').embedding_dim == 1024
    with pytest.raises(ConfigError):
        EncoderConfig.from_name('M(0-0)')
    with pytest.raises(ConfigError):
        EncoderConfig.from_name('N(1-2)')
    with pytest.raises(ConfigError):
        EncoderConfig(lstm_layers=3)
    with pytest.raises(ConfigError):
        EncoderConfig(architecture='frame_middle', channels_2d=0)
    with pytest.raises(ValueError):
        EncoderConfig(unknown=1)


def test_shapes():

    torch.manual_seed(0)
    encoder = TwoChannelEncoder(tiny_config()).double().eval()
    clip = random_clip()
    assert encoder.forward_2d(clip).shape == (2, 8, 4)
    assert encoder.forward_3d(clip).shape == (2, 2, 4)
    assert encoder.features(clip).shape == (2, 2, 8)
    assert encoder(clip).shape == (2, 16)
    with pytest.raises(ValueError):
        encoder.aggregate_temporal(torch.zeros((2, 2, 5), dtype=torch.float64))

    encoder = TwoChannelEncoder(tiny_config(channels_3d=0)).double().eval()
    assert encoder.features(clip).shape == (2, 8, 4)
    with pytest.raises(ChannelDisabledError):
        encoder.forward_3d(clip)
    with pytest.raises(ChannelDisabledError):
        encoder.target_layer('3d')

    encoder = TwoChannelEncoder(tiny_config(channels_2d=0)).double().eval()
    assert encoder.features(clip).shape == (2, 2, 4)
    with pytest.raises(ChannelDisabledError):
        encoder.forward_2d(clip)


def test_channel_properties():

    torch.manual_seed(1)
    encoder = TwoChannelEncoder(tiny_config()).double().eval()
    clip = random_clip(batch=1, nframes=8)
    other = clip.clone()
    other[:, 4:] = random_clip(batch=1, nframes=4, seed=5)
    features, other_features = encoder.forward_2d(clip), encoder.forward_2d(other)
    assert torch.allclose(features[:, :4], other_features[:, :4], atol=1e-12)
    assert not torch.allclose(features[:, 4:], other_features[:, 4:])

    zeros = torch.zeros((1, 8, 3, 8, 8), dtype=torch.float64)
    features = encoder.forward_2d(zeros)
    assert torch.allclose(features, features[:, :1].expand_as(features), atol=1e-12)

    constant = random_clip(batch=1, nframes=1).expand(-1, 16, -1, -1, -1)
    features = encoder.forward_3d(constant)
    assert features.shape[1] == 4
    assert torch.allclose(features, features[:, :1].expand_as(features), atol=1e-12)

    clip = random_clip(batch=1, nframes=16, seed=3)
    forward = encoder.forward_3d(clip)
    backward = encoder.forward_3d(clip.flip(1))
    assert not torch.allclose(forward, backward.flip(1), atol=1e-6)


def test_eval_invariance():

    torch.manual_seed(2)
    encoder = TwoChannelEncoder(tiny_config()).double()
    clip = random_clip(batch=3)
    encoder.train()
    encoder(clip)  # update batch-normalization statistics
    encoder.eval()
    h = encoder(clip)
    assert torch.equal(h, encoder(clip))
    assert torch.allclose(encoder(clip[1:2]), h[1:2], atol=1e-12)


def test_baselines():

    torch.manual_seed(3)
    clip = random_clip(batch=2)
    for architecture in ['frame_middle', 'frame_average', 'frame_lstm']:
        config = tiny_config(architecture=architecture, baseline_hidden=6)
        encoder = build_encoder(config).double().eval()
        assert isinstance(encoder, FrameBaseline)
        assert encoder(clip).shape == (2, 6)
        assert count_parameters(encoder) > 0
        with pytest.raises(ChannelDisabledError):
            encoder.target_layer('3d')
        assert encoder.target_layer('2d') is encoder.backbone.blocks[-1]

    # the middle-frame baseline only sees the middle frame
    encoder = build_encoder(tiny_config(architecture='frame_middle', baseline_hidden=6)).double().eval()
    other = clip.clone()
    other[:, 0] = 0.
    assert torch.equal(encoder(clip), encoder(other))
    with pytest.raises(ConfigError):
        FrameBaseline(tiny_config())


if __name__ == '__main__':

    test_config()
    test_shapes()
    test_channel_properties()
    test_eval_invariance()
    test_baselines()
