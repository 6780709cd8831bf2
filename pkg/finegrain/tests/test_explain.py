import os

import numpy as np
import pytest
import torch

from finegrain.corpus import BOS, EOS, PAD, Manifest
from finegrain.encoder import EncoderConfig
from finegrain.heads import JointModel
from finegrain.toyworld import ToySpec, generate_toy_corpus, generate_toy_video, trajectory_mask
from finegrain.videoio import preprocess_frames
from finegrain.explain import SaliencyVolume, grad_cam_class, grad_cam_token, saliency_mass_in_mask, render_saliency_overlay


base_dir = '_tests'


def tiny_model(channels_3d=4, architecture='two_channel', seed=0):
    torch.manual_seed(seed)
    encoder_config = EncoderConfig(channels_3d=channels_3d, channels_2d=4, blocks=2, lstm_hidden=8, architecture=architecture, baseline_hidden=16)
    decoder_config = {'vocab_size': 12, 'embedding_dim': 6, 'hidden': 10} if architecture == 'two_channel' else None
    return JointModel(encoder_config, num_classes=4, decoder_config=decoder_config).double()


def random_clip(seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((16, 3, 32, 32), generator=generator, dtype=torch.float64)


def test_class_saliency():

    model, clip = tiny_model(), random_clip()
    volume = grad_cam_class(model, clip, 2)
    assert volume.meta == {'objective': 'class', 'class_id': 2, 'target_layer': '3d', 'fallback': False}
    assert all(parameter.grad is None for parameter in model.parameters())
    assert volume.values.ndim == 3
    assert volume.values.min() >= 0.
    assert volume.values.max() in (0., 1.)

    # a constant logit shift leaves the saliency unchanged
    with torch.no_grad():
        model.classifier.projection.bias[2] += 10.
    shifted = grad_cam_class(model, clip, 2)
    assert np.allclose(shifted.values, volume.values, atol=1e-9, rtol=0.)

    # no gradient reaches the target layer
    with torch.no_grad():
        model.classifier.projection.weight.zero_()
    assert np.all(grad_cam_class(model, clip, 2).values == 0.)
    with pytest.raises(ValueError):
        grad_cam_class(model, clip, 4)
    with pytest.raises(ValueError):
        grad_cam_class(model, clip[None, None], 0)


def test_token_saliency():

    model, clip = tiny_model(seed=1), random_clip(seed=1)
    caption = [BOS, 5, 6, 7, EOS, PAD]
    volumes = [grad_cam_token(model, clip, caption, position) for position in [1, 2]]
    assert [volume.meta['position'] for volume in volumes] == [1, 2]
    assert all(parameter.grad is None for parameter in model.parameters())
    assert volumes[0].meta['token'] == 5
    assert volumes[0].shape == volumes[1].shape
    assert any(volume.values.max() > 0. for volume in volumes)
    assert not np.array_equal(volumes[0].values, volumes[1].values)
    for position in [0, 4]:
        with pytest.raises(ValueError):
            grad_cam_token(model, clip, caption, position)
    with pytest.raises(ValueError):
        grad_cam_token(tiny_model(architecture='frame_lstm'), clip, caption, 1)


def test_fallback():

    clip = random_clip()
    for model in [tiny_model(channels_3d=0), tiny_model(architecture='frame_average')]:
        volume = grad_cam_class(model, clip, 1)
        assert volume.meta['target_layer'] == '2d' and volume.meta['fallback']
        assert volume.shape[0] == clip.shape[0]


def test_overlay():

    clip = random_clip()
    zero = SaliencyVolume(np.zeros((4, 8, 8)))
    overlay, grid = render_saliency_overlay(clip, zero)
    assert np.allclose(overlay, clip.numpy().transpose(0, 2, 3, 1))
    assert grid.shape == (2 * 32, 4 * 32, 3)
    volume = SaliencyVolume(np.random.default_rng(0).uniform(-1., 2., size=(4, 8, 8)))
    assert volume.values.min() >= 0. and volume.values.max() == 1.
    assert volume.upsample((16, 32, 32)).shape == (16, 32, 32)
    fn = os.path.join(base_dir, 'explain', 'saliency.png')
    overlay, grid = render_saliency_overlay(clip, volume, fn=fn, nframes=4)
    assert os.path.isfile(fn)
    assert grid.shape == (32, 4 * 32, 3)
    assert 0. <= overlay.min() and overlay.max() <= 1.
    volume.write(os.path.join(base_dir, 'explain', 'saliency.npy'))
    assert np.allclose(np.load(os.path.join(base_dir, 'explain', 'saliency.npy')), volume.values)


def test_mass():

    values = np.zeros((2, 4, 4))
    values[:, :2] = 1.
    values[:, 2:] = 3.
    mask = np.zeros((2, 4, 4), dtype='?')
    mask[:, 2:] = True
    assert saliency_mass_in_mask(values, mask) == 0.75
    assert saliency_mass_in_mask(np.zeros((2, 4, 4)), mask) == 0.
    assert saliency_mass_in_mask(SaliencyVolume(values), mask) == pytest.approx(0.75, abs=0.05)


@pytest.mark.skipif(not os.environ.get('FINEGRAIN_SLOW'), reason='set FINEGRAIN_SLOW=1 to run toy-scale acceptance')
def test_saliency_in_trajectory():

    from finegrain.training import TrainConfig, train_model

    spec = ToySpec()
    manifest = Manifest.read(generate_toy_corpus(spec, 800, seed=42, out_dir=os.path.join(base_dir, 'explain_corpus')))
    config = TrainConfig(task='fine_cls', clip_len=48, resize=64, crop=64, channels_3d=32, channels_2d=32, blocks=3, lstm_hidden=64,
                         max_epochs=10, checkpoint_dir=os.path.join(base_dir, 'explain_fine'))
    checkpoint, _ = train_model(config, manifest)
    model = JointModel.load(checkpoint)
    square = [index for index in range(len(spec.shapes)) if spec.shapes[index][0] == 'square']
    masses, areas = [], []
    for seed in range(20):
        episode = generate_toy_video(spec, 0, [square[seed % len(square)]], seed=1000 + seed)
        clip = preprocess_frames(episode.frames, resize=64, crop=64)
        volume = grad_cam_class(model, clip, 0)
        mask = trajectory_mask(episode)
        masses.append(saliency_mass_in_mask(volume, mask))
        areas.append(mask.mean())
    assert np.mean(masses) >= 2. * np.mean(areas)


if __name__ == '__main__':

    test_class_saliency()
    test_token_saliency()
    test_fallback()
    test_overlay()
    test_mass()
