import os

import numpy as np
import pytest
import torch

from finegrain.io import get_filetype
from finegrain.videoio import sample_clip_window, crop_offset, preprocess_frames, load_clip


base_dir = '_tests'


def check_window(nframes, window, target=48, mode='eval'):
    assert len(window) == target
    if nframes >= target:
        assert np.all(np.diff(window) == 1)
        if mode == 'eval':
            assert window[0] == (nframes - target) // 2
    else:
        deficit = target - nframes
        front, back = (deficit + 1) // 2, deficit // 2
        assert np.all(window[:front + 1] == 0)
        assert np.all(window[front:front + nframes] == np.arange(nframes))
        assert np.all(window[target - back - 1:] == nframes - 1)


def test_window():

    for nframes in [1, 10, 48, 100]:
        check_window(nframes, sample_clip_window(np.arange(nframes)))
    assert list(sample_clip_window(np.arange(1), target=4)) == [0, 0, 0, 0]
    assert list(sample_clip_window(np.arange(2), target=5)) == [0, 0, 0, 1, 1]

    rng = np.random.default_rng(42)
    for nframes in rng.integers(1, 200, size=1000):
        mode = ['train', 'eval'][nframes % 2]
        window = sample_clip_window(np.arange(nframes), mode=mode, seed=int(nframes))
        check_window(nframes, window, mode=mode)

    frames = np.arange(100)
    assert np.array_equal(sample_clip_window(frames, mode='train', seed=3), sample_clip_window(frames, mode='train', seed=3))
    with pytest.raises(ValueError):
        sample_clip_window([])
    with pytest.raises(ValueError):
        sample_clip_window(frames, mode='test')


def test_crop():

    assert crop_offset('eval') == (16, 16)
    for seed in range(20):
        top, left = crop_offset('train', seed=seed)
        assert 0 <= top <= 32 and 0 <= left <= 32
    with pytest.raises(ValueError):
        crop_offset('eval', resize=64, crop=96)


def test_preprocess():

    rng = np.random.default_rng(0)
    frames = rng.integers(0, 256, size=(6, 40, 50, 3), dtype='u1')
    clip = preprocess_frames(frames, mode='eval', resize=32, crop=24)
    assert clip.shape == (6, 3, 24, 24)
    assert clip.min() >= 0. and clip.max() <= 1.
    assert torch.equal(clip, preprocess_frames(frames, mode='eval', resize=32, crop=24))

    frames = rng.integers(0, 256, size=(2, 32, 32, 3), dtype='u1')
    clip = preprocess_frames(frames, mode='eval', resize=32, crop=24, dtype=torch.float64)
    expected = torch.as_tensor(frames[:, 4:28, 4:28].transpose(0, 3, 1, 2) / 255.)
    assert torch.allclose(clip, expected, atol=1e-12)

    # one crop window shared by all frames
    frames = np.repeat(rng.integers(0, 256, size=(1, 32, 32, 3), dtype='u1'), 5, axis=0)
    clip = preprocess_frames(frames, mode='train', seed=7, resize=32, crop=16)
    assert all(torch.equal(clip[0], frame) for frame in clip)
    with pytest.raises(ValueError):
        preprocess_frames(np.zeros((2, 8, 8)))


def test_load_clip():

    rng = np.random.default_rng(1)
    path = os.path.join(base_dir, 'videoio', 'frames')
    get_filetype('frames', path).write(rng.integers(0, 256, size=(20, 16, 16, 3), dtype='u1'))
    clip = load_clip(path, target=8, mode='train', seed=5, resize=16, crop=12)
    assert clip.shape == (8, 3, 12, 12)
    assert torch.equal(clip, load_clip(path, target=8, mode='train', seed=5, resize=16, crop=12))
    assert torch.equal(load_clip(path, target=30, resize=16, crop=12), load_clip(path, target=30, resize=16, crop=12))


if __name__ == '__main__':

    test_window()
    test_crop()
    test_preprocess()
    test_load_clip()
