"""
Stored frame sequences to fixed-length, cropped, normalized clips.

Frames are expected to be extracted at 12 fps; clips are tensors of shape (T, 3, crop, crop) with values in [0, 1].
"""

import logging

import numpy as np

from .io import get_filetype


logger = logging.getLogger('videoio')


def _check_mode(mode):
    if mode not in ('train', 'eval'):
        raise ValueError('Unknown mode {}; choose from ["train", "eval"]'.format(mode))


def sample_clip_window(frames, target=48, mode='eval', seed=None):
    """
    Select ``target`` consecutive frames.

    If there are at least ``target`` frames, train mode picks a uniformly random window (seeded with ``seed``),
    eval mode picks the centred window, starting at frame ``(len(frames) - target) // 2``.
    Else, with deficit d, ceil(d / 2) copies of the first frame are prepended
    and floor(d / 2) copies of the last frame are appended.

    Parameters
    ----------
    frames : array, list
        Frames, first dimension is time.

    target : int, default=48
        Number of frames to return.

    mode : str, default='eval'
        'train' or 'eval'.

    seed : int, default=None
        Seed for train mode window.

    Returns
    -------
    frames : array
        ``target`` frames.
    """
    _check_mode(mode)
    frames = np.asarray(frames)
    nframes = len(frames)
    if nframes == 0:
        raise ValueError('Cannot sample a clip from zero frames')
    if nframes >= target:
        if mode == 'train':
            start = int(np.random.default_rng(seed).integers(0, nframes - target + 1))
        else:
            start = (nframes - target) // 2
        return frames[start:start + target]
    deficit = target - nframes
    front, back = (deficit + 1) // 2, deficit // 2
    return np.concatenate([np.repeat(frames[:1], front, axis=0), frames, np.repeat(frames[-1:], back, axis=0)], axis=0)


def crop_offset(mode='eval', seed=None, resize=128, crop=96):
    """
    Crop window offset (top, left): uniform in [0, resize - crop]^2 in train mode (seeded with ``seed``),
    centred ((resize - crop) // 2 in both directions) in eval mode.
    """
    _check_mode(mode)
    if crop > resize:
        raise ValueError('Crop size {:d} larger than resized frame {:d}'.format(crop, resize))
    if mode == 'train':
        top, left = np.random.default_rng(seed).integers(0, resize - crop + 1, size=2)
        return int(top), int(left)
    offset = (resize - crop) // 2
    return offset, offset


def preprocess_frames(frames, mode='eval', seed=None, resize=128, crop=96, dtype=None):
    """
    Resize each frame bilinearly to ``resize`` x ``resize``, apply one crop window of ``crop`` x ``crop``
    (see :func:`crop_offset`) to all frames, and scale values to [0, 1].

    Parameters
    ----------
    frames : array
        uint8 array of shape (T, h, w, 3).

    mode : str, default='eval'
        'train' or 'eval'.

    seed : int, default=None
        Seed for train mode crop.

    resize : int, default=128
        Resized frame size.

    crop : int, default=96
        Crop size.

    dtype : torch.dtype, default=None
        Output type, defaults to torch default type.

    Returns
    -------
    clip : torch.Tensor
        Tensor of shape (T, 3, crop, crop).
    """
    import torch
    import torch.nn.functional as F
    dtype = dtype or torch.get_default_dtype()
    frames = torch.as_tensor(np.ascontiguousarray(frames)).to(dtype)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError('Expected frames of shape (T, h, w, 3), got {}'.format(tuple(frames.shape)))
    frames = frames.permute(0, 3, 1, 2)
    if tuple(frames.shape[-2:]) != (resize, resize):
        frames = F.interpolate(frames, size=(resize, resize), mode='bilinear', align_corners=False)
    top, left = crop_offset(mode=mode, seed=seed, resize=resize, crop=crop)
    frames = frames[..., top:top + crop, left:left + crop] / 255.
    return frames.clamp(0., 1.).contiguous()


def load_clip(path, target=48, mode='eval', seed=None, resize=128, crop=96, dtype=None):
    """
    Read frame archive ``path`` (directory of numbered images) and return the preprocessed clip.
    In train mode, window and crop are drawn from ``seed``.
    """
    frames = get_filetype('frames', path).read()
    window_seed = crop_seed = seed
    if seed is not None:
        window_seed, crop_seed = np.random.SeedSequence(seed).generate_state(2).tolist()
    frames = sample_clip_window(frames, target=target, mode=mode, seed=window_seed)
    return preprocess_frames(frames, mode=mode, seed=crop_seed, resize=resize, crop=crop, dtype=dtype)
