"""
Gradient-weighted class activation saliency (Grad-CAM) for video models,
for classification scores and for individual caption tokens.
"""

import logging

import numpy as np
import torch
import torch.nn.functional as F

from .utils import BaseClass
from .io import get_filetype
from .corpus import TokenSequence
from .encoder import ChannelDisabledError


logger = logging.getLogger('explain')


class SaliencyVolume(BaseClass):
    """
    Non-negative saliency values of shape (T', h', w'), aligned with the target layer feature map,
    normalized to a maximum of 1 when nonzero.

    Attributes
    ----------
    values : array
        Saliency values.

    meta : dict
        Target layer ('3d' or '2d'), whether it is a fallback, objective.
    """
    def __init__(self, values, meta=None):
        values = np.maximum(np.asarray(values, dtype='f8'), 0.)
        vmax = values.max() if values.size else 0.
        if vmax > 0.:
            values = values / vmax
        self.values = values
        self.meta = dict(meta or {})

    @property
    def shape(self):
        return self.values.shape

    def upsample(self, shape=(48, 96, 96)):
        """Trilinear upsampling to ``shape`` (T, H, W)."""
        values = torch.as_tensor(self.values)[None, None]
        return F.interpolate(values, size=tuple(shape), mode='trilinear', align_corners=False)[0, 0].numpy()

    def write(self, fn):
        """Write raw values as a portable array file."""
        get_filetype('array', fn).write(self.values)

    def __repr__(self):
        return '{}(shape={}, meta={})'.format(self.__class__.__name__, self.shape, self.meta)


class GradCAM(BaseClass):
    """
    Hooks on ``target_layer`` recording its output activation; the gradient of an objective with respect to it
    is taken with :func:`torch.autograd.grad`, leaving the ``.grad`` of model parameters untouched.

    >>> with GradCAM(model, model.encoder.target_layer('3d')) as cam:
    ...     volume = cam(lambda: model.class_logits(model.encode(clip))[0, 3])
    """
    def __init__(self, model, target_layer, per_frame=False, meta=None):
        self.model, self.target_layer = model, target_layer
        self.per_frame = per_frame
        self.meta = dict(meta or {})
        self.activations = self.gradients = self._output = None
        self._handle = target_layer.register_forward_hook(self._forward_hook)

    def _forward_hook(self, module, inputs, output):
        self._output = output
        self.activations = output.detach()

    def close(self):
        self._handle.remove()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def __call__(self, objective):
        """
        Saliency of the scalar returned by callable ``objective`` (which runs the forward pass).

        Channel weights are the gradient averaged over the target feature map (time and space);
        saliency is the ReLU of the weighted sum of activations.
        """
        self.activations = self.gradients = self._output = None
        score = objective()
        if score.ndim != 0:
            raise ValueError('Objective must be a scalar, got shape {}'.format(tuple(score.shape)))
        if self.activations is None:
            raise ValueError('Target layer was not reached by the forward pass')
        if score.requires_grad and self._output.requires_grad:
            self.gradients = torch.autograd.grad(score, self._output, allow_unused=True)[0]
        self._output = None
        activations = self.activations
        gradients = self.gradients.detach() if self.gradients is not None else torch.zeros_like(activations)
        if self.per_frame:
            # (T, C, h, w) -> (1, C, T, h, w)
            activations, gradients = (tensor.transpose(0, 1)[None] for tensor in (activations, gradients))
        weights = gradients.mean(dim=(2, 3, 4), keepdim=True)
        cam = torch.relu((weights * activations).sum(dim=1))[0]
        return SaliencyVolume(cam.double().cpu().numpy(), meta=self.meta)


def _as_batch(clip):
    clip = torch.as_tensor(clip)
    if clip.ndim == 4:
        clip = clip[None]
    if clip.ndim != 5 or clip.shape[0] != 1:
        raise ValueError('Expected one clip of shape (T, 3, H, W), got {}'.format(tuple(clip.shape)))
    return clip.clone().requires_grad_(True)


def _grad_cam(model, clip, objective, meta=None):
    model.eval()
    encoder = model.encoder
    meta = dict(meta or {})
    try:
        layer, per_frame = encoder.target_layer('3d'), False
        meta.update(target_layer='3d', fallback=False)
    except (ChannelDisabledError, TypeError, AttributeError):
        layer, per_frame = encoder.target_layer('2d'), True
        meta.update(target_layer='2d', fallback=True)
        logger.info('No 3D channel, falling back to the last 2D block.')
    clip = _as_batch(clip).to(next(model.parameters()).dtype)
    with torch.enable_grad(), GradCAM(model, layer, per_frame=per_frame, meta=meta) as cam:
        return cam(lambda: objective(clip))


def grad_cam_class(model, clip, class_id):
    """
    Saliency of the pre-softmax score of class ``class_id``.

    Parameters
    ----------
    model : JointModel
        Model with a classifier.

    clip : torch.Tensor
        Clip of shape (T, 3, H, W).

    class_id : int
        Class.

    Returns
    -------
    volume : SaliencyVolume
        Saliency on the last 3D block feature map (T', h', w'), or on the last 2D block of each frame if there is no 3D channel.
    """
    if model.classifier is None:
        raise ValueError('Model has no classifier')
    if not 0 <= class_id < model.num_classes:
        raise ValueError('Class {} is outside [0, {:d})'.format(class_id, model.num_classes))
    return _grad_cam(model, clip, lambda clip: model.class_logits(model.encode(clip))[0, class_id], meta={'objective': 'class', 'class_id': int(class_id)})


def grad_cam_token(model, clip, caption, position):
    """
    Saliency of the teacher-forced log-probability of the caption token at ``position``.

    Parameters
    ----------
    model : JointModel
        Model with a caption decoder.

    clip : torch.Tensor
        Clip of shape (T, 3, H, W).

    caption : TokenSequence, list
        Encoded caption (BOS, content, EOS, PAD...).

    position : int
        Index in ``caption`` of a content token (strictly between BOS and EOS).

    Returns
    -------
    volume : SaliencyVolume
    """
    if model.decoder is None:
        raise ValueError('Model has no caption decoder')
    if not isinstance(caption, TokenSequence):
        caption = TokenSequence(caption)
    caption.check()
    if not 1 <= position < caption.eos_position:
        raise ValueError('Position {} is not a content token position, expected in [1, {:d})'.format(position, caption.eos_position))
    tokens = torch.tensor([caption.indices], dtype=torch.int64)

    def objective(clip):
        h = model.encode(clip)
        return model.decoder.token_log_probs(h, tokens)[0, position - 1]

    return _grad_cam(model, clip, objective, meta={'objective': 'token', 'position': int(position), 'token': caption.indices[position]})


def saliency_mass_in_mask(volume, mask):
    """Fraction of the (upsampled) saliency mass inside boolean ``mask`` of shape (T, H, W); 0 for a zero volume."""
    mask = np.asarray(mask, dtype='?')
    values = volume.upsample(mask.shape) if isinstance(volume, SaliencyVolume) else np.asarray(volume)
    values = np.maximum(values, 0.)
    total = values.sum()
    if total <= 0.:
        return 0.
    return float(values[mask].sum() / total)


def render_saliency_overlay(clip, volume, fn=None, alpha=0.5, nframes=8, ncols=4, cmap='jet'):
    """
    Blend saliency heat map onto clip frames and write a grid of ``nframes`` evenly spaced frames.

    Each pixel is (1 - alpha s) frame + alpha s heat, with s the trilinearly upsampled saliency in [0, 1],
    so that a zero volume leaves frames unchanged.

    Parameters
    ----------
    clip : torch.Tensor, array
        Clip of shape (T, 3, H, W), values in [0, 1].

    volume : SaliencyVolume
        Saliency.

    fn : str, Path, default=None
        If provided, write grid image there.

    Returns
    -------
    overlay : array
        Blended frames (T, H, W, 3), values in [0, 1].

    grid : array
        Image grid (rows x H, ncols x W, 3).
    """
    from matplotlib import colormaps
    frames = torch.as_tensor(clip).detach().double().cpu().numpy()
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError('Expected clip of shape (T, 3, H, W), got {}'.format(frames.shape))
    frames = frames.transpose(0, 2, 3, 1)
    saliency = np.clip(volume.upsample(frames.shape[:3]), 0., 1.)
    heat = colormaps[cmap](saliency)[..., :3]
    weight = alpha * saliency[..., None]
    overlay = (1. - weight) * frames + weight * heat
    indices = np.linspace(0, len(frames) - 1, min(nframes, len(frames))).round().astype(int)
    nrows = -(-len(indices) // ncols)
    height, width = frames.shape[1:3]
    grid = np.ones((nrows * height, ncols * width, 3), dtype='f8')
    for icell, index in enumerate(indices):
        row, col = divmod(icell, ncols)
        grid[row * height:(row + 1) * height, col * width:(col + 1) * width] = overlay[index]
    if fn is not None:
        get_filetype('image', fn).write(grid)
    return overlay, grid
