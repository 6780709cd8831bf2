"""
Synthetic videos of shapes following motion programs, annotated with templated captions at all granularities.
To implement a new motion program, just subclass :class:`BaseMotion`.
"""

import os
import logging

import numpy as np

from . import utils
from .utils import BaseClass
from .io import get_filetype
from .corpus import AnnotationRecord, LabelHierarchy, Manifest, count_slots, write_annotations


logger = logging.getLogger('toyworld')


COLORS = {'red': (220, 40, 40), 'green': (40, 190, 60), 'blue': (40, 70, 220), 'yellow': (235, 215, 40)}
TOOL_COLOR = (20, 20, 20)


def _linear(start, stop, nframes):
    return np.linspace(start, stop, nframes)


def _ramp(nframes, tstart, tstop):
    """Piecewise-linear 0 -> 1 ramp between fractions ``tstart`` and ``tstop`` of the clip."""
    t = np.arange(nframes) / max(nframes - 1, 1)
    return np.clip((t - tstart) / (tstop - tstart), 0., 1.)


class RegisteredMotion(type(BaseClass)):

    """Metaclass registering :class:`BaseMotion`-derived classes."""

    _registry = {}

    def __new__(meta, name, bases, class_dict):
        cls = super().__new__(meta, name, bases, class_dict)
        meta._registry[cls.name] = cls
        return cls


class BaseMotion(BaseClass, metaclass=RegisteredMotion):
    """
    Base class for motion programs.

    A motion program returns the centre trajectories of the ``arity`` named objects,
    and the trajectory of the tool tip (``None`` if the program uses no tool).
    Coordinates are (x, y) in pixels, y pointing down.
    """
    name = 'base'
    arity = 1

    def __call__(self, rng, nframes, frame_size, half_size):
        raise NotImplementedError('Implement __call__ method in {}'.format(self.__class__.__name__))

    @staticmethod
    def _margin(half_size):
        return half_size + 1


def get_motion(motion):
    """Return :class:`BaseMotion` instance given its name."""
    if isinstance(motion, BaseMotion):
        return motion
    try:
        return BaseMotion._registry[motion]()
    except KeyError as exc:
        raise ValueError('Unknown motion {}; choose from {}'.format(motion, list(BaseMotion._registry))) from exc


class LeftToRight(BaseMotion):

    name = 'left_to_right'

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        travel = width - 1 - 2 * margin
        if travel < nframes - 1:
            raise ValueError('Frame width {:d} too small to move by at least 1 pixel per frame over {:d} frames'.format(width, nframes))
        speed = rng.uniform(1., max(travel / max(nframes - 1, 1), 1.))
        x0 = rng.uniform(margin, width - 1 - margin - speed * (nframes - 1))
        y = rng.uniform(margin, height - 1 - margin)
        x = x0 + speed * np.arange(nframes)
        return np.stack([x, np.full(nframes, y)], axis=-1)[None, ...], None


class RightToLeft(LeftToRight):

    name = 'right_to_left'

    def __call__(self, rng, nframes, frame_size, half_size):
        objects, tool = super().__call__(rng, nframes, frame_size, half_size)
        objects[..., 0] = frame_size[1] - 1 - objects[..., 0]
        return objects, tool


class LiftUp(BaseMotion):

    name = 'lift_up'
    drop = False

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        x = rng.uniform(margin, width - 1 - margin)
        y0 = rng.uniform(max(height / 2., margin), height - 1 - margin)
        lift = rng.uniform(0.5, 0.9) * (y0 - margin)
        y = y0 - lift * _ramp(nframes, 0., 0.6)
        if self.drop:
            y += lift * _ramp(nframes, 0.7, 0.8)
        return np.stack([np.full(nframes, x), y], axis=-1)[None, ...], None


class LiftDrop(LiftUp):

    name = 'lift_drop'
    drop = True


class PretendMove(BaseMotion):

    """The object jitters horizontally but comes back to its start position."""
    name = 'pretend_move'
    axis = 0

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        amplitude = rng.uniform(2., 4.)
        periods = rng.integers(1, 3)
        jitter = amplitude * np.sin(2. * np.pi * periods * np.arange(nframes) / max(nframes - 1, 1))
        jitter[-1] = 0.
        x = rng.uniform(margin + amplitude, width - 1 - margin - amplitude)
        y = rng.uniform(margin + amplitude, height - 1 - margin - amplitude)
        centres = np.repeat(np.array([[x, y]]), nframes, axis=0)
        if self.axis == 0:
            centres[:, 0] += jitter
        else:
            centres[:, 1] -= np.abs(jitter)
        return centres[None, ...], None


class PretendLift(PretendMove):

    """The object is shaken upwards but never leaves the ground."""
    name = 'pretend_lift'
    axis = 1


class MoveCloser(BaseMotion):

    """The first object moves towards the static second object, stopping right before contact."""
    name = 'move_closer'
    arity = 2
    reverse = False

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        gap = 2 * half_size + 3
        travel = rng.uniform(0.3, 0.5) * (width - 1 - 2 * margin - gap)
        x1 = rng.uniform(margin + gap + travel, width - 1 - margin)
        x0 = _linear(x1 - gap - travel, x1 - gap, nframes)
        y = rng.uniform(margin, height - 1 - margin)
        objects = np.zeros((2, nframes, 2), dtype='f8')
        objects[0, :, 0], objects[1, :, 0], objects[..., 1] = x0, x1, y
        if rng.integers(0, 2):
            objects[..., 0] = width - 1 - objects[..., 0]
        if self.reverse:
            objects = objects[:, ::-1].copy()
        return objects, None


class MoveAway(MoveCloser):

    name = 'move_away'
    reverse = True


class BaseKitchenMotion(BaseMotion):
    """
    Tool-object interactions: the tool tip approaches the top of the target object,
    then the interaction of :meth:`interact` is played.
    """
    name = 'base_kitchen'
    hover = 0

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        reach = 3 * half_size
        target = np.array([rng.uniform(margin, width - 1 - margin), rng.uniform(max(height / 2., margin + reach), height - 1 - margin)])
        start = np.array([rng.uniform(margin, width - 1 - margin), margin + reach])
        contact = target - [0., half_size + 1 + self.hover]
        approach = _ramp(nframes, 0., 0.4)[:, None]
        tool = start + approach * (contact - start)
        objects = np.repeat(target[None, :], nframes, axis=0)[None, ...]
        tool, objects = self.interact(rng, tool, objects, nframes, frame_size, half_size)
        return objects, tool

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        raise NotImplementedError('Implement interact method in {}'.format(self.__class__.__name__))


class UsePick(BaseKitchenMotion):

    """Tool and object lift together."""
    name = 'use_pick'

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        lift = rng.uniform(0.4, 0.8) * (objects[0, 0, 1] - 4 * half_size - 1)
        up = lift * _ramp(nframes, 0.5, 0.9)
        tool[:, 1] -= up
        objects[0, :, 1] -= up
        return tool, objects


class PretendPick(UsePick):

    """Tool stops above the object and lifts alone."""
    name = 'pretend_pick'
    hover = 4

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        tool, lifted = super().interact(rng, tool, objects.copy(), nframes, frame_size, half_size)
        return tool, objects


class FailPick(UsePick):

    """Object lifts with the tool, then falls back."""
    name = 'fail_pick'

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        ground = objects[0, :, 1].copy()
        tool, objects = super().interact(rng, tool, objects, nframes, frame_size, half_size)
        fall = _ramp(nframes, 0.7, 0.75)
        objects[0, :, 1] = objects[0, :, 1] * (1. - fall) + ground * fall
        return tool, objects


class UseCut(BaseKitchenMotion):

    """Tool saws through the object."""
    name = 'use_cut'
    depth = 1.

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        active = _ramp(nframes, 0.4, 0.45)
        periods = rng.integers(2, 4)
        t = np.arange(nframes) / max(nframes - 1, 1)
        saw = 0.5 * (1. - np.cos(2. * np.pi * periods * np.clip(t - 0.45, 0., None) / 0.55))
        tool[:, 1] += self.depth * half_size * active * saw
        return tool, objects


class PretendCut(UseCut):

    """Tool saws in the air above the object."""
    name = 'pretend_cut'
    hover = 6
    depth = 0.5


class FailCut(UseCut):

    """Tool pushes the object sideways instead of cutting it."""
    name = 'fail_cut'

    def interact(self, rng, tool, objects, nframes, frame_size, half_size):
        width = frame_size[1]
        margin = self._margin(half_size)
        x = objects[0, 0, 0]
        shift = (width - 1 - margin - x) if x < width / 2. else (margin - x)
        push = rng.uniform(0.5, 0.9) * shift * _ramp(nframes, 0.45, 0.9)
        tool[:, 0] += push
        objects[0, :, 0] += push
        return tool, objects


class OtherThings(BaseMotion):

    """The tool moves along a random straight path, without interacting with anything."""
    name = 'other_things'
    arity = 0

    def __call__(self, rng, nframes, frame_size, half_size):
        height, width = frame_size
        margin = self._margin(half_size)
        start = [rng.uniform(margin, width - 1 - margin), rng.uniform(margin + 3 * half_size, height - 1 - margin)]
        stop = [rng.uniform(margin, width - 1 - margin), rng.uniform(margin + 3 * half_size, height - 1 - margin)]
        tool = np.stack([_linear(start[0], stop[0], nframes), _linear(start[1], stop[1], nframes)], axis=-1)
        return np.zeros((0, nframes, 2), dtype='f8'), tool


class ToyAction(BaseClass):
    """
    Action of the toy world: a motion program with its fine category, group and caption template.

    Parameters
    ----------
    category_id : int
        Fine-grained category.

    group_id : int
        Coarse-grained group.

    template : str
        Caption template, with one '[something]' slot per named object.

    motion : str, BaseMotion
        Motion program.

    tool : str, default=None
        Tool glyph ('fork', 'spoon', 'knife', 'tongs'), if the motion uses a tool.
    """
    def __init__(self, category_id, group_id, template, motion, tool=None):
        self.category_id = int(category_id)
        self.group_id = int(group_id)
        self.template = str(template)
        self.motion = get_motion(motion)
        self.tool = tool
        if count_slots(self.template) != self.arity:
            raise ValueError('Template "{}" has {:d} slots, but motion {} moves {:d} objects'.format(self.template, count_slots(self.template), self.motion.name, self.arity))

    @property
    def arity(self):
        return self.motion.arity

    def to_dict(self):
        return {'category_id': self.category_id, 'group_id': self.group_id, 'template': self.template, 'motion': self.motion.name, 'tool': self.tool}


_default_actions = [(0, 0, 'Moving [something] from left to right', 'left_to_right'),
                    (1, 0, 'Moving [something] from right to left', 'right_to_left'),
                    (2, 1, 'Lifting [something] up then letting it drop', 'lift_drop'),
                    (3, 1, 'Lifting [something] up', 'lift_up'),
                    (4, 2, 'Pretending to move [something]', 'pretend_move'),
                    (5, 2, 'Pretending to lift [something]', 'pretend_lift'),
                    (6, 3, 'Moving [something] closer to [something]', 'move_closer'),
                    (7, 3, 'Moving [something] away from [something]', 'move_away')]

_default_shapes = [(kind, color) for color in COLORS for kind in ['square', 'circle', 'triangle', 'diamond']]

KITCHENWARE_TOOLS = ['fork', 'spoon', 'knife', 'tongs']


class ToySpec(BaseClass):
    """
    Description of a toy world.

    Parameters
    ----------
    frame_size : tuple, default=(64, 64)
        Frame (height, width), in pixels.

    fps : int, default=12
        Frames per second.

    duration_s : float, default=4.
        Video duration, in seconds.

    shapes : list, default=None
        List of (shape kind, color) defining the object vocabulary.
        Defaults to 4 kinds (square, circle, triangle, diamond) x 4 colors (red, green, blue, yellow).

    actions : list, default=None
        List of :class:`ToyAction`, ordered by category.
        Defaults to 8 fine categories in 4 groups.

    half_size : int, default=4
        Object half size, in pixels.

    distractors : int, default=0
        Number of static objects not referred to in captions.

    min_group_size : int, default=2
        Minimum number of fine categories per group.

    name : str, default='toy'
        Name, used as video identifier prefix.
    """
    def __init__(self, frame_size=(64, 64), fps=12, duration_s=4., shapes=None, actions=None, half_size=4, distractors=0, min_group_size=2, name='toy'):
        self.frame_size = tuple(int(size) for size in frame_size)
        self.fps = int(fps)
        self.duration_s = float(duration_s)
        self.shapes = [tuple(shape) for shape in (shapes if shapes is not None else _default_shapes)]
        if actions is None:
            actions = [ToyAction(*action) for action in _default_actions]
        self.actions = [action if isinstance(action, ToyAction) else ToyAction(**action) for action in actions]
        self.half_size = int(half_size)
        self.distractors = int(distractors)
        self.min_group_size = int(min_group_size)
        self.name = str(name)
        self.check()

    @classmethod
    def kitchenware(cls, **kwargs):
        """
        Few-shot transfer world: use / pretend to use / try but fail with fork, spoon, knife, tongs,
        plus 'doing other things', i.e. 13 fine categories in 5 groups (one per tool, one for other things),
        with static distractor objects.
        """
        actions = []
        for itool, tool in enumerate(KITCHENWARE_TOOLS):
            if tool == 'knife':
                templates = [('Using a knife to cut [something]', 'use_cut'),
                             ('Pretending to use a knife to cut [something]', 'pretend_cut'),
                             ('Trying but failing to cut [something] with a knife', 'fail_cut')]
            else:
                name = tool if tool == 'tongs' else 'a {}'.format(tool)
                templates = [('Using {} to pick [something] up'.format(name), 'use_pick'),
                             ('Pretending to use {} to pick [something] up'.format(name), 'pretend_pick'),
                             ('Trying but failing to pick [something] up with {}'.format(name), 'fail_pick')]
            for template, motion in templates:
                actions.append(ToyAction(len(actions), itool, template, motion, tool=tool))
        actions.append(ToyAction(len(actions), len(KITCHENWARE_TOOLS), 'Doing other things', 'other_things', tool=KITCHENWARE_TOOLS[0]))
        kwargs = {**dict(actions=actions, distractors=2, min_group_size=1, name='kitchen'), **kwargs}
        return cls(**kwargs)

    def check(self):
        """Check toy world invariants."""
        if not self.shapes:
            raise ValueError('At least one shape must be provided')
        for kind, color in self.shapes:
            if kind not in _shape_painters:
                raise ValueError('Unknown shape {}; choose from {}'.format(kind, list(_shape_painters)))
            if color not in COLORS:
                raise ValueError('Unknown color {}; choose from {}'.format(color, list(COLORS)))
        categories = [action.category_id for action in self.actions]
        if categories != list(range(len(self.actions))):
            raise ValueError('Actions must be ordered by category id 0, ..., K - 1, found {}'.format(categories))
        for action in self.actions:
            if action.arity > len(self.shapes):
                raise ValueError('Action {} needs {:d} distinct objects, only {:d} shapes'.format(action.template, action.arity, len(self.shapes)))
            if action.tool is not None and action.tool not in _tool_painters:
                raise ValueError('Unknown tool {}; choose from {}'.format(action.tool, list(_tool_painters)))
        hierarchy = self.hierarchy
        if hierarchy.group_count < 2:
            raise ValueError('Toy world must have at least 2 groups')
        for group in range(hierarchy.group_count):
            size = len(hierarchy.members(group))
            if size < self.min_group_size:
                raise ValueError('Group {:d} has {:d} categories, expected at least {:d}'.format(group, size, self.min_group_size))

    @property
    def nframes(self):
        """Number of frames per video."""
        return int(round(self.fps * self.duration_s))

    @property
    def hierarchy(self):
        return LabelHierarchy([action.group_id for action in self.actions])

    @property
    def templates(self):
        """Dictionary category: template."""
        return {action.category_id: action.template for action in self.actions}

    def object_name(self, object_id):
        """Object description, e.g. 'a red square'."""
        kind, color = self.shapes[object_id]
        return 'a {} {}'.format(color, kind)

    def to_dict(self):
        return {'frame_size': list(self.frame_size), 'fps': self.fps, 'duration_s': self.duration_s, 'shapes': [list(shape) for shape in self.shapes],
                'actions': [action.to_dict() for action in self.actions], 'half_size': self.half_size, 'distractors': self.distractors,
                'min_group_size': self.min_group_size, 'name': self.name}

    @classmethod
    def from_dict(cls, state):
        state = dict(state)
        state['actions'] = [ToyAction(**action) for action in state['actions']]
        return cls(**state)

    def hash(self):
        """md5 hex digest of the toy world description."""
        return utils.hash_json(self.to_dict())

    def __repr__(self):
        return '{}(name={}, categories={:d}, groups={:d}, frame_size={}, nframes={:d})'.format(self.__class__.__name__, self.name, len(self.actions), self.hierarchy.group_count, self.frame_size, self.nframes)


def _round(value):
    # floor(x + 0.5) keeps strictly increasing positions strictly increasing
    return int(np.floor(value + 0.5))


def _paint_square(draw, x, y, s, color):
    draw.rectangle([x - s, y - s, x + s, y + s], fill=color)


def _paint_circle(draw, x, y, s, color):
    draw.ellipse([x - s, y - s, x + s, y + s], fill=color)


def _paint_triangle(draw, x, y, s, color):
    draw.polygon([(x, y - s), (x - s, y + s), (x + s, y + s)], fill=color)


def _paint_diamond(draw, x, y, s, color):
    draw.polygon([(x, y - s), (x + s, y), (x, y + s), (x - s, y)], fill=color)


_shape_painters = {'square': _paint_square, 'circle': _paint_circle, 'triangle': _paint_triangle, 'diamond': _paint_diamond}


# Tools are drawn with their tip at (x, y), handle going up to y - 3s.
def _paint_fork(draw, x, y, s, color):
    for dx in (-2, 0, 2):
        draw.line([(x + dx, y), (x + dx, y - s)], fill=color)
    draw.line([(x - 2, y - s), (x + 2, y - s)], fill=color)
    draw.line([(x, y - s), (x, y - 3 * s)], fill=color, width=2)


def _paint_spoon(draw, x, y, s, color):
    draw.ellipse([x - 2, y - s, x + 2, y], fill=color)
    draw.line([(x, y - s), (x, y - 3 * s)], fill=color, width=2)


def _paint_knife(draw, x, y, s, color):
    draw.rectangle([x - 1, y - 2 * s, x + 1, y], fill=color)
    draw.rectangle([x - 2, y - 3 * s, x + 2, y - 2 * s], fill=color)


def _paint_tongs(draw, x, y, s, color):
    draw.line([(x - 3, y), (x, y - 3 * s)], fill=color, width=2)
    draw.line([(x + 3, y), (x, y - 3 * s)], fill=color, width=2)


_tool_painters = {'fork': _paint_fork, 'spoon': _paint_spoon, 'knife': _paint_knife, 'tongs': _paint_tongs}


class ToyEpisode(BaseClass):
    """
    Rendered toy video.

    Attributes
    ----------
    frames : array
        uint8 array of shape (T, H, W, 3).

    annotation : AnnotationRecord
        Labels and captions.

    trajectory : array
        Centres (x, y) of the moving actors (named objects, then tool tip if any), of shape (nactors, T, 2).

    extents : list
        For each actor, box (left, up, right, down) around its centre covering its glyph.

    seed : int
        Rendering seed.
    """
    def __init__(self, frames, annotation, trajectory, extents, seed=None):
        self.frames = frames
        self.annotation = annotation
        self.trajectory = trajectory
        self.extents = list(extents)
        self.seed = seed

    @property
    def nframes(self):
        return len(self.frames)


def generate_toy_video(spec, action_id, object_ids, seed, video_id=None):
    """
    Render one toy video.

    Parameters
    ----------
    spec : ToySpec
        Toy world.

    action_id : int
        Fine category, i.e. index in ``spec.actions``.

    object_ids : list
        Distinct indices in ``spec.shapes``, one per slot of the action template.

    seed : int
        Seed for start position, speed and background.

    video_id : str, default=None
        Video identifier; defaults to '{spec.name}_{seed}'.

    Returns
    -------
    episode : ToyEpisode
    """
    from PIL import Image, ImageDraw

    if not 0 <= action_id < len(spec.actions):
        raise ValueError('Action id {} is outside [0, {:d})'.format(action_id, len(spec.actions)))
    action = spec.actions[action_id]
    object_ids = [int(object_id) for object_id in object_ids]
    if len(object_ids) != action.arity:
        raise ValueError('Action {} needs {:d} objects, got {}'.format(action.template, action.arity, object_ids))
    if len(set(object_ids)) != len(object_ids) or any(not 0 <= object_id < len(spec.shapes) for object_id in object_ids):
        raise ValueError('Object ids must be distinct in [0, {:d}), got {}'.format(len(spec.shapes), object_ids))
    nframes = spec.nframes
    if nframes < 2:
        raise ValueError('Toy videos need at least 2 frames, got {:d}'.format(nframes))
    height, width = spec.frame_size
    s = spec.half_size
    rng = np.random.default_rng(seed)
    grey = int(rng.integers(90, 161))
    objects, tool = action.motion(rng, nframes, spec.frame_size, s)
    margin = s + 1
    remaining = [index for index in range(len(spec.shapes)) if index not in object_ids]
    distractors = []
    for index in rng.permutation(remaining)[:spec.distractors]:
        distractors.append((int(index), rng.uniform(margin, width - 1 - margin), rng.uniform(margin, height - 1 - margin)))

    frames = np.empty((nframes, height, width, 3), dtype='u1')
    for iframe in range(nframes):
        image = Image.new('RGB', (width, height), (grey,) * 3)
        draw = ImageDraw.Draw(image)
        for index, x, y in distractors:
            kind, color = spec.shapes[index]
            _shape_painters[kind](draw, _round(x), _round(y), s, COLORS[color])
        for object_id, centres in zip(object_ids, objects):
            kind, color = spec.shapes[object_id]
            _shape_painters[kind](draw, _round(centres[iframe, 0]), _round(centres[iframe, 1]), s, COLORS[color])
        if tool is not None:
            _tool_painters[action.tool or 'fork'](draw, _round(tool[iframe, 0]), _round(tool[iframe, 1]), s, TOOL_COLOR)
        frames[iframe] = np.asarray(image, dtype='u1')

    trajectory, extents = list(objects), [(s, s, s, s)] * len(objects)
    if tool is not None:
        trajectory.append(tool)
        extents.append((3, 3 * s, 3, 0))
    trajectory = np.floor(np.array(trajectory, dtype='f8').reshape(-1, nframes, 2) + 0.5)
    if video_id is None:
        video_id = '{}_{}'.format(spec.name, seed)
    annotation = AnnotationRecord(video_id=video_id, action_group_id=action.group_id, action_category_id=action.category_id,
                                  template=action.template, placeholders=[spec.object_name(object_id) for object_id in object_ids])
    return ToyEpisode(frames, annotation, trajectory, extents, seed=seed)


def trajectory_mask(episode, dilation=2):
    """
    Ground-truth mask of the pixels covered by the moving actors.

    Parameters
    ----------
    episode : ToyEpisode
        Rendered episode.

    dilation : int, default=2
        Margin added around each actor glyph, in pixels.

    Returns
    -------
    mask : array
        Boolean array of shape (T, H, W).
    """
    nframes, height, width = episode.frames.shape[:3]
    mask = np.zeros((nframes, height, width), dtype='?')
    for centres, (left, up, right, down) in zip(episode.trajectory, episode.extents):
        for iframe, (x, y) in enumerate(centres.astype('i8')):
            y0, y1 = max(y - up - dilation, 0), min(y + down + dilation + 1, height)
            x0, x1 = max(x - left - dilation, 0), min(x + right + dilation + 1, width)
            mask[iframe, y0:y1, x0:x1] = True
    return mask


def stratified_splits(labels, rng, fractions=(0.7, 0.15, 0.15)):
    """
    Split indices per label into train / val / test with the given fractions.

    Returns
    -------
    splits : dict
        Dictionary split: sorted list of indices.
    """
    labels = np.asarray(labels, dtype='i8')
    splits = {'train': [], 'val': [], 'test': []}
    for label in np.unique(labels):
        indices = rng.permutation(np.flatnonzero(labels == label))
        ntrain = int(round(fractions[0] * indices.size))
        nval = min(int(round(fractions[1] * indices.size)), indices.size - ntrain)
        splits['train'] += indices[:ntrain].tolist()
        splits['val'] += indices[ntrain:ntrain + nval].tolist()
        splits['test'] += indices[ntrain + nval:].tolist()
    return {name: sorted(indices) for name, indices in splits.items()}


def generate_toy_corpus(spec, n, seed, out_dir, mpicomm=None):
    """
    Generate a corpus of ``n`` toy videos, with categories drawn uniformly,
    written as frame archives '<out_dir>/<video_id>/<frame_index>.png', annotation *json*-lines 'annotations.jsonl'
    and manifest 'manifest.json', with stratified train / val / test splits 70 / 15 / 15.

    Parameters
    ----------
    spec : ToySpec
        Toy world.

    n : int
        Number of videos.

    seed : int
        Corpus seed.

    out_dir : str, Path
        Output directory.

    mpicomm : MPI communicator, default=None
        If provided, videos are rendered in parallel by the processes of ``mpicomm``.
        The manifest does not depend on the number of processes.

    Returns
    -------
    manifest_fn : str
        Path to the manifest.
    """
    rng = np.random.default_rng(seed)
    ncategories = len(spec.actions)
    categories = rng.integers(0, ncategories, size=n)
    episode_seeds = rng.integers(0, 2**31 - 1, size=n)
    object_ids = [rng.permutation(len(spec.shapes))[:spec.actions[category].arity].tolist() for category in categories]
    splits = stratified_splits(categories, rng)
    split_of = {index: name for name, indices in splits.items() for index in indices}
    video_ids = ['{}{:05d}'.format(spec.name, index) for index in range(n)]

    rank, size = (0, 1) if mpicomm is None else (mpicomm.rank, mpicomm.size)
    for index in range(rank, n, size):
        episode = generate_toy_video(spec, int(categories[index]), object_ids[index], int(episode_seeds[index]), video_id=video_ids[index])
        get_filetype('frames', os.path.join(out_dir, video_ids[index])).write(episode.frames)
    if mpicomm is not None:
        mpicomm.barrier()

    manifest_fn = os.path.join(out_dir, 'manifest.json')
    if rank == 0:
        records, episodes = [], []
        for index in range(n):
            action = spec.actions[categories[index]]
            records.append(AnnotationRecord(video_id=video_ids[index], action_group_id=action.group_id, action_category_id=action.category_id,
                                            template=action.template, placeholders=[spec.object_name(object_id) for object_id in object_ids[index]]))
            episodes.append({'id': video_ids[index], 'path': video_ids[index], 'category': action.category_id, 'group': action.group_id,
                             'split': split_of[index], 'seed': int(episode_seeds[index])})
        write_annotations(os.path.join(out_dir, 'annotations.jsonl'), records)
        counts = np.bincount(categories, minlength=ncategories)
        data = {'spec_hash': spec.hash(), 'seed': int(seed), 'n': int(n), 'spec': spec.to_dict(),
                'splits': {name: [video_ids[index] for index in indices] for name, indices in splits.items()},
                'episodes': episodes, 'category_counts': {int(category): int(count) for category, count in enumerate(counts)},
                'hierarchy': spec.hierarchy.to_dict(), 'templates': spec.templates, 'annotations': 'annotations.jsonl'}
        Manifest(data).write(manifest_fn)
        logger.info('Generated {:d} toy videos in {} (splits: {}).'.format(n, out_dir, {name: len(indices) for name, indices in splits.items()}))
    if mpicomm is not None:
        mpicomm.barrier()
    return manifest_fn
