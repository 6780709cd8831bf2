"""To implement a new file format, just subclass :class:`BaseFile`."""

import os
import glob
import json

import numpy as np

from . import utils
from .utils import BaseClass


class RegisteredFile(type(BaseClass)):

    """Metaclass registering :class:`BaseFile`-derived classes."""

    _registry = {}

    def __new__(meta, name, bases, class_dict):
        cls = super().__new__(meta, name, bases, class_dict)
        meta._registry[cls.name] = cls
        return cls


class BaseFile(BaseClass, metaclass=RegisteredFile):

    """Base class to handle a file, with path saved as :attr:`path`, and :meth:`read` and :meth:`write` methods."""

    name = 'base'

    def __init__(self, path):
        self.path = str(path)

    def read(self):
        raise NotImplementedError('Implement read method in {}'.format(self.__class__.__name__))

    def write(self):
        raise NotImplementedError('Implement write method in {}'.format(self.__class__.__name__))

    def _mkdir(self):
        utils.mkdir(os.path.dirname(self.path))


def get_filetype(filetype, path, *args, **kwargs):
    """
    Convenient function that returns a :class:`BaseFile` instance.

    Parameters
    ----------
    filetype : str, :class:`BaseFile`
        Name of :class:`BaseFile`, or :class:`BaseFile` instance.

    path : str
        Path to file.

    *args : tuple
        Other arguments for :class:`BaseFile`.

    **kwargs : dict
        Other optional arguments for :class:`BaseFile`.

    Returns
    -------
    file : BaseFile
    """
    if isinstance(filetype, BaseFile):
        return filetype
    try:
        cls = BaseFile._registry[filetype]
    except KeyError as exc:
        raise ValueError('Unknown file type {}; choose from {}'.format(filetype, list(BaseFile._registry))) from exc
    return cls(path, *args, **kwargs)


class TextFile(BaseFile):

    """Text file."""
    name = 'text'

    def read(self):
        """Read file."""
        with open(self.path, 'r') as file:
            return file.read()

    def write(self, txt):
        """Write file."""
        self._mkdir()
        with open(self.path, 'w') as file:
            file.write(txt)


class JsonFile(BaseFile):

    """*json* file (reports, manifests)."""
    name = 'json'

    def read(self):
        """Read file."""
        with open(self.path, 'r') as file:
            return json.load(file)

    def write(self, data):
        """Write file, casting numpy / torch types to base types."""
        self._mkdir()
        with open(self.path, 'w') as file:
            json.dump(utils.to_base_type(data), file, indent=2, sort_keys=False)


class JsonLinesFile(BaseFile):

    """*json*-lines file, one record per line (annotations)."""
    name = 'jsonl'

    def read(self):
        """Return list of (line number, raw line) for non-empty lines; parsing is left to the caller to report line numbers."""
        toret = []
        with open(self.path, 'r') as file:
            for iline, line in enumerate(file, start=1):
                if line.strip():
                    toret.append((iline, line))
        return toret

    def write(self, records):
        """Write list of dictionaries."""
        self._mkdir()
        with open(self.path, 'w') as file:
            for record in records:
                file.write(json.dumps(utils.to_base_type(record)) + '\n')


class VocabularyFile(BaseFile):

    """Vocabulary file: one token per line, line number = index."""
    name = 'vocabulary'

    def read(self):
        """Return list of tokens."""
        with open(self.path, 'r') as file:
            return [line.rstrip('\n') for line in file if line.rstrip('\n')]

    def write(self, tokens):
        """Write list of tokens."""
        self._mkdir()
        with open(self.path, 'w') as file:
            for token in tokens:
                file.write('{}\n'.format(token))


class FramesFile(BaseFile):

    """Frame archive: directory of lossless numbered images '<path>/<frame_index>.png'."""
    name = 'frames'

    def frame_paths(self):
        """Frame image paths, sorted by frame index."""
        paths = glob.glob(os.path.join(self.path, '*.png'))

        def index(path):
            return int(os.path.splitext(os.path.basename(path))[0])

        return sorted(paths, key=index)

    def read(self):
        """Return frames as a uint8 array of shape (T, H, W, 3)."""
        from PIL import Image
        paths = self.frame_paths()
        if not paths:
            raise ValueError('No frame found in {}'.format(self.path))
        frames = []
        for path in paths:
            with Image.open(path) as image:
                frames.append(np.asarray(image.convert('RGB'), dtype='u1'))
        return np.stack(frames, axis=0)

    def write(self, frames):
        """Write uint8 array of shape (T, H, W, 3)."""
        from PIL import Image
        utils.mkdir(self.path)
        for iframe, frame in enumerate(np.asarray(frames, dtype='u1')):
            Image.fromarray(np.ascontiguousarray(frame)).save(os.path.join(self.path, '{:d}.png'.format(iframe)))


class CheckpointFile(BaseFile):

    """Versioned torch archive (config echo + named parameter blocks)."""
    name = 'checkpoint'

    def read(self, map_location='cpu'):
        """Read archive."""
        import torch
        with utils.LoggingContext(level='warning'):
            return torch.load(self.path, map_location=map_location, weights_only=False)

    def write(self, archive):
        """Write archive."""
        import torch
        self._mkdir()
        torch.save(archive, self.path)


class ArrayFile(BaseFile):

    """Portable array file (numpy .npy, with shape header)."""
    name = 'array'

    def read(self):
        """Read array."""
        return np.load(self.path)

    def write(self, array):
        """Write array."""
        self._mkdir()
        np.save(self.path, np.asarray(array))


class ImageFile(BaseFile):

    """Static image file (PNG)."""
    name = 'image'

    def read(self):
        """Return image as uint8 array of shape (H, W, 3)."""
        from PIL import Image
        with Image.open(self.path) as image:
            return np.asarray(image.convert('RGB'), dtype='u1')

    def write(self, image):
        """Write image: uint8 (H, W, 3) array, or :class:`matplotlib.figure.Figure`."""
        self._mkdir()
        if hasattr(image, 'savefig'):
            image.savefig(self.path, bbox_inches='tight', dpi=100)
            return
        from PIL import Image
        image = np.asarray(image)
        if image.dtype != np.uint8:
            image = np.clip(np.rint(image * 255.), 0, 255).astype('u1')
        Image.fromarray(np.ascontiguousarray(image)).save(self.path)
