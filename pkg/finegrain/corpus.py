"""
Annotations at all granularities: parsing, template expansion and simplification,
tokenization, vocabularies and the coarse / fine label hierarchy.
"""

import os
import re
import json
import logging
from collections import Counter

from . import utils
from .utils import BaseClass
from .io import get_filetype


logger = logging.getLogger('corpus')


PAD, BOS, EOS, SOMETHING = 0, 1, 2, 3
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SOMETHING_TOKEN = '<pad>', '<bos>', '<eos>', '[something]'
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SOMETHING_TOKEN)

_slot_pattern = re.compile(r'\[something\]', flags=re.IGNORECASE)


class AnnotationError(ValueError):

    """Malformed annotation line or record violating annotation invariants."""

    def __init__(self, message, line=None, video_id=None):
        self.line = line
        self.video_id = video_id
        prefix = []
        if line is not None: prefix.append('line {:d}'.format(line))
        if video_id is not None: prefix.append('video {}'.format(video_id))
        if prefix:
            message = '{}: {}'.format(', '.join(prefix), message)
        super(AnnotationError, self).__init__(message)


def count_slots(template):
    """Number of '[something]' slots in ``template``."""
    return len(_slot_pattern.findall(template))


def expand_template(template, placeholders):
    """
    Replace the i-th '[something]' slot of ``template`` by the i-th placeholder, left to right.

    >>> expand_template('Holding [something] in front of [something]', ['cap', 'shirt'])
    'Holding cap in front of shirt'
    """
    parts = _slot_pattern.split(template)
    placeholders = list(placeholders)
    if len(parts) - 1 != len(placeholders):
        raise ValueError('Template "{}" has {:d} slots, but {:d} placeholders are provided'.format(template, len(parts) - 1, len(placeholders)))
    text = parts[0]
    for placeholder, part in zip(placeholders, parts[1:]):
        text += ' {} {}'.format(placeholder, part)
    return ' '.join(text.split())


def _strip_word(word):
    word = word.lower().replace('’', "'")
    word = re.sub(r"'s$", '', word)
    word = word.replace("'", '')
    return re.sub(r'[^0-9a-z]', '', word)


def simplify_placeholder(placeholder):
    """
    Keep the head word of an object description: the final token, lowercase,
    stripped from punctuation and possessive suffix.

    >>> simplify_placeholder("a men's short sleeve shirt")
    'shirt'
    """
    words = [_strip_word(word) for word in placeholder.split()]
    words = [word for word in words if word]
    if not words:
        return SOMETHING_TOKEN
    return words[-1]


def tokenize_caption(caption):
    """
    Lowercase, remove apostrophes, strip other punctuation and split on whitespace;
    '[something]' is kept as a single token.

    >>> tokenize_caption("Putting [something] on [something]")
    ['putting', '[something]', 'on', '[something]']
    """
    tokens = []
    parts = _slot_pattern.split(caption)
    for ipart, part in enumerate(parts):
        if ipart > 0:
            tokens.append(SOMETHING_TOKEN)
        part = part.lower().replace('’', '').replace("'", '')
        part = re.sub(r'[^\w\s]|_', ' ', part)
        tokens += part.split()
    return tokens


class LabelHierarchy(BaseClass):
    """
    Map from fine-grained action categories to coarse-grained action groups.

    Attributes
    ----------
    group_of : list
        ``group_of[category_id]`` is the group of ``category_id``.

    group_count : int
        Number of groups G.

    category_count : int
        Number of categories K.
    """
    def __init__(self, group_of, group_count=None):
        self.group_of = [int(group) for group in group_of]
        if group_count is None:
            group_count = max(self.group_of) + 1 if self.group_of else 0
        self.group_count = int(group_count)
        self.category_count = len(self.group_of)
        for category, group in enumerate(self.group_of):
            if not 0 <= group < self.group_count:
                raise ValueError('Category {:d} is mapped to group {:d}, outside [0, {:d})'.format(category, group, self.group_count))

    @classmethod
    def identity(cls, count):
        """Hierarchy with one category per group."""
        return cls(list(range(count)))

    @classmethod
    def from_records(cls, records, category_count=None, group_count=None):
        """Infer hierarchy from annotation records; inconsistent records raise :class:`AnnotationError`."""
        group_of = {}
        for record in records:
            group = group_of.setdefault(record.action_category_id, record.action_group_id)
            if group != record.action_group_id:
                raise AnnotationError('category {:d} is mapped to groups {:d} and {:d}'.format(record.action_category_id, group, record.action_group_id), video_id=record.video_id)
        if category_count is None:
            category_count = max(group_of) + 1 if group_of else 0
        missing = [category for category in range(category_count) if category not in group_of]
        if missing:
            raise ValueError('Categories {} have no annotation, cannot infer their group'.format(missing))
        return cls([group_of[category] for category in range(category_count)], group_count=group_count)

    def members(self, group_id):
        """List of categories of group ``group_id``."""
        return [category for category, group in enumerate(self.group_of) if group == group_id]

    def to_dict(self):
        return {'group_of': list(self.group_of), 'group_count': self.group_count}

    @classmethod
    def from_dict(cls, state):
        return cls(state['group_of'], group_count=state.get('group_count', None))

    def __eq__(self, other):
        return isinstance(other, LabelHierarchy) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return '{}(group_count={:d}, category_count={:d})'.format(self.__class__.__name__, self.group_count, self.category_count)


def coarse_of_fine(category_id, hierarchy):
    """Return the action group of action category ``category_id``."""
    if not 0 <= category_id < hierarchy.category_count:
        raise ValueError('Category {} is outside [0, {:d})'.format(category_id, hierarchy.category_count))
    return hierarchy.group_of[category_id]


class AnnotationRecord(BaseClass):
    """
    One video's labels at all granularities.

    Attributes
    ----------
    video_id : str
        Video identifier.

    action_group_id : int
        Coarse-grained action group.

    action_category_id : int
        Fine-grained action category.

    template : str
        Action template with '[something]' slots.

    placeholders : list
        Object descriptions, one per slot.

    full_caption : str
        Template expanded with the placeholders.

    simplified_caption : str, default=None
        Template expanded with simplified placeholders; computed when not provided.
    """
    _defaults = dict(video_id='', action_group_id=0, action_category_id=0, template='', placeholders=list(), full_caption='', simplified_caption=None)

    def __init__(self, **kwargs):
        for name, value in self._defaults.items():
            setattr(self, name, value if not isinstance(value, list) else list(value))
        for name, value in kwargs.items():
            if name not in self._defaults:
                raise ValueError('Unknown argument {}; supports {}'.format(name, list(self._defaults)))
            setattr(self, name, value)
        self.video_id = str(self.video_id)
        self.action_group_id, self.action_category_id = int(self.action_group_id), int(self.action_category_id)
        self.placeholders = [str(placeholder) for placeholder in self.placeholders]
        if not self.full_caption:
            self.check()
            self.full_caption = expand_template(self.template, self.placeholders)
        if self.simplified_caption is None:
            self.check()
            self.simplified_caption = expand_template(self.template, [simplify_placeholder(placeholder) for placeholder in self.placeholders])

    def check(self, hierarchy=None):
        """Check annotation invariants, optionally against ``hierarchy``."""
        nslots = count_slots(self.template)
        if nslots != len(self.placeholders):
            raise AnnotationError('template "{}" has {:d} slots but {:d} placeholders are given'.format(self.template, nslots, len(self.placeholders)), video_id=self.video_id)
        if hierarchy is not None:
            if not 0 <= self.action_group_id < hierarchy.group_count:
                raise AnnotationError('group {:d} outside [0, {:d})'.format(self.action_group_id, hierarchy.group_count), video_id=self.video_id)
            if coarse_of_fine(self.action_category_id, hierarchy) != self.action_group_id:
                raise AnnotationError('category {:d} does not belong to group {:d}'.format(self.action_category_id, self.action_group_id), video_id=self.video_id)

    @classmethod
    def from_json(cls, state):
        """Build record from the annotation *json* schema (id, group, category, template, placeholders, caption)."""
        return cls(video_id=state['id'], action_group_id=state['group'], action_category_id=state['category'],
                   template=state['template'], placeholders=state['placeholders'], full_caption=state['caption'],
                   simplified_caption=state.get('simplified_caption', None))

    def to_json(self):
        return {'id': self.video_id, 'group': self.action_group_id, 'category': self.action_category_id,
                'template': self.template, 'placeholders': list(self.placeholders), 'caption': self.full_caption,
                'simplified_caption': self.simplified_caption}

    def caption(self, task='caption_full'):
        """Caption used as target by captioning task ``task``."""
        if task == 'caption_simplified':
            return self.simplified_caption
        if task == 'caption_full':
            return self.full_caption
        raise ValueError('Task {} has no caption'.format(task))

    def __repr__(self):
        return '{}({})'.format(self.__class__.__name__, ', '.join('{}={!r}'.format(name, getattr(self, name)) for name in self._defaults))


def simplify_caption(record):
    """Template of ``record`` expanded with simplified placeholders."""
    return expand_template(record.template, [simplify_placeholder(placeholder) for placeholder in record.placeholders])


def caption_for_task(record, task):
    """Caption of ``record`` used as target by captioning task ``task`` ('caption_full' or 'caption_simplified')."""
    return record.caption(task=task)


_required_fields = ['id', 'group', 'category', 'template', 'placeholders', 'caption']


def load_annotations(path, hierarchy=None):
    """
    Load annotation *json*-lines file.

    Parameters
    ----------
    path : str, Path
        One *json* record per line with fields id, group, category, template, placeholders, caption.

    hierarchy : LabelHierarchy, default=None
        If provided, records are checked against it.

    Returns
    -------
    records : list
        List of :class:`AnnotationRecord`, in file order.
    """
    records = []
    for iline, line in get_filetype('jsonl', path).read():
        try:
            state = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotationError('malformed json ({})'.format(exc.msg), line=iline) from exc
        if not isinstance(state, dict):
            raise AnnotationError('record is not a json object', line=iline)
        missing = [name for name in _required_fields if name not in state]
        if missing:
            raise AnnotationError('missing fields {}'.format(missing), line=iline)
        if count_slots(state['template']) != len(state['placeholders']):
            raise AnnotationError('template "{}" has {:d} slots but {:d} placeholders are given'.format(state['template'], count_slots(state['template']), len(state['placeholders'])), line=iline, video_id=state['id'])
        record = AnnotationRecord.from_json(state)
        record.check(hierarchy=hierarchy)
        records.append(record)
    logger.debug('Loaded {:d} annotations from {}'.format(len(records), path))
    return records


def write_annotations(path, records):
    """Write annotation records to *json*-lines file."""
    get_filetype('jsonl', path).write([record.to_json() for record in records])


class Vocabulary(BaseClass):
    """
    Token <-> index map with special tokens at reserved indices 0 - 3 (PAD, BOS, EOS, '[something]').
    Once frozen, unknown tokens are mapped to '[something]'.
    """
    def __init__(self, tokens=()):
        self.index_to_token = list(SPECIAL_TOKENS)
        self.token_to_index = {token: index for index, token in enumerate(self.index_to_token)}
        self.frozen = False
        for token in tokens:
            self.add(token)

    def add(self, token):
        """Add token (no-op if already present); raises :class:`ValueError` if frozen."""
        if self.frozen:
            raise ValueError('Cannot add token {} to frozen vocabulary'.format(token))
        if token not in self.token_to_index:
            self.token_to_index[token] = len(self.index_to_token)
            self.index_to_token.append(token)
        return self.token_to_index[token]

    def freeze(self):
        """Freeze vocabulary."""
        self.frozen = True
        return self

    def index(self, token):
        """Index of ``token``; unknown tokens map to '[something]' once frozen."""
        try:
            return self.token_to_index[token]
        except KeyError:
            if self.frozen:
                return SOMETHING
            raise

    def token(self, index):
        """Token at ``index``."""
        return self.index_to_token[int(index)]

    @property
    def tokens(self):
        """Non-special tokens, in index order."""
        return self.index_to_token[len(SPECIAL_TOKENS):]

    def __len__(self):
        return len(self.index_to_token)

    def __contains__(self, token):
        return token in self.token_to_index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.index_to_token == other.index_to_token

    def write(self, fn):
        """Write vocabulary file: one token per line, line number = index."""
        get_filetype('vocabulary', fn).write(self.index_to_token)

    @classmethod
    def read(cls, fn):
        """Read vocabulary file; the result is frozen."""
        tokens = get_filetype('vocabulary', fn).read()
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError('Vocabulary file {} must start with {}'.format(fn, SPECIAL_TOKENS))
        return cls(tokens[len(SPECIAL_TOKENS):]).freeze()

    def __repr__(self):
        return '{}(size={:d}, frozen={})'.format(self.__class__.__name__, len(self), self.frozen)


def build_vocabulary(captions, min_occurrences=6):
    """
    Build a frozen vocabulary from tokenized captions.

    Tokens occurring less than ``min_occurrences`` times are left out, and hence folded into '[something]'.
    Indices are assigned by descending count, ties broken by lexicographic order.

    Parameters
    ----------
    captions : list
        List of token lists.

    min_occurrences : int, default=6
        Minimum count to keep a token.

    Returns
    -------
    vocab : Vocabulary
    """
    counts = Counter(token for caption in captions for token in caption if token not in SPECIAL_TOKENS)
    kept = sorted((token for token, count in counts.items() if count >= min_occurrences), key=lambda token: (-counts[token], token))
    vocab = Vocabulary(kept).freeze()
    logger.info('Built vocabulary of {:d} tokens ({:d} distinct tokens folded into {})'.format(len(vocab), len(counts) - len(kept), SOMETHING_TOKEN))
    return vocab


class TokenSequence(BaseClass):
    """
    Encoded caption: BOS, content tokens, EOS, then PAD up to the storage length.

    Attributes
    ----------
    indices : list
        Vocabulary indices.
    """
    def __init__(self, indices):
        self.indices = [int(index) for index in indices]

    def check(self):
        """Check the sequence begins with BOS, contains exactly one EOS, and no PAD before it."""
        if not self.indices or self.indices[0] != BOS:
            raise ValueError('Token sequence must begin with BOS: {}'.format(self.indices))
        if self.indices.count(EOS) != 1:
            raise ValueError('Token sequence must contain exactly one EOS: {}'.format(self.indices))
        if PAD in self.indices[:self.eos_position]:
            raise ValueError('Token sequence has PAD before EOS: {}'.format(self.indices))
        return self

    @property
    def eos_position(self):
        """Position of (first) EOS."""
        return self.indices.index(EOS)

    @property
    def content(self):
        """Indices strictly between BOS and EOS."""
        indices = self.indices[1:]
        if EOS in indices:
            indices = indices[:indices.index(EOS)]
        return indices

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __eq__(self, other):
        return isinstance(other, TokenSequence) and self.indices == other.indices

    def __repr__(self):
        return '{}({})'.format(self.__class__.__name__, self.indices)


def encode_tokens(tokens, vocab, max_len=14):
    """
    Encode tokens into a :class:`TokenSequence` of storage length ``max_len + 2``:
    BOS, up to ``max_len`` token indices (truncated beyond), EOS, PAD.
    """
    if not vocab.frozen:
        raise ValueError('Vocabulary must be frozen before encoding')
    indices = [BOS] + [vocab.index(token) for token in list(tokens)[:max_len]] + [EOS]
    indices += [PAD] * (max_len + 2 - len(indices))
    return TokenSequence(indices)


def decode_tokens(sequence, vocab):
    """Content tokens (strings) of ``sequence``, stopping at EOS."""
    if not isinstance(sequence, TokenSequence):
        sequence = TokenSequence(sequence)
    return [vocab.token(index) for index in sequence.content]


class Manifest(BaseClass):
    """
    Corpus manifest: splits, per-episode frame archive paths and labels, hierarchy and templates.

    The *json* schema is {spec_hash, seed, n, splits: {split: [video_id]}, episodes: [{id, path, category, group, split}],
    category_counts, hierarchy: {group_of, group_count}, templates: {category: template}, annotations: path}.
    """
    def __init__(self, data, path=None):
        self.data = dict(data)
        self.path = None if path is None else str(path)
        self.dirname = os.path.dirname(os.path.abspath(self.path)) if self.path is not None else os.getcwd()
        self._episodes = {episode['id']: episode for episode in self.data.get('episodes', [])}
        self._records = None

    @classmethod
    def read(cls, path):
        """Read manifest *json* file."""
        return cls(get_filetype('json', path).read(), path=path)

    def write(self, path=None):
        """Write manifest *json* file."""
        if path is not None:
            self.path = str(path)
            self.dirname = os.path.dirname(os.path.abspath(self.path))
        get_filetype('json', self.path).write(self.data)

    @property
    def splits(self):
        return self.data.get('splits', {})

    @property
    def hierarchy(self):
        return LabelHierarchy.from_dict(self.data['hierarchy'])

    @property
    def templates(self):
        return {int(category): template for category, template in self.data.get('templates', {}).items()}

    def ids(self, split=None):
        """Video identifiers of ``split`` (all, in manifest order, if ``None``)."""
        if split is None:
            return [episode['id'] for episode in self.data.get('episodes', [])]
        if split not in self.splits:
            raise ValueError('Unknown split {}; choose from {}'.format(split, list(self.splits)))
        return list(self.splits[split])

    def episode(self, video_id):
        return self._episodes[video_id]

    def frames_path(self, video_id):
        """Absolute path to the frame archive of ``video_id``."""
        return os.path.join(self.dirname, self._episodes[video_id]['path'])

    def read_frames(self, video_id):
        """Frames of ``video_id``, uint8 array of shape (T, H, W, 3)."""
        return get_filetype('frames', self.frames_path(video_id)).read()

    @property
    def records(self):
        """Dictionary video_id: :class:`AnnotationRecord`."""
        if self._records is None:
            path = os.path.join(self.dirname, self.data['annotations'])
            self._records = {record.video_id: record for record in load_annotations(path)}
        return self._records

    def labels(self, split=None, target='fine'):
        """List of category (``target='fine'``) or group (``target='coarse'``) labels of ``split``."""
        key = {'fine': 'category', 'coarse': 'group'}[target]
        return [self._episodes[video_id][key] for video_id in self.ids(split)]

    def per_class(self, split=None, target='fine'):
        """Dictionary label: list of video identifiers of ``split``."""
        toret = {}
        for video_id, label in zip(self.ids(split), self.labels(split, target=target)):
            toret.setdefault(label, []).append(video_id)
        return dict(sorted(toret.items()))

    def __len__(self):
        return len(self._episodes)

    def __repr__(self):
        return '{}(size={:d}, splits={}, path={})'.format(self.__class__.__name__, len(self), {name: len(ids) for name, ids in self.splits.items()}, self.path)
