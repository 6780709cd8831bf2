"""
Configuration of runs.

A configuration is a flat *yaml* mapping (one ``key: value`` per line), with a fixed set of keys
(:attr:`Config._defaults`). Unknown keys are rejected.
The root of run directories is read from the 'FINEGRAIN_RUN_DIR' environment variable if defined, else './finegrain_runs'.
"""

import os
import re

import yaml

from . import utils
from .utils import BaseDict


class ConfigError(ValueError):

    """Unknown configuration key, or value that cannot be parsed."""


class YamlLoader(yaml.SafeLoader):
    """
    *yaml* loader that correctly parses numbers.
    Taken from https://stackoverflow.com/questions/30458977/yaml-loads-5e-6-as-string-and-not-a-number.
    """


# https://stackoverflow.com/questions/30458977/yaml-loads-5e-6-as-string-and-not-a-number
YamlLoader.add_implicit_resolver(u'tag:yaml.org,2002:float',
                                 re.compile(u'''^(?:
                                 [-+]?(?:[0-9][0-9_]*)\\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                                 |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                                 |\\.[0-9_]+(?:[eE][-+][0-9]+)?
                                 |[-+]?[0-9][0-9_]*(?::[0-5]?[0-9])+\\.[0-9_]*
                                 |[-+]?\\.(?:inf|Inf|INF)
                                 |\\.(?:nan|NaN|NAN))$''', re.X),
                                 list(u'-+0123456789.'))

YamlLoader.add_implicit_resolver('!none', re.compile('None$'), first='None')


def none_constructor(loader, node):
    return None


YamlLoader.add_constructor('!none', none_constructor)


def yaml_parser(string):
    """Parse string in *yaml* format."""
    return list(yaml.load_all(string, Loader=YamlLoader))


def parse_value(string):
    """Parse a single scalar (or flow sequence) written in *yaml*, e.g. '1e-3', 'None', '[1, 5]'."""
    try:
        values = yaml_parser(string)
    except yaml.YAMLError as exc:
        raise ConfigError('cannot parse value {}'.format(string)) from exc
    if len(values) != 1:
        raise ConfigError('cannot parse value {}'.format(string))
    return values[0]


def parse_overrides(overrides):
    """
    Parse a list of 'key=value' strings into a dictionary.

    >>> parse_overrides(['learning_rate=1e-3', 'task=fine_cls'])
    {'learning_rate': 0.001, 'task': 'fine_cls'}
    """
    toret = {}
    for override in overrides or []:
        if '=' not in override:
            raise ConfigError('override {} is not of the form key=value'.format(override))
        key, value = override.split('=', maxsplit=1)
        key = key.strip()
        if not key:
            raise ConfigError('override {} has an empty key'.format(override))
        toret[key] = parse_value(value)
    return toret


def default_run_root():
    """Root directory of run directories."""
    return os.getenv('FINEGRAIN_RUN_DIR', os.path.join(os.getcwd(), 'finegrain_runs'))


class Config(BaseDict):
    """
    Flat configuration with fixed keys.
    Subclasses define :attr:`_defaults`; values are cast to the type of the default (when not ``None``).

    >>> config = Config(config_fn='train.yaml', overrides=['learning_rate=1e-4'], seed=42)
    """
    _defaults = dict()

    def __init__(self, data=None, config_fn=None, overrides=None, **kwargs):
        """
        Initialize configuration.

        Parameters
        ----------
        data : dict, Config, default=None
            Initial values (on top of :attr:`_defaults`).

        config_fn : str, Path, default=None
            Path to *yaml* configuration file, applied after ``data``.

        overrides : list, dict, default=None
            List of 'key=value' strings or dictionary, applied after ``config_fn``.

        **kwargs : dict
            Last updates.
        """
        self.data = {name: value for name, value in self._defaults.items()}
        if isinstance(data, Config):
            data = dict(data.data)
        self.update(**(data or {}))
        if config_fn is not None:
            self.update(**self.read_file(config_fn))
        if not isinstance(overrides, dict):
            overrides = parse_overrides(overrides)
        self.update(**overrides)
        self.update(**kwargs)

    @staticmethod
    def read_file(fn):
        """Read flat *yaml* mapping from file ``fn``."""
        with open(fn, 'r') as file:
            documents = [doc for doc in yaml_parser(file.read()) if doc is not None]
        if not documents:
            return {}
        if len(documents) > 1 or not isinstance(documents[0], dict):
            raise ConfigError('configuration file {} must contain a single flat mapping'.format(fn))
        return documents[0]

    def __setitem__(self, name, value):
        if name not in self._defaults:
            raise ConfigError('Unknown argument {}; supports {}'.format(name, list(self._defaults)))
        default = self._defaults[name]
        if default is not None and value is not None and not isinstance(value, type(default)):
            try:
                if isinstance(default, bool):
                    if isinstance(value, str):
                        raise ValueError
                    value = bool(value)
                elif isinstance(default, (tuple, list)):
                    value = type(default)(value if utils.is_sequence(value) else [value])
                elif isinstance(default, int) and isinstance(value, float):
                    if not value.is_integer():
                        raise ValueError
                    value = int(value)
                elif isinstance(default, (int, float)) and isinstance(value, str):
                    raise ValueError
                else:
                    value = type(default)(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError('Cannot cast {} = {} to {}'.format(name, value, type(default).__name__)) from exc
        self.data[name] = value

    def to_dict(self):
        """View as a dictionary of base Python types."""
        return utils.dict_to_yaml(self.data)

    def write(self, fn):
        """Write resolved configuration to *yaml* file ``fn``."""
        utils.mkdir(os.path.dirname(fn))
        with open(fn, 'w') as file:
            yaml.safe_dump(self.to_dict(), file, default_flow_style=None, sort_keys=False)

    def __repr__(self):
        return '{}(\n{}\n)'.format(self.__class__.__name__, ',\n'.join(['{}: {}'.format(name, value) for name, value in self.data.items()]))
