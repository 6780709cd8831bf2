import os

import pytest

from finegrain.config import Config, ConfigError, parse_overrides, parse_value, yaml_parser
from finegrain.training import TrainConfig


base_dir = '_tests'


class ToyConfig(Config):

    _defaults = dict(learning_rate=1e-3, epochs=20, task='fine_cls', shots=[1, 5], flag=False, path=None)


def test_parse():

    assert parse_value('1e-3') == 1e-3
    assert parse_value('None') is None
    assert parse_value('[1, 5]') == [1, 5]
    assert parse_overrides(['learning_rate=1e-4', 'task=caption_full', 'path=a=b']) == {'learning_rate': 1e-4, 'task': 'caption_full', 'path': 'a=b'}
    assert yaml_parser('a: 5e-6\nb: None')[0] == {'a': 5e-6, 'b': None}
    with pytest.raises(ConfigError):
        parse_overrides(['learning_rate'])
    with pytest.raises(ConfigError):
        parse_overrides(['=1'])


def test_config():

    fn = os.path.join(base_dir, 'test_config.yaml')
    os.makedirs(base_dir, exist_ok=True)
    with open(fn, 'w') as file:
        file.write('learning_rate: 1e-2\nepochs: 5\n')
    config = ToyConfig(config_fn=fn, overrides=['epochs=7', 'shots=10'], flag=True)
    assert config['learning_rate'] == 1e-2
    assert config['epochs'] == 7
    assert config['shots'] == [10]
    assert config['flag'] is True
    config['epochs'] = 3.
    assert config['epochs'] == 3 and isinstance(config['epochs'], int)
    config.write(os.path.join(base_dir, 'test_config_resolved.yaml'))
    assert ToyConfig(config_fn=os.path.join(base_dir, 'test_config_resolved.yaml')) == config

    with pytest.raises(ConfigError):
        ToyConfig(overrides=['unknown=1'])
    with pytest.raises(ConfigError):
        ToyConfig(overrides=['epochs=3.5'])
    with pytest.raises(ConfigError):
        ToyConfig(overrides=['learning_rate=abc'])


def test_train_config():

    config = TrainConfig(overrides=['task=caption_full', 'lambda_end=0.1'])
    assert config['lambda_start'] == 1. and config['max_len'] == 14
    with pytest.raises(ConfigError):
        TrainConfig(task='unknown')
    with pytest.raises(ConfigError):
        TrainConfig(lambda_start=0.1, lambda_end=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(task='caption_full', architecture='frame_average')
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.)


if __name__ == '__main__':

    test_parse()
    test_config()
    test_train_config()
