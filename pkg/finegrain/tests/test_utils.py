import os
import logging

import numpy as np
import torch

from finegrain import utils
from finegrain.utils import setup_logging, LoggingContext, BaseClass, hash_state, hash_json, to_base_type, set_seed


base_dir = '_tests'


def test_logging():

    fn = os.path.join(base_dir, 'test_logging.log')
    setup_logging('info', filename=fn)

    class Model(BaseClass):
        pass

    Model.log_info('info message')
    with LoggingContext('warning'):
        Model.log_info('hidden message')
        Model.log_warning('warning message')
    logging.getLogger('test').info('module message')
    for handler in logging.root.handlers:
        handler.flush()
    with open(fn, 'r') as file:
        txt = file.read()
    assert 'info message' in txt and 'warning message' in txt and 'module message' in txt
    assert 'hidden message' not in txt
    setup_logging()


def test_hash():

    module = torch.nn.Linear(3, 2)
    digest = hash_state(module)
    assert digest == hash_state(module.state_dict())
    with torch.no_grad():
        module.bias[0] += 1.
    assert hash_state(module) != digest
    assert hash_state([np.zeros(3)]) != hash_state([np.zeros(3, dtype='f4')])
    assert hash_json({'b': 1, 'a': np.float64(2.)}) == hash_json({'a': 2., 'b': 1})


def test_base_type():

    state = {'a': np.arange(3), 'b': torch.tensor(1.5), 'c': (np.int64(2), np.bool_(True)), 3: None}
    assert to_base_type(state) == {'a': [0, 1, 2], 'b': 1.5, 'c': [2, True], 3: None}


def test_seed():

    set_seed(42)
    first = torch.rand(4), np.random.uniform(size=4)
    set_seed(42)
    second = torch.rand(4), np.random.uniform(size=4)
    assert torch.equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


def test_mkdir():

    dirname = os.path.join(base_dir, 'a', 'b')
    utils.mkdir(dirname)
    utils.mkdir(dirname)
    assert os.path.isdir(dirname)


if __name__ == '__main__':

    test_logging()
    test_hash()
    test_base_type()
    test_seed()
    test_mkdir()
