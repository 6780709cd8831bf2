import os

import numpy as np
import pytest

from finegrain.io import get_filetype, BaseFile


base_dir = '_tests'


def test_registry():

    for name in ['text', 'json', 'jsonl', 'vocabulary', 'frames', 'checkpoint', 'array', 'image']:
        assert isinstance(get_filetype(name, 'path'), BaseFile)
    with pytest.raises(ValueError):
        get_filetype('fits', 'path')


def test_files():

    fn = os.path.join(base_dir, 'io', 'report.json')
    get_filetype('json', fn).write({'accuracy': np.float64(0.5), 'counts': np.arange(2)})
    assert get_filetype('json', fn).read() == {'accuracy': 0.5, 'counts': [0, 1]}

    fn = os.path.join(base_dir, 'io', 'annotations.jsonl')
    get_filetype('jsonl', fn).write([{'id': 'a'}, {'id': 'b'}])
    lines = get_filetype('jsonl', fn).read()
    assert [iline for iline, line in lines] == [1, 2]

    rng = np.random.default_rng(42)
    frames = rng.integers(0, 256, size=(12, 8, 10, 3), dtype='u1')
    dirname = os.path.join(base_dir, 'io', 'frames')
    get_filetype('frames', dirname).write(frames)
    assert np.array_equal(get_filetype('frames', dirname).read(), frames)

    fn = os.path.join(base_dir, 'io', 'image.png')
    get_filetype('image', fn).write(np.ones((4, 6, 3)) * 0.5)
    image = get_filetype('image', fn).read()
    assert image.shape == (4, 6, 3) and np.all(image == 128)


if __name__ == '__main__':

    test_registry()
    test_files()
