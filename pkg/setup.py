import os
import sys
from setuptools import setup, find_packages


package_basename = 'finegrain'
package_dir = os.path.join(os.path.dirname(__file__), package_basename)
sys.path.insert(0, package_dir)
import _version
version = _version.__version__


setup(name=package_basename,
      version=version,
      author='',
      author_email='',
      description='Joint fine-grained video classification and captioning, with granularity transfer benchmarks',
      license='BSD3',
      url='',
      install_requires=['pyyaml', 'mpi4py', 'numpy', 'torch', 'Pillow', 'matplotlib', 'scipy', 'nltk'],
      extras_require={'test': ['pytest'], 'doc': ['sphinx', 'sphinx-rtd-theme']},
      packages=find_packages(),
      entry_points={'console_scripts': ['finegrain = finegrain.__main__:main'],
    })
