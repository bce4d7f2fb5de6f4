#!/usr/bin/env python
import codecs
import os
import re

from setuptools import setup, find_packages


ROOT = os.path.dirname(os.path.abspath(__file__))

requires = ['numpy>=1.17',
            'jmespath>=0.7.1,<2.0.0',
            'pyyaml>=5.3.1']


def find_version(*file_paths):
    with codecs.open(os.path.join(ROOT, *file_paths), 'r') as f:
        version_file = f.read()
    match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]",
                      version_file, re.M)
    if match:
        return match.group(1)
    raise RuntimeError("Unable to find version string.")


setup(
    name='dlorasim',
    version=find_version('dlorasim', '__init__.py'),
    description='Desk-scale simulator for federated LoRA fine-tuning '
                'over vehicular networks.',
    long_description=codecs.open(os.path.join(ROOT, 'README.rst'),
                                 encoding='utf-8').read(),
    author='The dlorasim Authors',
    scripts=[],
    packages=find_packages(exclude=['tests*', 'examples']),
    package_data={'dlorasim': ['data/*.yaml']},
    include_package_data=True,
    install_requires=requires,
    python_requires='>=3.7',
    entry_points={
        'console_scripts': ['dlorasim = dlorasim.cli:main'],
    },
    license="Apache License 2.0",
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering',
    ],
)
