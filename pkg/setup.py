#!/usr/bin/env python

import os
from setuptools import find_packages, setup

version = '1.0.0'

classifiers = [
    "Development Status :: 4 - Beta",
    "Intended Audience :: Science/Research",
    "License :: OSI Approved :: BSD License",
    "Programming Language :: Python",
    "Programming Language :: Python :: 3",
    "Operating System :: OS Independent",
    "Topic :: Scientific/Engineering :: Medical Science Apps.",
    "Topic :: Scientific/Engineering :: Physics",
    "Environment :: Console",
]

root_dir = os.path.dirname(__file__)
if not root_dir:
    root_dir = '.'
long_desc = open(root_dir + '/README.rst').read()

setup(
    name='microvasc',
    version=version,
    license='BSD License',
    packages=find_packages(exclude=['microvasc.tests']),
    description=(
        'Coupled 3D-1D blood flow and oxygen transport with stochastic'
        ' growth of microvascular networks'
    ),
    classifiers=classifiers,
    long_description=long_desc,
    python_requires='>=3.9',
    install_requires=['Django>=3.2', 'numpy>=1.22', 'scipy>=1.12',
        'networkx>=2.6'],
    entry_points={
        'console_scripts': ['microvasc = microvasc.cli:main'],
    },
    test_suite='microvasc.tests',
)
