#!/usr/bin/env python3
"""
ergolab setup script

Usage:
    pip install .
    pip install -e .[test]
"""

from pathlib import Path

from setuptools import setup

here = Path(__file__).parent

setup(
    name='ergolab',
    version='0.1.0',
    description='Weighted ergodic averages, random measures and quenched homogenization experiments',
    long_description=(here / 'DESIGN.md').read_text(encoding='utf-8') if (here / 'DESIGN.md').exists() else '',
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    packages=['modules'],
    py_modules=['ergolab'],
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'tomli>=1.1; python_version<"3.11"',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': ['ergolab=ergolab:main'],
    },
)
