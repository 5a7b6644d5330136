#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""setup.py file of the `mikecoco` package."""

from pathlib import Path

from setuptools import find_packages, setup

import mikecoco


def read(*filenames, **kwargs) -> str:  # noqa: ANN002, ANN003
    """Read multiple files into a string.

    Returns
    -------
        str: The contents of the files joined by the specified separator.
    """
    encoding = kwargs.get('encoding', 'utf-8')
    sep = kwargs.get('sep', '\n')
    buf = []
    for filename in filenames:
        with Path(filename).open(encoding=encoding) as f:
            buf.append(f.read())
    return sep.join(buf)


long_description = read('README.md')

setup(
    name='mikecoco',
    version=mikecoco.__version__,
    license='BSD License',
    author='The mikecoco developers',
    tests_require=['pytest'],
    description=(
        'Domain-generalizable vehicle re-identification with frequency '
        'filtering, multiple expert autoencoders and prompt learning'
    ),
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(),
    include_package_data=True,
    package_data={'mikecoco': ['settings/*.json']},
    platforms='any',
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.22.0, <2.0',
        'scipy>=1.7.0, <2.0',
        'pandas>=1.4.0, <3.0',
        'colorama>=0.4.0, <0.5.0',
        'jsonschema>=4.22.0, <5.0',
        'torch>=2.1, <3.0',
        'Pillow>=9.0, <12.0',
        'matplotlib>=3.5, <4.0',
    ],
    extras_require={
        'development': [
            'codespell',
            'mypy',
            'numpydoc',
            'pandas-stubs',
            'pytest',
            'pytest-cov',
            'pytest-xdist',
            'ruff==0.7.0',
            'sphinx',
            'sphinx-autoapi',
            'sphinx-rtd-theme',
            'types-colorama',
            'types-jsonschema',
        ],
    },
    classifiers=[
        'Programming Language :: Python',
        'Development Status :: 3 - Alpha',
        'Natural Language :: English',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: Microsoft :: Windows',
        'Operating System :: MacOS :: MacOS X',
        'Operating System :: Unix',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],
    entry_points={
        'console_scripts': [
            'mikecoco = mikecoco.tools.mikecoco_cli:main',
        ]
    },
)
