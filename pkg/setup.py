#!/usr/bin/env python
# -*- coding: utf-8 -*-

from setuptools import setup

setup(
    name='maskspeech',
    version='0.1',
    description='Masked audio token modeling with semantic distillation for text-to-speech',
    long_description="""\
maskspeech trains and samples non-autoregressive text-to-speech models
that predict masked residual vector quantization tokens in parallel,
with an optional semantic knowledge distillation head.  A synthetic
speech world with exact oracles makes every experiment runnable on a
CPU.""",
    keywords='text-to-speech masked generative transformer audio tokens',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Multimedia :: Sound/Audio :: Speech',
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python :: 3',
    ],
    license='BSD',
    packages=['maskspeech'],
    python_requires='>=3.8',
    install_requires=['numpy>=1.20.0', 'scipy>=1.6.0', 'numba>=0.53.0',
                      'torch>=2.0.0', 'tqdm>=4.60.0'],
    entry_points={
        'console_scripts': ['maskspeech=maskspeech.cli:main'],
    },
    test_suite='pytest',
    tests_require=['pytest>=7.0.0'],
    include_package_data=True,
    zip_safe=False
)
