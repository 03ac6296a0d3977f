import os
from setuptools import setup, find_packages

VERSION = '0.1'


def get_long_description():
    with open(
        os.path.join(os.path.dirname(os.path.abspath(__file__)), "README.md"),
        encoding="utf8",
    ) as fp:
        return fp.read()


setup(
    name='hedvol',
    version=VERSION,
    description='Hedonic price models with AR random effects and stochastic volatility',
    long_description=get_long_description(),
    long_description_content_type="text/markdown",

    license='AGPL',

    packages=find_packages(exclude=["tests"]),
    scripts=["bin/hedvol_recovery_study.py"],
    entry_points='''
    [console_scripts]
    hedvol=hedvol.cli:cli
    ''',

    install_requires=[
        'click',
        'numpy',
        'pandas',
        'scipy>=1.6',
        'statsmodels',
    ],
    extras_require={
        "test": [
            "coverage",
            "pycodestyle",
        ],
    },
    python_requires=">=3.10",
)
