"""
Packaging for the gated syn-to-real crossing prediction project.
Installs the `src` package and the `s2r` command; run `python test_setup.py`
afterwards to verify the environment.
"""

import os

from setuptools import setup


def read_requirements():
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "requirements.txt")
    with open(path, "r") as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


setup(
    name="gated-s2r-pcp",
    version="0.1.0",
    description="Gated synthetic-to-real knowledge transfer for pedestrian crossing prediction",
    packages=["src"],
    python_requires=">=3.8",
    install_requires=read_requirements(),
    entry_points={"console_scripts": ["s2r=src.main:main"]},
)
