#!/usr/bin/env python3
"""
Setup script for the HRIS channel estimation toolkit
"""

from pathlib import Path

from setuptools import setup


def read_requirements():
    """Runtime requirements, without the test tooling"""
    lines = Path(__file__).with_name("requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith(("#", "pytest"))]


setup(
    name="hris-channel-estimation",
    version="1.0.0",
    description="Uplink channel estimation and HRIS parameter optimization for multi-user MIMO",
    python_requires=">=3.9",
    py_modules=[
        "channel_model",
        "config",
        "estimators",
        "experiments",
        "hris_model",
        "main",
        "optimizer",
        "pilot_protocol",
        "storage",
        "utils",
    ],
    install_requires=read_requirements(),
    extras_require={"test": ["pytest>=7.4"]},
    entry_points={"console_scripts": ["hris=main:cli"]},
)
