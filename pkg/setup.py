#!/usr/bin/env python3
from setuptools import setup, find_packages

setup(
    name="toolsift",
    version="0.1.0",
    description="Two-stage tool retrieval for LLM function calling",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    package_data={"toolsift": ["prompts/*.txt"]},
    install_requires=[
        "numpy>=1.24",
        "pydantic>=2.0.0",
        "structlog>=23.1.0",
        "openai>=1.0.0",
        "google-generativeai>=0.3.0",
        "anthropic>=0.12.0",
    ],
    entry_points={
        'console_scripts': [
            'toolsift=toolsift.cli:main',
        ],
    },
    python_requires=">=3.10",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
