#!/usr/bin/env python3
"""
This module allows running the toolsift package as a script/module.
For example: python -m toolsift
"""

from .cli import main

if __name__ == "__main__":
    main()
