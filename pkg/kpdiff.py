#!/usr/bin/env python
"""
kpdiff - Main entry point
"""
from src.cli import cli

if __name__ == '__main__':
    cli()
