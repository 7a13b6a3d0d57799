#!/usr/bin/env python3
"""
Entry point for retseg; same as the `retseg` console script.
"""

from retseg.cli import main

if __name__ == '__main__':
    main()
