#!/usr/bin/env python3
"""
Experiment runner for the obstacle AFEM toolkit
"""
import sys

from obstacle_afem.cli import main

if __name__ == "__main__":
    sys.exit(main())
