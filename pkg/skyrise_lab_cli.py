#!/usr/bin/env python3
import sys

from skyrise_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
