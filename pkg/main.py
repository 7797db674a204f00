#!/usr/bin/env python3
"""
aad-evalkit - Leakage-aware evaluation of auditory attention decoding
Main application entry point.
"""

import sys
from pathlib import Path

# Add the project root to the path so `src` imports without installing
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
