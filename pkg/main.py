#!/usr/bin/env python3
"""
Unified ASR - Main Entry Point
Streaming and full-context speech recognition with one model, trained and
analysed on a synthetic corpus.
"""

import sys
import os

# Add the current directory to Python path for module imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def main():
    """Main entry point"""
    try:
        from unified_asr.app import cli_dispatch
        from unified_asr.ui.rich_ui import RichUI

    except ImportError as e:
        print(f"Error importing required modules: {e}")
        print("Make sure you have installed the required dependencies:")
        print("pip install -r requirements.txt")
        sys.exit(2)

    try:
        sys.exit(cli_dispatch(sys.argv[1:], RichUI()))

    except Exception as e:
        print(f"Critical error: {e}")
        sys.exit(2)

if __name__ == "__main__":
    main()
