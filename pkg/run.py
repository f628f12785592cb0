#!/usr/bin/env python3
"""
tessellate - Command-Line Entry Point
"""

import os
import sys

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from app import create_app
from app.routes.commands import run_command
from config import get_config


def main(argv=None) -> int:
    parser = create_app()
    args = parser.parse_args(argv)
    config = get_config()
    return run_command(args, default_sampler=config.DIRECTION_SAMPLER, rejection_limit=config.REJECTION_LIMIT)


if __name__ == '__main__':
    sys.exit(main())
