"""
Main application entry point for occuflow.
This module loads the environment and hands the command line to the CLI.
"""

import sys

from dotenv import load_dotenv

from ui.cli.occuflow import OccuflowCli


def main() -> int:
    """Main entry point for the application."""
    load_dotenv()
    return OccuflowCli().run()


if __name__ == "__main__":
    sys.exit(main())
