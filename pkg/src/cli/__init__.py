"""Command-line interface for towerforge."""

from .main import main, cli_entry_point

__all__ = ['main', 'cli_entry_point']
