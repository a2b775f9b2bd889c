"""
User interface implementations
"""

from .rich_ui import RichUI

__all__ = ['RichUI']
