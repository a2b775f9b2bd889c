"""
Unified ASR - Modular Architecture
Unified streaming and non-streaming speech recognition with a contrastive
bridge between the two encoder modes.
"""

__version__ = "1.0.0"
__author__ = "Unified ASR"

from .core.config_manager import ConfigManager
from .interfaces.ui_interface import UIInterface
from .ui.rich_ui import RichUI

__all__ = [
    'ConfigManager',
    'UIInterface',
    'RichUI'
]
