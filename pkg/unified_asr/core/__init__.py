"""
Core business logic modules
"""

from .config_manager import ConfigManager
from .logger import Logger

__all__ = ['ConfigManager', 'Logger']
