"""
Interface definitions for loose coupling
"""

from .ui_interface import UIInterface

__all__ = ['UIInterface']
