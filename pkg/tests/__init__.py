"""
Test suite for unified-asr
"""
