"""
Per-cube geometric features
"""
