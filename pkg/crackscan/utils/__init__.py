"""
Utility functions for crackscan
"""
