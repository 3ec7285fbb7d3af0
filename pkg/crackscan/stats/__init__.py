"""
Scan statistics and multiple testing
"""
