"""
Test suite for crackscan
"""
