"""
Terminal UI for crackscan
"""
