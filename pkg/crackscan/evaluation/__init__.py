"""
Scoring against ground truth
"""
