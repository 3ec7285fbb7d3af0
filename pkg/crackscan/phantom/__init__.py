"""
Synthetic crack phantoms
"""
