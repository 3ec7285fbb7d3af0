"""
Hessian-based crack segmentation: multi-scale filters and percolation
"""
